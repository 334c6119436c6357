"""Command-line driver: one subcommand per pipeline stage, all writing into one run directory."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .dedup import compute_descriptors, deduplicate, read_descriptors, write_descriptors
from .extract import ExtractConfig, extract_ads, fill_polygon
from .geostat import (
    class_ious,
    detection_counts,
    exposure_chi_squared,
    exposure_table,
    join_ads_to_areas,
    join_images_to_areas,
)
from .ingest import (
    load_ads,
    load_areas,
    load_label_raster,
    load_lexicon,
    load_manifest,
    load_predictions,
    load_texts,
    read_netpbm,
    write_ads,
    write_netpbm,
)
from .label import apply_labels, category_counts, evaluate, evaluate_balanced
from .model import CATEGORIES, GROUP_KEYS, DedupConfig
from .rectify import CROP_SIZE, rectify_ad
from .report import (
    emit_geojson,
    emit_svg_bars,
    read_exposure_csv,
    write_chi_squared_long,
    write_chi_squared_table,
    write_confusion_csv,
    write_exposure_csv,
    write_prf1_csv,
)
from .synth import default_spec, generate_scene, load_spec

log = logging.getLogger("adscan")

RUN_MANIFEST = "run-manifest.json"
EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2


class StageError(Exception):
    """Input-level failure inside a stage; exits with status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise StageError(message)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


class Run:
    """The run directory and its manifest of stage records."""

    def __init__(self, out):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.path = self.out / RUN_MANIFEST

    def load(self) -> dict:
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                return json.load(fh)
        return {"tool": "adscan", "version": __version__, "stages": {}}

    def stage(self, name: str):
        return self.load()["stages"].get(name)

    def record(self, name: str, rec: dict) -> None:
        doc = self.load()
        rec = dict(rec)
        rec["finished_at"] = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        doc["stages"][name] = rec
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, self.path)


def _inputs(**paths) -> dict:
    return {k: {"path": str(p), "sha256": sha256_file(p)} for k, p in paths.items() if p is not None}


def _outputs(run: Run, *names) -> dict:
    return {n: sha256_file(run.out / n) for n in names}


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise StageError(f"missing input file {p} ({what})")
    return p


def _default_input(run: Run, given, *candidates) -> Path:
    if given:
        return _require(given, "input")
    for c in candidates:
        if (run.out / c).exists():
            return run.out / c
    raise StageError(f"no input given and none of {', '.join(candidates)} found in {run.out}")


def _upstream_input(run: Run, given, stage: str, key: str, what: str) -> Path:
    if given:
        return _require(given, what)
    rec = run.stage(stage)
    if rec and key in rec.get("inputs", {}):
        return _require(rec["inputs"][key]["path"], what)
    raise StageError(f"--{key} is required ({what})")


# --- stages ---------------------------------------------------------------------


def cmd_extract(args, run: Run) -> dict:
    manifest = _require(args.manifest, "image manifest")
    cfg = ExtractConfig(billboard_class=args.billboard_class, min_pixels=args.min_pixels)
    images = load_manifest(manifest)
    ads = []
    if args.write_masks:
        (run.out / "masks").mkdir(exist_ok=True)
    for img in images:
        raster = load_label_raster(_require(img.raster_ref, f"label raster of {img.id}"))
        found = extract_ads(raster, img, cfg)
        if args.write_masks:
            for ad in found:
                mask = fill_polygon(ad.hull, img.width, img.height)
                write_netpbm(run.out / "masks" / f"{ad.ad_id}.pgm", mask.astype("uint8") * 255)
        ads.extend(found)
    write_ads(run.out / "ads.jsonl", ads)
    config = {"billboard_class": cfg.billboard_class, "min_pixels": cfg.min_pixels}
    return {
        "inputs": _inputs(manifest=manifest),
        "config": config,
        "config_hash": config_hash(config),
        "counts": {"images": len(images), "ads": len(ads)},
        "outputs": _outputs(run, "ads.jsonl"),
    }


def cmd_rectify(args, run: Run) -> dict:
    ads_path = _default_input(run, args.ads, "ads.jsonl")
    manifest = _upstream_input(run, args.manifest, "extract", "manifest", "image manifest")
    images = {img.id: img for img in load_manifest(manifest)}
    ads = load_ads(ads_path)
    (run.out / "crops").mkdir(exist_ok=True)
    out = []
    cache = {}
    for ad in ads:
        img = images.get(ad.source_image)
        if img is None or not img.image_ref:
            raise StageError(f"no color/gray image for {ad.source_image}")
        if ad.source_image not in cache:
            cache.clear()
            cache[ad.source_image] = read_netpbm(_require(img.image_ref, f"image of {img.id}"))
        pixels = cache[ad.source_image]
        crop = rectify_ad(pixels, ad, args.size)
        rel = f"crops/{ad.ad_id}.{'ppm' if crop.ndim == 3 else 'pgm'}"
        write_netpbm(run.out / rel, crop)
        out.append(ad.with_(crop_ref=rel))
    write_ads(run.out / "rectified.jsonl", out)
    config = {"size": args.size}
    return {
        "inputs": _inputs(ads=ads_path, manifest=manifest),
        "config": config,
        "config_hash": config_hash(config),
        "counts": {"ads": len(out)},
        "outputs": _outputs(run, "rectified.jsonl"),
    }


def cmd_dedup(args, run: Run) -> dict:
    ads_path = _default_input(run, args.ads, "rectified.jsonl", "ads.jsonl")
    ads = load_ads(ads_path)
    cfg = DedupConfig(tau=args.tau, distance_m=args.distance, ratio=args.ratio, strict=args.strict)
    descs = {}
    for ad in ads:
        if args.descriptors:
            p = Path(args.descriptors) / f"{ad.ad_id}.desc"
            descs[ad.ad_id] = read_descriptors(_require(p, f"descriptor sidecar of {ad.ad_id}"))
        elif ad.crop_ref:
            descs[ad.ad_id] = compute_descriptors(read_netpbm(_require(ads_path.parent / ad.crop_ref, "crop")))
        else:
            raise StageError(f"ad {ad.ad_id} has no crop; run rectify first or pass --descriptors")
    if args.write_descriptors:
        (run.out / "descriptors").mkdir(exist_ok=True)
        for ad_id, d in descs.items():
            write_descriptors(run.out / "descriptors" / f"{ad_id}.desc", d)
    survivors, discarded, graph = deduplicate(ads, descs, cfg)
    write_ads(run.out / "survivors.jsonl", survivors)
    with open(run.out / "duplicates.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ad_id", "representative"])
        for k, v in discarded.items():
            w.writerow([k, v])
    with open(run.out / "edges.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ad_a", "ad_b", "match_count"])
        for (a, b), n in graph.edges.items():
            w.writerow([a, b, n])
    with open(run.out / "components.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component_size", "components"])
        for size, n in graph.size_histogram().items():
            w.writerow([size, n])
    config = {"tau": cfg.tau, "distance_m": cfg.distance_m, "ratio": cfg.ratio, "strict": cfg.strict,
              "descriptors": "sidecar" if args.descriptors else "sift"}
    return {
        "inputs": _inputs(ads=ads_path),
        "config": config,
        "config_hash": config_hash(config),
        "counts": {"ads": len(ads), "survivors": len(survivors), "edges": len(graph.edges),
                   "components": len(graph.components)},
        "outputs": _outputs(run, "survivors.jsonl", "duplicates.csv"),
    }


def cmd_label(args, run: Run) -> dict:
    ads_path = _default_input(run, args.ads, "survivors.jsonl")
    ads = load_ads(ads_path)
    if args.predictions:
        preds = load_predictions(_require(args.predictions, "predictions CSV"))
        labeled, missing = apply_labels(ads, predictions=preds)
        config = {"source": "predictions"}
        inputs = _inputs(ads=ads_path, predictions=Path(args.predictions))
    elif args.texts and args.lexicon:
        texts = load_texts(_require(args.texts, "texts CSV"))
        lex = load_lexicon(_require(args.lexicon, "lexicon directory"))
        labeled, missing = apply_labels(ads, texts=texts, lexicons=lex)
        config = {"source": "keywords", "lexicon": {l.category.value: sorted(l.phrases) for l in lex}}
        inputs = _inputs(ads=ads_path, texts=Path(args.texts))
    else:
        raise StageError("pass --predictions, or --texts together with --lexicon")
    write_ads(run.out / "labeled.jsonl", labeled)
    counts = {c.value: n for c, n in category_counts(labeled).items()}
    counts["missing"] = len(missing)
    return {
        "inputs": inputs,
        "config": config,
        "config_hash": config_hash(config),
        "counts": counts,
        "outputs": _outputs(run, "labeled.jsonl"),
    }


def _write_assignments(path, mapping: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "area"])
        for k in sorted(mapping):
            w.writerow([k, mapping[k] or ""])


def _read_assignments(path) -> dict:
    with open(path, encoding="utf-8", newline="") as fh:
        return {r["id"]: (r["area"] or None) for r in csv.DictReader(fh)}


def cmd_join(args, run: Run) -> dict:
    ads_path = _default_input(run, args.ads, "labeled.jsonl")
    manifest = _upstream_input(run, args.manifest, "extract", "manifest", "image manifest")
    areas_path = _require(args.areas, "areas GeoJSON")
    ads = load_ads(ads_path)
    images = load_manifest(manifest)
    areas = load_areas(areas_path)
    ad_map = join_ads_to_areas(ads, areas)
    img_map = join_images_to_areas(images, areas)
    _write_assignments(run.out / "ad_areas.csv", ad_map)
    _write_assignments(run.out / "image_areas.csv", img_map)
    config = {}
    return {
        "inputs": _inputs(ads=ads_path, manifest=manifest, areas=areas_path),
        "config": config,
        "config_hash": config_hash({"ads": sha256_file(ads_path)}),
        "counts": {
            "ads": len(ads),
            "ads_unassigned": sum(v is None for v in ad_map.values()),
            "images": len(images),
            "images_unassigned": sum(v is None for v in img_map.values()),
        },
        "outputs": _outputs(run, "ad_areas.csv", "image_areas.csv"),
    }


def _check_recorded(run: Run, rec: dict, stage: str, force: bool) -> None:
    stale = [k for k, v in rec["inputs"].items() if not Path(v["path"]).exists() or sha256_file(v["path"]) != v["sha256"]]
    stale += [k for k, v in rec.get("outputs", {}).items() if not (run.out / k).exists() or sha256_file(run.out / k) != v]
    if stale and not force:
        raise StageError(
            f"artifacts changed since {stage} ({', '.join(stale)}); config hash mismatch, rerun {stage} or pass --force"
        )
    if stale:
        log.warning("mixing artifacts from different runs (%s) because --force was given", ", ".join(stale))


def cmd_analyze(args, run: Run) -> dict:
    rec = run.stage("join")
    if rec is None:
        raise StageError("join required before analyze")
    _check_recorded(run, rec, "join", args.force)
    ads = load_ads(rec["inputs"]["ads"]["path"])
    images = load_manifest(rec["inputs"]["manifest"]["path"])
    areas = load_areas(rec["inputs"]["areas"]["path"])
    img_map = _read_assignments(run.out / "image_areas.csv")
    keys = args.group_by or list(GROUP_KEYS)
    results_table = {}
    results_long = {}
    outputs = []
    for key in keys:
        table = exposure_table(images, ads, img_map, areas, key)
        name = f"exposure_{key}.csv"
        write_exposure_csv(run.out / name, table)
        outputs.append(name)
        if len(table.rows) < 2:
            log.warning("grouping %s has fewer than two groups; no chi-squared tests", key)
            continue
        for c in CATEGORIES:
            for basis in ("ads", "images"):
                if sum((r.ads if basis == "ads" else r.images_with)[c] for r in table.rows) == 0:
                    continue
                res = exposure_chi_squared(table, c, basis)
                results_long[(c, key, basis)] = res
                if basis == "ads":
                    results_table[(c, key)] = res
    write_chi_squared_table(run.out / "chi_squared.csv", results_table)
    write_chi_squared_long(run.out / "chi_squared_long.csv", results_long)
    outputs += ["chi_squared.csv", "chi_squared_long.csv"]
    config = {"group_by": keys, "join": rec["config_hash"]}
    return {
        "inputs": {},
        "config": config,
        "config_hash": config_hash(config),
        "counts": {"tests": len(results_long)},
        "outputs": _outputs(run, *outputs),
    }


def cmd_report(args, run: Run) -> dict:
    rec = run.stage("analyze")
    if rec is None:
        raise StageError("analyze required before report")
    join = run.stage("join")
    _check_recorded(run, join, "join", args.force)
    ads = load_ads(join["inputs"]["ads"]["path"])
    ad_map = _read_assignments(run.out / "ad_areas.csv")
    emit_geojson(run.out / "ads.geojson", ads, ad_map)
    fig_dir = run.out / "figures"
    fig_dir.mkdir(exist_ok=True)
    outputs = ["ads.geojson"]
    for key in rec["config"]["group_by"]:
        table = read_exposure_csv(run.out / f"exposure_{key}.csv", key)
        emit_svg_bars(fig_dir / f"exposure_{key}.svg", table)
        outputs.append(f"figures/exposure_{key}.svg")
        if not args.no_png:
            from .plotting import exposure_figure

            exposure_figure(table, fig_dir / f"exposure_{key}.png")
    if not args.no_png:
        from .plotting import category_totals_figure

        category_totals_figure(category_counts(ads), fig_dir / "category_totals.png")
    return {
        "inputs": {},
        "config": {"png": not args.no_png},
        "config_hash": config_hash({"analyze": rec["config_hash"]}),
        "counts": {"ads": len(ads)},
        "outputs": _outputs(run, *outputs),
    }


def cmd_synth(args, run: Run) -> dict:
    spec = load_spec(_require(args.spec, "synth spec")) if args.spec else default_spec(args.seed)
    if args.spec and args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    truth = generate_scene(spec, run.out)
    return {
        "inputs": _inputs(spec=Path(args.spec)) if args.spec else {},
        "config": {"seed": spec.seed},
        "config_hash": config_hash(spec.to_dict()),
        "counts": {"frames": spec.frames, "regions": len(truth["regions"]),
                   "extractable": sum(1 for r in truth["regions"] if r["ad_id"])},
        "outputs": _outputs(run, "manifest.jsonl", "truth.json"),
    }


def cmd_eval(args, run: Run) -> dict:
    counts = {}
    outputs = []
    inputs = {}
    if args.predictions or args.truth:
        if not (args.predictions and args.truth):
            raise StageError("classification eval needs both --predictions and --truth")
        preds = load_predictions(_require(args.predictions, "predictions CSV"))
        truth = load_predictions(_require(args.truth, "truth CSV"))
        report, cm = evaluate(preds, truth)
        write_prf1_csv(run.out / "prf1.csv", report)
        write_confusion_csv(run.out / "confusion.csv", cm)
        outputs += ["prf1.csv", "confusion.csv"]
        counts.update(evaluated=cm.total, weighted_f1=round(report.f1, 4))
        inputs.update(_inputs(predictions=Path(args.predictions), truth=Path(args.truth)))
        if args.balanced:
            scores = evaluate_balanced(preds, truth, n_subsets=args.subsets, seed=args.seed)
            with open(run.out / "prf1_balanced.csv", "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["category", "precision", "recall", "f1"])
                for c, s in scores.items():
                    w.writerow([c.value, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}"])
            outputs.append("prf1_balanced.csv")
    if args.pred_manifest or args.truth_manifest:
        if not (args.pred_manifest and args.truth_manifest):
            raise StageError("segmentation eval needs both --pred-manifest and --truth-manifest")
        cfg = ExtractConfig(billboard_class=args.billboard_class, min_pixels=args.min_pixels)
        pred_imgs = {i.id: i for i in load_manifest(_require(args.pred_manifest, "prediction manifest"))}
        truth_imgs = load_manifest(_require(args.truth_manifest, "truth manifest"))
        rows = []
        tot = [0, 0, 0]
        ious = []
        for t in truth_imgs:
            p = pred_imgs.get(t.id)
            if p is None:
                raise StageError(f"image {t.id} missing from prediction manifest")
            tr = load_label_raster(t.raster_ref)
            pr = load_label_raster(p.raster_ref)
            per = class_ious(pr.classes, tr.classes, [cfg.billboard_class])
            if per:
                ious.append(per[cfg.billboard_class])
            # predictions are extracted ads (already thresholded); truth is filtered by detection_counts
            masks = {}
            for name, raster, img, c in (("pred", pr, p, cfg), ("truth", tr, t, ExtractConfig(cfg.billboard_class, 1))):
                found = extract_ads(raster, img, c)
                masks[name] = [fill_polygon(a.hull, img.width, img.height) for a in found]
            dc = detection_counts(masks["pred"], masks["truth"], cfg.min_pixels, args.iou_match)
            tot = [tot[0] + dc.matched, tot[1] + dc.false_positives, tot[2] + dc.missed]
            rows.append([t.id, f"{per.get(cfg.billboard_class, float('nan')):.4f}", dc.matched, dc.false_positives, dc.missed])
        with open(run.out / "segmentation.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image", "billboard_iou", "matched", "false_positives", "missed"])
            w.writerows(rows)
            mean = sum(ious) / len(ious) if ious else float("nan")
            w.writerow(["ALL", f"{mean:.4f}", *tot])
        outputs.append("segmentation.csv")
        counts.update(matched=tot[0], false_positives=tot[1], missed=tot[2])
        inputs.update(_inputs(pred_manifest=Path(args.pred_manifest), truth_manifest=Path(args.truth_manifest)))
    if not outputs:
        raise StageError("eval needs --predictions/--truth and/or --pred-manifest/--truth-manifest")
    config = {"balanced": args.balanced, "iou_match": args.iou_match, "min_pixels": args.min_pixels}
    return {"inputs": inputs, "config": config, "config_hash": config_hash(config), "counts": counts,
            "outputs": _outputs(run, *outputs)}


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", default=os.environ.get("ADSCAN_OUT", "run"),
                        help="run directory (default: $ADSCAN_OUT or ./run)")
    common.add_argument("--force", action="store_true", help="allow mixing artifacts from different runs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="adscan", description="Extract, deduplicate, label and analyse advertisements in street-level imagery.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("extract", parents=[common], help="label rasters -> ads.jsonl")
    s.add_argument("--manifest", required=True)
    s.add_argument("--billboard-class", type=int, default=1)
    s.add_argument("--min-pixels", type=int, default=2000)
    s.add_argument("--write-masks", action="store_true", help="write per-ad 0/255 PGM masks")

    s = sub.add_parser("rectify", parents=[common], help="frontal-view crops for each ad")
    s.add_argument("--ads")
    s.add_argument("--manifest")
    s.add_argument("--size", type=int, default=CROP_SIZE)

    s = sub.add_parser("dedup", parents=[common], help="collapse repeated recordings of the same ad")
    s.add_argument("--ads")
    s.add_argument("--tau", type=int, default=60)
    s.add_argument("--distance", type=float, default=10.0, help="meters")
    s.add_argument("--ratio", type=float, default=0.75)
    s.add_argument("--strict", action="store_true", help="require more than tau matches")
    s.add_argument("--descriptors", help="directory of <ad_id>.desc sidecars")
    s.add_argument("--write-descriptors", action="store_true")

    s = sub.add_parser("label", parents=[common], help="assign content categories")
    s.add_argument("--ads")
    s.add_argument("--predictions")
    s.add_argument("--texts")
    s.add_argument("--lexicon")

    s = sub.add_parser("join", parents=[common], help="assign ads and images to areas")
    s.add_argument("--ads")
    s.add_argument("--manifest")
    s.add_argument("--areas", required=True)

    s = sub.add_parser("analyze", parents=[common], help="exposure tables and chi-squared tests")
    s.add_argument("--group-by", action="append", choices=GROUP_KEYS)

    s = sub.add_parser("report", parents=[common], help="GeoJSON, SVG and PNG figures")
    s.add_argument("--no-png", action="store_true")

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic scene with ground truth")
    s.add_argument("--spec")
    s.add_argument("--seed", type=int)

    s = sub.add_parser("eval", parents=[common], help="classification and segmentation metrics")
    s.add_argument("--predictions")
    s.add_argument("--truth")
    s.add_argument("--balanced", action="store_true")
    s.add_argument("--subsets", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pred-manifest")
    s.add_argument("--truth-manifest")
    s.add_argument("--billboard-class", type=int, default=1)
    s.add_argument("--min-pixels", type=int, default=2000)
    s.add_argument("--iou-match", type=float, default=0.5)
    return p


COMMANDS = {
    "extract": cmd_extract,
    "rectify": cmd_rectify,
    "dedup": cmd_dedup,
    "label": cmd_label,
    "join": cmd_join,
    "analyze": cmd_analyze,
    "report": cmd_report,
    "synth": cmd_synth,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except StageError as exc:
        print(f"adscan: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synth" and args.seed is None and not args.spec:
        args.seed = 7
    run = Run(args.out)
    try:
        rec = COMMANDS[args.command](args, run)
    except (StageError, OSError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"{args.command}: {msg}", file=sys.stderr)
        run.record(args.command, {"status": "error", "error": str(msg), "argv": argv})
        return EXIT_INPUT
    except Exception as exc:  # invariant violations and bugs
        log.exception("internal error")
        run.record(args.command, {"status": "error", "error": f"internal: {exc!r}", "argv": argv})
        return EXIT_INTERNAL
    rec["status"] = "ok"
    rec["argv"] = argv
    run.record(args.command, rec)
    log.info("%s: %s", args.command, rec["counts"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
