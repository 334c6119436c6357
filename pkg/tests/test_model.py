import numpy as np
import pytest

from adscan.model import (
    AdCategory,
    AdInstance,
    AreaUnit,
    ChiSquareResult,
    DedupConfig,
    LabelRaster,
    ManifestError,
    group_of,
    is_strictly_convex_ccw,
    stars_for,
    validate_manifest,
)

from conftest import make_image

SQUARE = ((0, 0), (9, 0), (9, 9), (0, 9))
RING = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0))


def _ad(**kw):
    base = dict(ad_id="a", source_image="img", hull=SQUARE, component_pixels=100, filled_pixels=100,
                bbox=(0, 0, 9, 9), lat=53.4, lon=-2.98)
    base.update(kw)
    return AdInstance(**base)


def test_category_parse_is_case_insensitive():
    assert AdCategory.parse("Food") is AdCategory.FOOD
    assert AdCategory.parse(" GAMBLING ") is AdCategory.GAMBLING
    assert AdCategory.ALCOHOL.render() == "alcohol"


def test_category_parse_rejects_unknown():
    with pytest.raises(ValueError, match="unknown category 'fod'"):
        AdCategory.parse("fod")


def test_manifest_validation_collects_all_problems():
    imgs = [make_image("a"), make_image("a"), make_image("b", lat=91.0), make_image("c", width=0)]
    with pytest.raises(ManifestError) as err:
        validate_manifest(imgs)
    fields = [p[1] for p in err.value.problems]
    assert fields == ["id", "lat", "width"]


def test_label_raster_is_read_only():
    r = LabelRaster(np.zeros((3, 4), dtype=np.uint8))
    assert (r.width, r.height) == (4, 3)
    with pytest.raises(ValueError):
        r.classes[0, 0] = 1


def test_ad_instance_invariants():
    _ad()
    with pytest.raises(ValueError, match="counter-clockwise"):
        _ad(hull=tuple(reversed(SQUARE)))
    with pytest.raises(ValueError, match="filled_pixels"):
        _ad(filled_pixels=50)
    with pytest.raises(ValueError, match="bbox"):
        _ad(bbox=(0, 0, 5, 5))


def test_ad_instance_dict_round_trip():
    ad = _ad(category=AdCategory.FOOD, crop_ref="crops/a.pgm")
    assert AdInstance.from_dict(ad.to_dict()) == ad


def test_convexity_rejects_collinear_vertex():
    assert is_strictly_convex_ccw(SQUARE)
    assert not is_strictly_convex_ccw(((0, 0), (5, 0), (9, 0), (9, 9), (0, 9)))


def test_dedup_config_validation():
    assert DedupConfig().tau == 60
    with pytest.raises(ValueError):
        DedupConfig(tau=0)
    with pytest.raises(ValueError):
        DedupConfig(ratio=1.5)


def test_area_unit_group_consistency():
    a = AreaUnit("E01", ((RING,),), 3, 2, "2b")
    assert group_of(a, "decile") == 3 and group_of(a, "oac_supergroup") == 2 and group_of(a, "oac_group") == "2b"
    with pytest.raises(ValueError, match="group 2b inconsistent with supergroup 5"):
        AreaUnit("E01", ((RING,),), 3, 5, "2b")
    with pytest.raises(ValueError, match="decile"):
        AreaUnit("E01", ((RING,),), 11, 2, "2b")
    with pytest.raises(ValueError, match="not closed"):
        AreaUnit("E01", ((RING[:-1] + ((0.5, 0.5),),),), 3, 2, "2b")


def test_star_thresholds():
    assert [stars_for(p) for p in (0.0005, 0.005, 0.03, 0.05, 0.5)] == ["***", "**", "*", "", ""]


def test_chi_square_result_checks_stars():
    ChiSquareResult(10.0, 1, 0.0016, "**")
    with pytest.raises(ValueError):
        ChiSquareResult(10.0, 1, 0.0016, "***")
