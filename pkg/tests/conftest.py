import numpy as np
import pytest

from adscan.model import GeoImage, LabelRaster
from adscan.synth import default_spec, generate_scene


@pytest.fixture(scope="session")
def scene(tmp_path_factory):
    """The default synthetic scene, generated once per session."""
    out = tmp_path_factory.mktemp("scene")
    truth = generate_scene(default_spec(), out)
    return out, truth


def make_image(image_id="img0", width=100, height=100, lat=53.4, lon=-2.98):
    from datetime import datetime, timezone

    return GeoImage(image_id, lat, lon, datetime(2020, 1, 1, tzinfo=timezone.utc), width, height, "r.pgm", "i.pgm")


def raster_with_blocks(width, height, blocks, cls=1):
    """blocks: (x, y, w, h) rectangles set to ``cls``."""
    a = np.zeros((height, width), dtype=np.uint8)
    for x, y, w, h in blocks:
        a[y : y + h, x : x + w] = cls
    return LabelRaster(a)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
