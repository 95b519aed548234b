import numpy as np
import pytest

from sevi.geodata import DetectionCounts, SamplingPoint, project_to_metric
from sevi.synth import generate_brand_corpus, generate_city

CITY_SEED = 20251015


@pytest.fixture(scope="session")
def city_dir(tmp_path_factory):
    """The bundled synthetic city, generated once per session."""
    path = tmp_path_factory.mktemp("city")
    generate_city(path, seed=CITY_SEED)
    return path


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """The 50-image offline brand-decoding corpus."""
    path = tmp_path_factory.mktemp("corpus")
    generate_brand_corpus(path, seed=7, n_images=50)
    return path


def make_point(pid="p0", x=0.0, y=0.0, segment_id="s0", order=0, **counts):
    """A sampling point placed directly in metric coordinates."""
    return SamplingPoint(id=pid, lon=0.0, lat=0.0, x=x, y=y, segment_id=segment_id,
                         order_along_segment=order, detections=DetectionCounts(**counts))


def metric_offset(lon0, lat0, dx, dy):
    """lon/lat whose projection sits (dx, dy) meters from that of (lon0, lat0)."""
    from sevi.geodata import metric_to_lonlat
    x0, y0 = project_to_metric(lon0, lat0)
    return metric_to_lonlat(x0 + dx, y0 + dy)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
