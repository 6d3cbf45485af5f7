import io

import numpy as np
import pytest
from scipy import stats

from torusmatch.sampling import PointCloud, read_cloud_csv, sample_uniform, write_cloud_csv


def test_determinism():
    a = sample_uniform(500, 123, "X", 4)
    b = sample_uniform(500, 123, "X", 4)
    assert np.array_equal(a.points, b.points)
    assert (a.seed, a.stream_tag, a.trial_index, a.n) == (123, "X", 4, 500)


def test_keys_give_distinct_streams():
    base = sample_uniform(200, 9, "X", 0).points
    for other in (sample_uniform(200, 9, "Y", 0), sample_uniform(200, 9, "X", 1),
                  sample_uniform(200, 10, "X", 0)):
        assert not np.any(np.all(other.points == base, axis=1))


def test_x_and_y_have_no_coincident_pair():
    X = sample_uniform(2000, 77, "X").points
    Y = sample_uniform(2000, 77, "Y").points
    common = set(map(tuple, X)) & set(map(tuple, Y))
    assert not common


def test_coordinate_means():
    for seed in (0, 1, 2):
        P = sample_uniform(10_000, seed).points
        assert np.all((P.mean(axis=0) >= 0.47) & (P.mean(axis=0) <= 0.53))


def test_points_in_unit_square():
    P = sample_uniform(10_000, 5).points
    assert np.all(P >= 0) and np.all(P < 1)


def _ks_ok(P):
    return all(stats.kstest(P[:, c], "uniform").pvalue > 1e-3 for c in range(2))


def test_kolmogorov_smirnov_uniformity():
    # statistical check, one rerun on a fresh key allowed
    assert _ks_ok(sample_uniform(10_000, 314).points) or _ks_ok(sample_uniform(10_000, 315).points)


def test_rejects_bad_args():
    with pytest.raises(ValueError):
        sample_uniform(0, 1)
    with pytest.raises(ValueError):
        sample_uniform(3, 1, "Z")
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.5, 1.0]]), 0, "X", 0)


def test_csv_roundtrip_and_format():
    c = sample_uniform(25, 2**63 - 1, "Y", 7)
    buf = io.StringIO()
    write_cloud_csv(c, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "n,seed,tag,trial"
    assert lines[1] == f"25,{2**63 - 1},Y,7"
    assert lines[2] == "x1,x2"
    assert len(lines) == 28
    back = read_cloud_csv(io.StringIO(buf.getvalue()))
    assert np.array_equal(back.points, c.points)
    assert (back.seed, back.stream_tag, back.trial_index) == (c.seed, "Y", 7)


def test_as_points():
    c = sample_uniform(3, 0)
    pts = c.as_points()
    assert len(pts) == 3 == len(c)
    assert pts[1].x1 == c.points[1, 0]
