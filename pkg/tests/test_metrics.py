import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from acdepth import metrics

depth = st.floats(0.1, 80.0, allow_nan=False)


def oracle(pred, gt):
    """Scalar-loop evaluation of the seven report metrics."""
    n = len(gt)
    ab = sq = se = sl = 0.0
    hits = [0, 0, 0]
    for d, g in zip(pred, gt):
        ab += abs(d - g) / g
        sq += (d - g) ** 2 / g
        se += (d - g) ** 2
        sl += (math.log(d) - math.log(g)) ** 2
        r = max(d / g, g / d)
        for k in range(3):
            hits[k] += r < 1.25 ** (k + 1)
    return [ab / n, sq / n, math.sqrt(se / n), 100 * hits[0] / n, math.sqrt(sl / n),
            100 * hits[1] / n, 100 * hits[2] / n]


def as_list(rep):
    return [rep.absRel, rep.sqRel, rep.RMSE, rep.delta1, rep.RMSE_log, rep.delta2, rep.delta3]


def test_matches_oracle_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(100):
        gt = rng.uniform(0.5, 60, 16)
        pred = gt * np.exp(rng.normal(scale=0.3, size=16))
        got = as_list(metrics.evaluate(pred, gt))
        assert np.allclose(got, oracle(pred.tolist(), gt.tolist()), rtol=0, atol=1e-12)


def test_examples():
    r = metrics.evaluate(np.array([2.0, 4.0]), np.array([1.0, 4.0]))
    assert (r.absRel, r.sqRel, r.delta1) == (0.5, 0.5, 50.0)
    assert r.RMSE == pytest.approx(math.sqrt(0.5), rel=1e-15)
    gt = np.linspace(1, 20, 30)
    same = metrics.evaluate(gt, gt)
    assert (same.absRel, same.sqRel, same.RMSE, same.RMSE_log, same.delta1) == (0, 0, 0, 0, 100)
    up = metrics.evaluate(1.2 * gt, gt)
    assert up.absRel == pytest.approx(0.2, rel=1e-12) and up.delta1 == 100


def test_evaluate_errors():
    with pytest.raises(ValueError):
        metrics.evaluate(np.ones(3), np.ones(3), mask=np.zeros(3, bool))
    with pytest.raises(ValueError):
        metrics.evaluate(np.array([0.0, 1.0]), np.ones(2))


def test_clamp_range():
    pred, gt, mask = metrics.clamp_range(np.array([200.0, 5.0, 1.0]), np.array([10.0, 0.0, 90.0]))
    assert mask.tolist() == [True, False, False]
    assert pred[0] == 80.0
    _, _, all_in = metrics.clamp_range(np.ones(4), np.full(4, 3.0))
    assert all_in.all()
    with pytest.raises(ValueError):
        metrics.clamp_range(np.ones(2), np.ones(2), lo=5, hi=5)


def test_median_examples():
    assert metrics.lower_median([4, 1, 3, 2]) == 2
    assert metrics.lower_median([5, 1, 3]) == 3
    with pytest.raises(ValueError):
        metrics.lower_median([])
    gt = np.array([2.0, 4.0, 6.0])
    assert metrics.median_scale(np.array([1.0, 2.0, 3.0]), gt)[1] == 2.0
    assert metrics.median_scale(gt, gt)[1] == 1.0
    scaled, f = metrics.median_scale(2 * gt, gt)
    assert f == 0.5 and metrics.evaluate(scaled, gt).absRel == 0
    with pytest.raises(ValueError):
        metrics.median_scale(gt, gt, mask=np.zeros(3, bool))


@settings(max_examples=60)
@given(arrays(np.float64, 12, elements=depth), arrays(np.float64, 12, elements=depth), st.randoms())
def test_permutation_invariance(pred, gt, rnd):
    perm = list(range(12))
    rnd.shuffle(perm)
    a, b = metrics.evaluate(pred, gt), metrics.evaluate(pred[perm], gt[perm])
    assert a.absRel == pytest.approx(b.absRel, rel=1e-12)
    assert (a.delta1, a.delta2, a.delta3) == (b.delta1, b.delta2, b.delta3)


@settings(max_examples=60)
@given(arrays(np.float64, 10, elements=depth), arrays(np.float64, 10, elements=depth), st.floats(1e-3, 1e3))
def test_median_scaling_removes_global_scale(pred, gt, c):
    a = metrics.evaluate(metrics.median_scale(pred, gt)[0], gt).absRel
    b = metrics.evaluate(metrics.median_scale(c * pred, gt)[0], gt).absRel
    assert a == pytest.approx(b, rel=1e-9, abs=1e-12)


@settings(max_examples=100)
@given(arrays(np.float64, 10, elements=depth), arrays(np.float64, 10, elements=depth))
def test_delta1_log_form(pred, gt):
    log_form = 100 * np.mean(np.abs(np.log(pred) - np.log(gt)) < math.log(1.25))
    ratio = np.maximum(pred / gt, gt / pred)
    # identical except for pixels within roundoff of the threshold
    near = np.abs(ratio - 1.25) < 1e-12
    if not near.any():
        assert metrics.evaluate(pred, gt).delta1 == log_form


def test_evaluate_depth_pipeline():
    gt = np.array([[1.0, 2.0], [0.0, 100.0]])
    pred = 3 * np.array([[1.0, 2.0], [7.0, 7.0]])
    r = metrics.evaluate_depth(pred, gt)
    assert r.count == 2 and r.absRel == pytest.approx(0.0, abs=1e-15) and r.scale == pytest.approx(1 / 3)
    raw = metrics.evaluate_depth(pred, gt, scale=False)
    assert raw.scale == 1.0 and raw.absRel == pytest.approx(2.0)


def test_write_reports(tmp_path):
    rep = metrics.evaluate(np.array([2.0, 4.0]), np.array([1.0, 4.0]))
    p = tmp_path / "m.csv"
    metrics.write_reports(p, [({"condition": "clear"}, rep)])
    lines = p.read_text().splitlines()
    assert lines[0] == "condition," + ",".join(metrics.REPORT_COLUMNS)
    assert lines[1].startswith("clear,0.5,0.5,")
    metrics.write_reports(tmp_path / "m.json", [({"condition": "clear"}, rep)], as_json=True)
    assert json.loads((tmp_path / "m.json").read_text())["delta1"] == 50.0
    with pytest.raises(ValueError):
        metrics.write_reports(tmp_path / "e.csv", [])
