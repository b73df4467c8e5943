"""Chamfer/EMD against brute-force oracles, metric axioms, protocol, reports."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavsar3d.cloud import PointCloud
from uavsar3d.metrics import (
    EVAL_SIZE,
    ExactSizeCapError,
    MetricsReport,
    ScoreRecord,
    SizeMismatchError,
    aggregate,
    chamfer,
    emd_approx,
    emd_exact,
    evaluate_pair,
    render_table,
    save_report,
)


def _rand_cloud(rng, n):
    return PointCloud(rng.random((n, 3)))


def chamfer_oracle(a, b):
    d = np.sqrt(((a.points[:, None] - b.points[None]) ** 2).sum(-1))
    return d.min(axis=1).mean() + d.min(axis=0).mean()


def emd_brute_force(a, b):
    d = np.sqrt(((a.points[:, None] - b.points[None]) ** 2).sum(-1))
    n = len(a)
    return min(
        sum(d[i, p[i]] for i in range(n)) / n
        for p in itertools.permutations(range(n))
    )


# --- chamfer -----------------------------------------------------------------

def test_chamfer_identity_and_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = _rand_cloud(rng, int(rng.integers(1, 64)))
        b = _rand_cloud(rng, int(rng.integers(1, 64)))
        assert chamfer(a, a) == 0.0
        assert chamfer(a, b) == chamfer(b, a)


def test_chamfer_equals_exhaustive_oracle():
    rng = np.random.default_rng(1)
    for _ in range(25):
        a = _rand_cloud(rng, int(rng.integers(2, 256)))
        b = _rand_cloud(rng, int(rng.integers(2, 256)))
        assert chamfer(a, b) == chamfer_oracle(a, b)


def test_chamfer_known_value():
    a = PointCloud(np.array([[0.0, 0, 0], [1, 0, 0]]))
    b = PointCloud(np.array([[0.0, 0, 0], [0, 1, 0]]))
    # A->B: 0 and 1; B->A: 0 and 1 -> 0.5 + 0.5
    assert chamfer(a, b) == pytest.approx(1.0, abs=1e-15)


def test_chamfer_kdtree_path_matches_oracle():
    rng = np.random.default_rng(2)
    a = _rand_cloud(rng, 700)  # beyond the brute-force threshold
    b = _rand_cloud(rng, 650)
    assert chamfer(a, b) == chamfer_oracle(a, b)


def test_chamfer_rejects_empty():
    with pytest.raises(ValueError):
        chamfer(PointCloud(np.zeros((0, 3))), PointCloud(np.zeros((1, 3))))


# --- EMD exact ----------------------------------------------------------------

def test_emd_identity():
    rng = np.random.default_rng(3)
    s = _rand_cloud(rng, 12)
    val, assignment = emd_exact(s, s)
    assert val == pytest.approx(0.0, abs=1e-15)
    assert np.array_equal(assignment, np.arange(12))


def test_emd_spec_pairing_example():
    # Optimal pairing crosses: 0<->-1 and 2<->1 (greedy nearest gives 2.0).
    a = PointCloud(np.array([[0.0, 0, 0], [2, 0, 0]]))
    b = PointCloud(np.array([[-1.0, 0, 0], [1, 0, 0]]))
    val, assignment = emd_exact(a, b)
    assert val == pytest.approx(1.0, abs=1e-15)
    assert assignment.tolist() == [0, 1]


def test_emd_matches_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(40):
        n = int(rng.integers(2, 8))
        a, b = _rand_cloud(rng, n), _rand_cloud(rng, n)
        val, _ = emd_exact(a, b)
        assert val == pytest.approx(emd_brute_force(a, b), abs=1e-12)


def test_emd_errors():
    rng = np.random.default_rng(5)
    with pytest.raises(SizeMismatchError):
        emd_exact(_rand_cloud(rng, 3), _rand_cloud(rng, 4))
    with pytest.raises(ExactSizeCapError):
        emd_exact(_rand_cloud(rng, 20), _rand_cloud(rng, 20), cap=16)


def test_emd_metric_axioms_random_triples():
    rng = np.random.default_rng(6)
    for _ in range(30):
        n = int(rng.integers(2, 32))
        a, b, c = (_rand_cloud(rng, n) for _ in range(3))
        ab, _ = emd_exact(a, b)
        ba, _ = emd_exact(b, a)
        ac, _ = emd_exact(a, c)
        cb, _ = emd_exact(c, b)
        assert ab == pytest.approx(ba, abs=1e-12)
        assert ab <= ac + cb + 1e-9


def test_chamfer_bounded_by_twice_emd():
    rng = np.random.default_rng(7)
    for _ in range(30):
        n = int(rng.integers(2, 48))
        a, b = _rand_cloud(rng, n), _rand_cloud(rng, n)
        val, _ = emd_exact(a, b)
        assert chamfer(a, b) <= 2.0 * val + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_emd_never_below_chamfer_half_property(n, seed):
    rng = np.random.default_rng(seed)
    a, b = _rand_cloud(rng, n), _rand_cloud(rng, n)
    val, assignment = emd_exact(a, b)
    assert sorted(assignment.tolist()) == list(range(n))
    assert 2.0 * val >= chamfer(a, b) - 1e-12


# --- EMD approx ---------------------------------------------------------------

def test_emd_approx_identity_clouds():
    rng = np.random.default_rng(8)
    s = _rand_cloud(rng, 64)
    diameter = np.sqrt(((s.points[:, None] - s.points[None]) ** 2).sum(-1)).max()
    assert emd_approx(s, s, 0.01) <= 0.01 * diameter


def test_emd_approx_within_1pct_and_feasible():
    rng = np.random.default_rng(9)
    for _ in range(15):
        a, b = _rand_cloud(rng, 128), _rand_cloud(rng, 128)
        exact, _ = emd_exact(a, b)
        approx = emd_approx(a, b, 0.01)
        assert approx >= exact - 1e-9
        assert approx <= 1.01 * exact


def test_emd_approx_run_to_completion_matches_exact():
    rng = np.random.default_rng(10)
    for _ in range(10):
        a, b = _rand_cloud(rng, 8), _rand_cloud(rng, 8)
        exact, _ = emd_exact(a, b)
        assert emd_approx(a, b, 1e-12) == pytest.approx(exact, abs=1e-9)


def test_emd_approx_errors():
    rng = np.random.default_rng(11)
    with pytest.raises(SizeMismatchError):
        emd_approx(_rand_cloud(rng, 3), _rand_cloud(rng, 4))
    with pytest.raises(ValueError):
        emd_approx(_rand_cloud(rng, 3), _rand_cloud(rng, 3), eps=0.0)


# --- evaluation protocol -------------------------------------------------------

def test_evaluate_pair_resamples_oversized():
    from uavsar3d.cloud import random_sample

    rng = np.random.default_rng(12)
    truth = _rand_cloud(rng, EVAL_SIZE)
    output = PointCloud(np.concatenate([truth.points, truth.points]))  # 2 x 4096
    cd, emd = evaluate_pair(output, truth, seed=3, eps=0.05)
    # scored exactly on the seed-3 resampled 4096-subset
    resampled = random_sample(output, EVAL_SIZE, seed=3)
    assert cd == chamfer(resampled, truth)
    # every resampled point coincides with a truth point, so one CD term is 0
    # and the whole CD equals the truth->output gap term
    d = np.sqrt(((truth.points[:, None] - resampled.points[None]) ** 2).sum(-1))
    assert cd == pytest.approx(d.min(axis=1).mean(), abs=1e-15)
    assert emd >= 0.0


def test_evaluate_pair_exact_size_skips_resampling():
    rng = np.random.default_rng(13)
    truth = _rand_cloud(rng, EVAL_SIZE)
    cd, emd = evaluate_pair(truth, truth, seed=0, eps=0.05)
    assert cd == 0.0
    diameter = 2.0  # unit cube clouds
    assert emd <= 0.05 * diameter


def test_evaluate_pair_validates_sizes():
    rng = np.random.default_rng(14)
    with pytest.raises(ValueError):
        evaluate_pair(_rand_cloud(rng, EVAL_SIZE), _rand_cloud(rng, 100))
    with pytest.raises(ValueError):
        evaluate_pair(_rand_cloud(rng, 100), _rand_cloud(rng, EVAL_SIZE))


# --- aggregation ---------------------------------------------------------------

def test_aggregate_reference_row():
    # Three records whose avg/std equal the published 2-object reference row.
    cds = [0.14, 0.2, 0.26]     # avg 0.2, sample std 0.06
    emds = [1.94, 2.74, 3.54]   # avg 2.74, sample std 0.8
    records = [ScoreRecord("s%d" % i, "2 objects", "model1", "cd", cd, emd)
               for i, (cd, emd) in enumerate(zip(cds, emds))]
    report = aggregate(records)
    agg = report.aggregates[("2 objects", "model1", "cd")]
    assert agg["cd_avg"] == pytest.approx(0.2)
    assert agg["cd_std"] == pytest.approx(0.06)
    assert agg["emd_avg"] == pytest.approx(2.74)
    assert agg["emd_std"] == pytest.approx(0.8)
    table = render_table(report)
    assert "Model 1 (CD)" in table
    for cell in ("0.20", "0.06", "2.74", "0.80"):
        assert cell in table
    assert "meters" in table  # scale-convention note


def test_aggregate_single_record_std_zero():
    report = aggregate([ScoreRecord("s", "1 objects", "model2", "emd", 0.5, 1.0)])
    agg = report.aggregates[("1 objects", "model2", "emd")]
    assert agg["cd_std"] == 0.0 and agg["emd_std"] == 0.0


def test_aggregate_hand_computed_std():
    records = [ScoreRecord("s%d" % i, "t", "model1", "cd", v, v)
               for i, v in enumerate([1.0, 2.0, 3.0])]
    agg = aggregate(records).aggregates[("t", "model1", "cd")]
    assert agg["cd_avg"] == pytest.approx(2.0)
    assert agg["cd_std"] == pytest.approx(1.0)


def test_aggregate_rejects_empty():
    with pytest.raises(ValueError):
        aggregate([])


def test_save_report_files(tmp_path):
    records = [ScoreRecord("a", "2 objects", "model1", "cd", 0.1, 0.2),
               ScoreRecord("b", "2 objects", "model2", "emd", 0.3, 0.4)]
    report = aggregate(records)
    base = str(tmp_path / "report")
    save_report(report, base)
    recs = (tmp_path / "report_records.csv").read_text().splitlines()
    assert recs[0] == "scene_id,scene_type,variant,loss_type,cd,emd"
    assert len(recs) == 3
    assert (tmp_path / "report_summary.csv").exists()
    assert "Model 2 (EMD)" in (tmp_path / "report_table.txt").read_text()
