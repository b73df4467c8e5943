"""Chamfer and Earth Mover's distances, the fairness-resampling protocol,
and report aggregation.

Conventions: CD is the symmetric mean (non-squared) nearest-neighbour
distance; EMD is the mean distance of the optimal bijection between
equal-size clouds. Both are in meters. Published tables of this kind
rarely state their normalization, so every rendered report carries a
scale-convention note instead of claiming absolute comparability.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from uavsar3d import kernels
from uavsar3d.cloud import PointCloud, random_sample

EVAL_SIZE = 4096          # ground-truth cloud size the protocol compares at
EXACT_CAP = 512           # largest size solved by the O(N^3) exact solver
_BRUTE_NN_MAX = 512       # above this, NN queries go through a KD-tree


class SizeMismatchError(ValueError):
    """EMD requires equal-cardinality clouds."""


class ExactSizeCapError(ValueError):
    """Instance too large for the exact solver; use emd_approx."""


def nearest_dists(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact NN distance/index of each a-point in b.

    Brute force for small instances; KD-tree otherwise, with distances
    recomputed from the indices so both paths produce identical values.
    Training losses reuse this so loss values match the metric exactly.
    """
    if max(len(a), len(b)) <= _BRUTE_NN_MAX:
        return kernels.nn_dists(a, b)
    _, idx = cKDTree(b).query(a, k=1)
    diff = a - b[idx]
    return np.sqrt((diff * diff).sum(axis=1)), idx.astype(np.int64)


def chamfer(a: PointCloud, b: PointCloud) -> float:
    """Symmetric mean nearest-neighbour distance between two clouds."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs non-empty clouds")
    da, _ = nearest_dists(a.points, b.points)
    db, _ = nearest_dists(b.points, a.points)
    return float(da.mean() + db.mean())


def _distance_matrix(a: np.ndarray, b: np.ndarray, exact: bool) -> np.ndarray:
    if exact:
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt((diff * diff).sum(axis=-1))
    # GEMM form, much faster at eval sizes; fine for solving because the
    # returned objective is always recomputed from exact pair distances.
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def _pair_cost(a: np.ndarray, b: np.ndarray, assignment: np.ndarray) -> float:
    diff = a - b[assignment]
    return float(np.sqrt((diff * diff).sum(axis=1)).mean())


def emd_exact(a: PointCloud, b: PointCloud, cap: int = EXACT_CAP) -> tuple[float, np.ndarray]:
    """Optimal-assignment EMD: min over bijections of the mean pair distance.

    Solved by the Hungarian-class solver; returns (value, assignment) where
    assignment[i] is the b-index matched to a-point i.
    """
    if len(a) != len(b):
        raise SizeMismatchError("EMD needs equal sizes, got %d vs %d" % (len(a), len(b)))
    if len(a) == 0:
        raise ValueError("EMD needs non-empty clouds")
    if len(a) > cap:
        raise ExactSizeCapError(
            "exact EMD capped at %d points (got %d); use emd_approx" % (cap, len(a))
        )
    cost = _distance_matrix(a.points, b.points, exact=True)
    rows, cols = linear_sum_assignment(cost)
    assignment = np.empty(len(a), dtype=np.int64)
    assignment[rows] = cols
    return _pair_cost(a.points, b.points, assignment), assignment


def emd_approx(a: PointCloud, b: PointCloud, eps: float = 0.01,
               return_assignment: bool = False):
    """Auction-solved EMD, within (1 + eps) of optimal on generic instances.

    The epsilon-scaling auction finds a bijection whose total cost is at
    most the optimum plus eps * (cost spread); the returned value is that
    bijection's exact mean distance, so it can never fall below the exact
    EMD. eps around 1e-12 runs the scaling to completion (exact optimum on
    instances without ties).
    """
    if len(a) != len(b):
        raise SizeMismatchError("EMD needs equal sizes, got %d vs %d" % (len(a), len(b)))
    if len(a) == 0:
        raise ValueError("EMD needs non-empty clouds")
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = len(a)
    cost = _distance_matrix(a.points, b.points, exact=n <= _BRUTE_NN_MAX)
    spread = float(cost.max() - cost.min())
    if spread == 0.0:
        assignment = np.arange(n, dtype=np.int64)
    else:
        assignment = kernels.auction_assign(cost, eps * spread / n)
    value = _pair_cost(a.points, b.points, assignment)
    if return_assignment:
        return value, assignment
    return value


def evaluate_pair(output: PointCloud, truth: PointCloud, seed: int = 0,
                  eps: float = 0.01) -> tuple[float, float]:
    """Fairness protocol: resample oversized outputs to the truth size, then
    score CD and (auction) EMD against the 4096-point ground truth."""
    if len(truth) != EVAL_SIZE:
        raise ValueError("ground truth must have exactly %d points" % EVAL_SIZE)
    if len(output) < EVAL_SIZE:
        raise ValueError("output has fewer than %d points" % EVAL_SIZE)
    if len(output) > EVAL_SIZE:
        output = random_sample(output, EVAL_SIZE, seed)
    return chamfer(output, truth), emd_approx(output, truth, eps)


# ---------------------------------------------------------------------------
# Aggregation and report rendering

@dataclass(frozen=True)
class ScoreRecord:
    scene_id: str
    scene_type: str     # e.g. "2 objects"
    variant: str        # "model1" | "model2"
    loss_type: str      # "cd" | "emd" (training loss of the refiner used)
    cd: float
    emd: float


@dataclass
class MetricsReport:
    records: list[ScoreRecord]
    aggregates: dict[tuple[str, str, str], dict[str, float]] = field(default_factory=dict)


def aggregate(records: list[ScoreRecord]) -> MetricsReport:
    """Group by (scene type, variant, loss type); sample std (N-1), with the
    N = 1 convention std = 0."""
    if not records:
        raise ValueError("cannot aggregate zero records")
    groups: dict[tuple[str, str, str], list[ScoreRecord]] = {}
    for rec in records:
        groups.setdefault((rec.scene_type, rec.variant, rec.loss_type), []).append(rec)
    report = MetricsReport(list(records))
    for key, recs in groups.items():
        cds = np.array([r.cd for r in recs])
        emds = np.array([r.emd for r in recs])
        std = lambda x: float(x.std(ddof=1)) if len(x) > 1 else 0.0
        report.aggregates[key] = {
            "cd_avg": float(cds.mean()), "cd_std": std(cds),
            "emd_avg": float(emds.mean()), "emd_std": std(emds),
            "n": len(recs),
        }
    return report


_VARIANT_NAMES = {"model1": "Model 1", "model2": "Model 2"}

SCALE_NOTE = (
    "CD = symmetric mean nearest-neighbour distance, EMD = mean "
    "optimal-assignment distance; both non-squared, in meters."
)


def method_name(variant: str, loss_type: str) -> str:
    return "%s (%s)" % (_VARIANT_NAMES.get(variant, variant), loss_type.upper())


def render_table(report: MetricsReport) -> str:
    """Plain-text table: rows variant x training-loss per scene type,
    columns CD avg/std and EMD avg/std."""
    lines = []
    header = "%-12s %-14s %8s %8s %9s %9s" % (
        "Scene", "Method", "CD avg", "CD std", "EMD avg", "EMD std")
    lines.append(header)
    lines.append("-" * len(header))
    keys = sorted(report.aggregates, key=lambda k: (k[0], k[1], k[2] != "cd"))
    last_scene = None
    for scene_type, variant, loss in keys:
        agg = report.aggregates[(scene_type, variant, loss)]
        scene_cell = scene_type if scene_type != last_scene else ""
        last_scene = scene_type
        lines.append("%-12s %-14s %8.2f %8.2f %9.2f %9.2f" % (
            scene_cell, method_name(variant, loss),
            agg["cd_avg"], agg["cd_std"], agg["emd_avg"], agg["emd_std"]))
    lines.append("")
    lines.append("Note: " + SCALE_NOTE)
    return "\n".join(lines)


def save_report(report: MetricsReport, base_path: str) -> None:
    """Write `<base>_records.csv`, `<base>_summary.csv` and `<base>_table.txt`."""
    with open(base_path + "_records.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene_id", "scene_type", "variant", "loss_type", "cd", "emd"])
        for r in report.records:
            w.writerow([r.scene_id, r.scene_type, r.variant, r.loss_type,
                        "%.9g" % r.cd, "%.9g" % r.emd])
    with open(base_path + "_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene_type", "variant", "loss_type",
                    "cd_avg", "cd_std", "emd_avg", "emd_std", "n"])
        for (scene_type, variant, loss), agg in sorted(report.aggregates.items()):
            w.writerow([scene_type, variant, loss,
                        "%.9g" % agg["cd_avg"], "%.9g" % agg["cd_std"],
                        "%.9g" % agg["emd_avg"], "%.9g" % agg["emd_std"], agg["n"]])
    with open(base_path + "_table.txt", "w") as fh:
        fh.write(render_table(report) + "\n")
