"""Baseline refiner, the learned model's gradients, training, checkpoints."""

import numpy as np
import pytest

from uavsar3d import metrics
from uavsar3d.cloud import PointCloud
from uavsar3d.refine import (
    BaselineRefiner,
    CoarseDecoderModel,
    LearnedRefiner,
    ModelConfig,
    PerObjectRefiner,
    TrainingConfig,
    TrainingDivergedError,
    baseline_refine,
    init_model,
    load_model,
    loss_and_gradient,
    lr_for_epoch,
    model_forward,
    save_model,
    train,
    train_joint,
    train_per_object,
)

TINY = ModelConfig((3, 8, 16, 24), (32,), out_points=48, in_points=40)


def _sphere_cloud(rng, n, radius=0.5):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return PointCloud(v * radius)


# --- baseline ------------------------------------------------------------------

def test_baseline_output_size_and_determinism():
    rng = np.random.default_rng(0)
    coarse = PointCloud(rng.random((1024, 3)))
    a = baseline_refine(coarse, seed=3)
    b = baseline_refine(coarse, seed=3)
    assert len(a) == 4096
    assert np.array_equal(a.points, b.points)


def test_baseline_removes_far_outliers():
    # 5% scattered outliers at >= 10x the object scale (0.5 m sphere).
    rng = np.random.default_rng(1)
    clean = _sphere_cloud(rng, 973)
    dirs = rng.normal(size=(51, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    outliers = dirs * 8.0
    coarse = PointCloud(np.concatenate([clean.points, outliers]))
    out = baseline_refine(coarse, seed=0)
    dist_to_origin = np.linalg.norm(out.points, axis=1)
    assert dist_to_origin.max() < 1.0  # every far outlier is gone


def test_baseline_no_harm_on_clean_sphere():
    # CD against an independent reference sampling of the same sphere must
    # not degrade by more than 5% (analytic-surface oracle for the samples).
    rng = np.random.default_rng(2)
    coarse = _sphere_cloud(rng, 1024)
    ref = _sphere_cloud(np.random.default_rng(77), 4096)
    out = baseline_refine(coarse, seed=0)
    assert np.abs(np.linalg.norm(ref.points, axis=1) - 0.5).max() < 1e-12
    cd_in = metrics.chamfer(coarse, ref)
    cd_out = metrics.chamfer(out, ref)
    assert cd_out <= cd_in * 1.05


# --- model forward ---------------------------------------------------------------

def test_forward_shape_and_finite():
    model = init_model(TINY, seed=0)
    out = model_forward(model, PointCloud(np.random.default_rng(3).random((40, 3))))
    assert out.points.shape == (48, 3)
    assert np.isfinite(out.points).all()


def test_forward_permutation_invariance_bitwise():
    rng = np.random.default_rng(4)
    model = init_model(TINY, seed=1)
    coarse = rng.random((40, 3))
    perm = rng.permutation(40)
    a = model_forward(model, PointCloud(coarse))
    b = model_forward(model, PointCloud(coarse[perm]))
    assert np.array_equal(a.points, b.points)


def test_forward_sensitive_to_parameters():
    rng = np.random.default_rng(5)
    coarse = PointCloud(rng.random((40, 3)))
    a = model_forward(init_model(TINY, seed=1), coarse)
    b = model_forward(init_model(TINY, seed=2), coarse)
    assert not np.allclose(a.points, b.points)


def test_forward_rejects_wrong_size():
    model = init_model(TINY, seed=0)
    with pytest.raises(ValueError):
        model_forward(model, PointCloud(np.zeros((10, 3))))


def test_param_count_matches_architecture():
    cfg = ModelConfig()
    shapes = cfg.layer_shapes()
    assert shapes[0] == (3, 64)
    assert shapes[-1] == (1024, 4096 * 3)
    model = init_model(cfg, seed=0)
    assert len(model.params) == cfg.param_count()
    with pytest.raises(ValueError):
        CoarseDecoderModel(cfg, np.zeros(10))


# --- gradients -------------------------------------------------------------------

@pytest.mark.parametrize("loss", ["cd", "emd"])
def test_finite_difference_gradients(loss):
    rng = np.random.default_rng(6)
    model = init_model(TINY, seed=3)
    coarse = PointCloud(rng.random((40, 3)))
    truth = PointCloud(rng.random((48, 3)))
    value, grad = loss_and_gradient(model, coarse, truth, loss)
    assert value > 0
    coords = np.random.default_rng(99).choice(len(model.params), 10, replace=False)
    h = 1e-5
    for c in coords:
        p0 = model.params[c]
        model.params[c] = p0 + h
        vp, _ = loss_and_gradient(model, coarse, truth, loss)
        model.params[c] = p0 - h
        vm, _ = loss_and_gradient(model, coarse, truth, loss)
        model.params[c] = p0
        fd = (vp - vm) / (2 * h)
        rel = abs(fd - grad[c]) / max(abs(fd), abs(grad[c]), 1e-12)
        assert rel <= 1e-4, "coord %d: fd %g vs analytic %g" % (c, fd, grad[c])


def test_cd_loss_matches_metric_exactly():
    rng = np.random.default_rng(7)
    model = init_model(TINY, seed=4)
    coarse = PointCloud(rng.random((40, 3)))
    truth = PointCloud(rng.random((48, 3)))
    value, _ = loss_and_gradient(model, coarse, truth, "cd")
    out = model_forward(model, coarse)
    assert value == metrics.chamfer(out, truth)


def test_emd_loss_matches_metric_exactly():
    rng = np.random.default_rng(8)
    model = init_model(TINY, seed=5)
    coarse = PointCloud(rng.random((40, 3)))
    truth = PointCloud(rng.random((48, 3)))
    value, _ = loss_and_gradient(model, coarse, truth, "emd")
    out = model_forward(model, coarse)
    exact, _ = metrics.emd_exact(out, truth)
    assert value == pytest.approx(exact, abs=1e-15)


def test_zero_loss_zero_distance_gradient():
    # Contrived: truth equal to the forward output -> loss 0, gradient 0.
    rng = np.random.default_rng(9)
    model = init_model(TINY, seed=6)
    coarse = PointCloud(rng.random((40, 3)))
    truth = model_forward(model, coarse)
    for loss in ("cd", "emd"):
        value, grad = loss_and_gradient(model, coarse, truth, loss)
        assert value == pytest.approx(0.0, abs=1e-12)
        assert np.abs(grad).max() == pytest.approx(0.0, abs=1e-12)


def test_loss_rejects_unknown_type():
    model = init_model(TINY, seed=0)
    rng = np.random.default_rng(10)
    with pytest.raises(ValueError):
        loss_and_gradient(model, PointCloud(rng.random((40, 3))),
                          PointCloud(rng.random((48, 3))), "l2")


# --- schedule and training --------------------------------------------------------

def test_lr_schedule_paper_shape():
    lr0 = 2e-4
    assert lr_for_epoch(0, 200, lr0) == lr0
    assert lr_for_epoch(100, 200, lr0) == lr0
    assert lr_for_epoch(150, 200, lr0) == pytest.approx(lr0 / 2)
    assert lr_for_epoch(200, 200, lr0) == 0.0
    # linear in the second half
    drops = [lr_for_epoch(e, 200, lr0) for e in range(100, 201)]
    diffs = np.diff(drops)
    assert np.allclose(diffs, diffs[0])


def test_training_reduces_single_pair_loss():
    # Fast shape check at tiny scale; the full-size >= 90% overfit bound
    # runs in the acceptance suite.
    rng = np.random.default_rng(11)
    coarse = PointCloud(rng.random((40, 3)))
    truth = PointCloud(rng.random((48, 3)) * 0.5)
    cfg = TrainingConfig(epochs=100, learning_rate=2e-3, batch_size=1, seed=0)
    model, log = train([(coarse, truth)], cfg, TINY)
    assert log.epoch_losses[-1] <= 0.5 * log.epoch_losses[0]


def test_training_deterministic():
    rng = np.random.default_rng(12)
    data = [(PointCloud(rng.random((40, 3))), PointCloud(rng.random((48, 3))))
            for _ in range(4)]
    cfg = TrainingConfig(epochs=5, batch_size=2, seed=7)
    m1, log1 = train(data, cfg, TINY)
    m2, log2 = train(data, cfg, TINY)
    assert np.array_equal(m1.params, m2.params)
    assert log1.epoch_losses == log2.epoch_losses


def test_training_divergence_error():
    # Adam steps are bounded by the learning rate, so divergence needs an lr
    # large enough to overflow the forward pass into non-finite losses.
    rng = np.random.default_rng(13)
    data = [(PointCloud(rng.random((40, 3))), PointCloud(rng.random((48, 3))))]
    cfg = TrainingConfig(epochs=5, learning_rate=1e100, batch_size=1, seed=0)
    with pytest.raises(TrainingDivergedError):
        with np.errstate(over="ignore", invalid="ignore"):
            train(data, cfg, TINY)


def test_training_validates_input():
    with pytest.raises(ValueError):
        train([], TrainingConfig(), TINY)
    rng = np.random.default_rng(14)
    with pytest.raises(ValueError):
        train([(PointCloud(rng.random((10, 3))), PointCloud(rng.random((48, 3))))],
              TrainingConfig(), TINY)
    with pytest.raises(ValueError):
        TrainingConfig(loss_type="l1")
    with pytest.raises(ValueError):
        TrainingConfig(epochs=0)


def test_train_log_csv(tmp_path):
    rng = np.random.default_rng(15)
    data = [(PointCloud(rng.random((40, 3))), PointCloud(rng.random((48, 3))))]
    _, log = train(data, TrainingConfig(epochs=3, batch_size=1, seed=0), TINY)
    path = str(tmp_path / "log.csv")
    log.save_csv(path)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss,learning_rate"
    assert len(lines) == 4


# --- per-object vs joint -----------------------------------------------------------

class _Pair:
    def __init__(self, coarse, truth, label):
        self.coarse, self.truth, self.label = coarse, truth, label


def _labeled_pairs(rng, labels):
    return [_Pair(PointCloud(rng.random((40, 3))),
                  PointCloud(rng.random((48, 3))), lab) for lab in labels]


def test_per_object_trains_one_model_per_label():
    rng = np.random.default_rng(16)
    pairs = _labeled_pairs(rng, [1, 1, 2, 2])
    cfg = TrainingConfig(epochs=2, batch_size=2, seed=0)
    models, logs = train_per_object(pairs, cfg, TINY)
    assert sorted(models) == [1, 2]
    assert all(isinstance(m, CoarseDecoderModel) for m in models.values())


def test_joint_trains_single_model():
    rng = np.random.default_rng(17)
    pairs = _labeled_pairs(rng, [1, 2, 3])
    model, _ = train_joint(pairs, TrainingConfig(epochs=2, batch_size=3, seed=0), TINY)
    assert isinstance(model, CoarseDecoderModel)


def test_per_object_requires_labels():
    rng = np.random.default_rng(18)
    pairs = _labeled_pairs(rng, [None])
    with pytest.raises(ValueError):
        train_per_object(pairs, TrainingConfig(epochs=1), TINY)


def test_refiner_interfaces():
    rng = np.random.default_rng(19)
    coarse = PointCloud(rng.random((1024, 3)))
    out = BaselineRefiner().refine(coarse, seed=0)
    assert len(out) == 4096
    model = init_model(ModelConfig((3, 8), (16,), out_points=4096, in_points=1024), seed=0)
    assert len(LearnedRefiner(model).refine(coarse, seed=0)) == 4096
    per = PerObjectRefiner({1: model})
    assert len(per.for_label(1).refine(coarse, seed=0)) == 4096
    with pytest.raises(KeyError):
        per.for_label(9)
    with pytest.raises(TypeError):
        per.refine(coarse, seed=0)


# --- checkpoints -------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = init_model(TINY, seed=21)
    path = str(tmp_path / "model.ckpt")
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.config == TINY
    assert np.array_equal(loaded.params, model.params)
    rng = np.random.default_rng(22)
    coarse = PointCloud(rng.random((40, 3)))
    assert np.array_equal(model_forward(model, coarse).points,
                          model_forward(loaded, coarse).points)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"JUNKJUNK")
    with pytest.raises(ValueError):
        load_model(str(path))
