"""Coarse-to-fine refinement: 1024-point coarse clouds in, 4096-point
refined clouds out.

Two implementations of the refiner contract: a non-learned baseline
(outlier removal + jittered upsampling) and a tiny permutation-invariant
encoder/decoder trained with CD or EMD loss through analytic gradients.
All training state lives in flat float64 parameter vectors so runs are
bitwise reproducible for a fixed seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.spatial import cKDTree

from uavsar3d import metrics
from uavsar3d.cloud import PointCloud

COARSE_SIZE = 1024
REFINED_SIZE = 4096


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


class Refiner(Protocol):
    """Stage-3 contract: coarse 1024-point cloud -> refined 4096 points."""

    def refine(self, coarse: PointCloud, seed: int) -> PointCloud:
        ...


# ---------------------------------------------------------------------------
# Non-learned baseline

def baseline_refine(coarse: PointCloud, seed: int = 0,
                    out_points: int = REFINED_SIZE) -> PointCloud:
    """Statistical outlier removal, then upsample by jittered replication.

    Points whose mean distance to their 8 nearest neighbours exceeds
    mu + 2 sigma are dropped; survivors are kept as-is and replicated
    (cycling) with Gaussian jitter of half their NN distance until the
    output reaches `out_points`.
    """
    pts = coarse.points
    n = len(pts)
    if n < 2:
        raise ValueError("baseline refiner needs at least 2 points")
    k = min(8, n - 1)
    tree = cKDTree(pts)
    dists, _ = tree.query(pts, k=k + 1)  # first column is the point itself
    mean_knn = dists[:, 1:].mean(axis=1)
    keep = mean_knn <= mean_knn.mean() + 2.0 * mean_knn.std()
    survivors = pts[keep]
    nn_dist = dists[:, 1][keep]
    s = len(survivors)
    rng = np.random.default_rng(seed)
    extra = out_points - s
    src = np.arange(extra) % s
    jitter = rng.normal(size=(extra, 3)) * (0.5 * nn_dist[src])[:, None]
    return PointCloud(np.concatenate([survivors, survivors[src] + jitter], axis=0))


@dataclass
class BaselineRefiner:
    def refine(self, coarse: PointCloud, seed: int) -> PointCloud:
        return baseline_refine(coarse, seed)


# ---------------------------------------------------------------------------
# Tiny learned model: shared per-point encoder, max pool, MLP decoder

@dataclass(frozen=True)
class ModelConfig:
    encoder_widths: tuple[int, ...] = (3, 64, 128, 256)
    decoder_widths: tuple[int, ...] = (512, 1024)
    out_points: int = REFINED_SIZE
    in_points: int = COARSE_SIZE

    def layer_shapes(self) -> list[tuple[int, int]]:
        shapes = []
        e = self.encoder_widths
        for i in range(len(e) - 1):
            shapes.append((e[i], e[i + 1]))
        chain = (e[-1],) + self.decoder_widths + (self.out_points * 3,)
        for i in range(len(chain) - 1):
            shapes.append((chain[i], chain[i + 1]))
        return shapes

    @property
    def num_encoder_layers(self) -> int:
        return len(self.encoder_widths) - 1

    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes())


@dataclass
class CoarseDecoderModel:
    config: ModelConfig
    params: np.ndarray

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.shape != (self.config.param_count(),):
            raise ValueError(
                "parameter vector length %d does not match architecture (%d)"
                % (len(self.params), self.config.param_count())
            )

    def layers(self, params: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into the flat vector, encoder layers first."""
        params = self.params if params is None else params
        out = []
        off = 0
        for fi, fo in self.config.layer_shapes():
            w = params[off:off + fi * fo].reshape(fi, fo)
            off += fi * fo
            b = params[off:off + fo]
            off += fo
            out.append((w, b))
        return out


def init_model(config: ModelConfig = ModelConfig(), seed: int = 0) -> CoarseDecoderModel:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per layer, seed-controlled."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fi, fo in config.layer_shapes():
        bound = 1.0 / np.sqrt(fi)
        chunks.append(rng.uniform(-bound, bound, size=fi * fo))
        chunks.append(rng.uniform(-bound, bound, size=fo))
    return CoarseDecoderModel(config, np.concatenate(chunks))


def _forward_trace(model: CoarseDecoderModel, coarse_pts: np.ndarray):
    """Forward pass keeping the activations needed for backprop."""
    layers = model.layers()
    ne = model.config.num_encoder_layers
    acts = [coarse_pts]
    h = coarse_pts
    pre = []
    for w, b in layers[:ne]:
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    argmax = np.argmax(h, axis=0)  # per-latent-channel winning point
    latent = h[argmax, np.arange(h.shape[1])]
    dacts = [latent]
    g = latent
    dpre = []
    for i, (w, b) in enumerate(layers[ne:]):
        z = g @ w + b
        dpre.append(z)
        g = np.maximum(z, 0.0) if i < len(layers) - ne - 1 else z
        dacts.append(g)
    out = g.reshape(model.config.out_points, 3)
    return out, (acts, pre, argmax, latent, dacts, dpre)


def model_forward(model: CoarseDecoderModel, coarse: PointCloud) -> PointCloud:
    """Refined cloud for a coarse input; invariant to input point order."""
    _check_coarse(model, coarse)
    out, _ = _forward_trace(model, coarse.points)
    return PointCloud(out)


def _check_coarse(model: CoarseDecoderModel, coarse: PointCloud):
    if len(coarse) != model.config.in_points:
        raise ValueError(
            "coarse cloud must have exactly %d points" % model.config.in_points)


def _backward(model: CoarseDecoderModel, trace, d_out: np.ndarray) -> np.ndarray:
    """Analytic gradient of a scalar loss wrt the flat parameter vector,
    given d loss / d output points."""
    acts, pre, argmax, latent, dacts, dpre = trace
    layers = model.layers()
    ne = model.config.num_encoder_layers
    grad = np.zeros_like(model.params)
    gviews = model.layers(grad)

    # Decoder (vectors; activations are 1D).
    g = d_out.reshape(-1)
    n_dec = len(layers) - ne
    for i in range(n_dec - 1, -1, -1):
        if i < n_dec - 1:  # hidden decoder layers are ReLU
            g = g * (dpre[i] > 0)
        w, _ = layers[ne + i]
        gw, gb = gviews[ne + i]
        gw += np.outer(dacts[i], g)
        gb += g
        g = g @ w.T

    # Max aggregation: route each latent channel's gradient to its argmax point.
    npts = acts[0].shape[0]
    d_h = np.zeros((npts, latent.shape[0]))
    d_h[argmax, np.arange(latent.shape[0])] = g

    # Shared per-point encoder layers.
    g = d_h
    for i in range(ne - 1, -1, -1):
        g = g * (pre[i] > 0)
        w, _ = layers[i]
        gw, gb = gviews[i]
        gw += acts[i].T @ g
        gb += g.sum(axis=0)
        g = g @ w.T
    return grad


def _loss_d_out(y: np.ndarray, truth: PointCloud, loss_type: str,
                emd_eps: float) -> tuple[float, np.ndarray]:
    """Loss value and d loss / d output-points for one sample.

    CD uses the nearest-neighbour correspondences fixed at the current
    iterate; EMD uses the optimal assignment (exact up to the solver cap,
    epsilon-approximate auction beyond it). Values match the metrics module
    exactly because the same routines compute them.
    """
    t = truth.points
    n_y, n_t = len(y), len(t)
    if loss_type == "cd":
        d_yt, idx_yt = metrics.nearest_dists(y, t)
        d_ty, idx_ty = metrics.nearest_dists(t, y)
        value = float(d_yt.mean() + d_ty.mean())
        d_out = np.zeros_like(y)
        safe = d_yt > 0
        d_out[safe] = (y[safe] - t[idx_yt[safe]]) / (d_yt[safe, None] * n_y)
        safe_t = d_ty > 0
        contrib = (y[idx_ty[safe_t]] - t[safe_t]) / (d_ty[safe_t, None] * n_t)
        np.add.at(d_out, idx_ty[safe_t], contrib)
    elif loss_type == "emd":
        if n_y != n_t:
            raise metrics.SizeMismatchError("EMD loss needs equal sizes")
        out_pc = PointCloud(y)
        if n_y <= metrics.EXACT_CAP:
            value, assignment = metrics.emd_exact(out_pc, truth)
        else:
            value, assignment = metrics.emd_approx(out_pc, truth, emd_eps,
                                                   return_assignment=True)
        diff = y - t[assignment]
        norms = np.sqrt((diff * diff).sum(axis=1))
        d_out = np.zeros_like(y)
        safe = norms > 0
        d_out[safe] = diff[safe] / (norms[safe, None] * n_y)
    else:
        raise ValueError("loss_type must be 'cd' or 'emd'")
    return value, d_out


def loss_and_gradient(model: CoarseDecoderModel, coarse: PointCloud,
                      truth: PointCloud, loss_type: str,
                      emd_eps: float = 0.25) -> tuple[float, np.ndarray]:
    """Loss value and analytic parameter gradient for one (coarse, truth) pair."""
    _check_coarse(model, coarse)
    out, trace = _forward_trace(model, coarse.points)
    value, d_out = _loss_d_out(out, truth, loss_type, emd_eps)
    return value, _backward(model, trace, d_out)


# ---------------------------------------------------------------------------
# Batched forward/backward (training path; same math as the per-sample
# functions, with per-sample outer products fused into GEMMs)

def _batch_forward(model: CoarseDecoderModel, x: np.ndarray):
    layers = model.layers()
    ne = model.config.num_encoder_layers
    bsz, npts, _ = x.shape
    flat = x.reshape(bsz * npts, 3)
    acts = [flat]
    pre = []
    h = flat
    for w, b in layers[:ne]:
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    nc = h.shape[1]
    per = h.reshape(bsz, npts, nc)
    argmax = np.argmax(per, axis=1)
    latent = np.take_along_axis(per, argmax[:, None, :], axis=1)[:, 0, :]
    dacts = [latent]
    dpre = []
    g = latent
    for i, (w, b) in enumerate(layers[ne:]):
        z = g @ w + b
        dpre.append(z)
        g = np.maximum(z, 0.0) if i < len(layers) - ne - 1 else z
        dacts.append(g)
    out = g.reshape(bsz, model.config.out_points, 3)
    return out, (acts, pre, argmax, latent, dacts, dpre, bsz, npts)


def _batch_backward(model: CoarseDecoderModel, trace, d_out: np.ndarray) -> np.ndarray:
    """Mean-over-batch parameter gradient from d loss / d outputs."""
    acts, pre, argmax, latent, dacts, dpre, bsz, npts = trace
    layers = model.layers()
    ne = model.config.num_encoder_layers
    grad = np.zeros_like(model.params)
    gviews = model.layers(grad)

    g = d_out.reshape(bsz, -1)
    n_dec = len(layers) - ne
    for i in range(n_dec - 1, -1, -1):
        if i < n_dec - 1:
            g = g * (dpre[i] > 0)
        w, _ = layers[ne + i]
        gw, gb = gviews[ne + i]
        gw += dacts[i].T @ g
        gb += g.sum(axis=0)
        g = g @ w.T

    nc = latent.shape[1]
    d_h = np.zeros((bsz * npts, nc))
    rows = (argmax + np.arange(bsz)[:, None] * npts).ravel()
    d_h[rows, np.tile(np.arange(nc), bsz)] = g.ravel()

    g = d_h
    for i in range(ne - 1, -1, -1):
        g = g * (pre[i] > 0)
        w, _ = layers[i]
        gw, gb = gviews[i]
        gw += acts[i].T @ g
        gb += g.sum(axis=0)
        g = g @ w.T
    grad /= bsz
    return grad


# ---------------------------------------------------------------------------
# Training

def lr_for_epoch(epoch: int, total_epochs: int, lr0: float) -> float:
    """Constant for the first half, then linear decay reaching 0 at the end."""
    half = total_epochs // 2
    if epoch <= half:
        return lr0
    return lr0 * (total_epochs - epoch) / (total_epochs - half)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 200
    learning_rate: float = 2e-4
    batch_size: int = 8
    loss_type: str = "cd"
    seed: int = 0
    emd_eps: float = 0.25  # auction tolerance while training with EMD loss
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.loss_type not in ("cd", "emd"):
            raise ValueError("loss_type must be 'cd' or 'emd'")


@dataclass
class TrainingLog:
    epoch_losses: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)

    def save_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,mean_loss,learning_rate\n")
            for i, (loss, lr) in enumerate(zip(self.epoch_losses, self.learning_rates)):
                fh.write("%d,%.9g,%.9g\n" % (i + 1, loss, lr))


def train(dataset: list[tuple[PointCloud, PointCloud]], config: TrainingConfig,
          model_config: ModelConfig = ModelConfig()) -> tuple[CoarseDecoderModel, TrainingLog]:
    """Adam on the configured reconstruction loss; seed-deterministic.

    The gradient of each minibatch is accumulated in dataset order
    (deterministic reduction), and shuffling uses its own stream.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    for coarse, _ in dataset:
        if len(coarse) != model_config.in_points:
            raise ValueError(
                "coarse clouds must have exactly %d points" % model_config.in_points)
    model = init_model(model_config, seed=config.seed)
    rng = np.random.default_rng(config.seed + 1)
    b1, b2 = config.adam_beta1, config.adam_beta2
    m = np.zeros_like(model.params)
    v = np.zeros_like(model.params)
    tmp = np.empty_like(model.params)
    step = 0
    log = TrainingLog()
    for epoch in range(config.epochs):
        lr = lr_for_epoch(epoch, config.epochs, config.learning_rate)
        order = rng.permutation(len(dataset))
        losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            x = np.stack([dataset[i][0].points for i in batch])
            out, trace = _batch_forward(model, x)
            d_out = np.empty_like(out)
            for j, i in enumerate(batch):
                value, d_out[j] = _loss_d_out(out[j], dataset[i][1],
                                              config.loss_type, config.emd_eps)
                if not np.isfinite(value):
                    raise TrainingDivergedError(
                        "non-finite loss at epoch %d" % (epoch + 1))
                losses.append(value)
            grad = _batch_backward(model, trace, d_out)
            step += 1
            # In-place Adam (the parameter vector is large; avoid temporaries).
            m *= b1
            np.multiply(grad, 1.0 - b1, out=tmp)
            m += tmp
            v *= b2
            np.multiply(grad, grad, out=tmp)
            tmp *= 1.0 - b2
            v += tmp
            np.sqrt(v, out=tmp)
            tmp /= np.sqrt(1.0 - b2 ** step)
            tmp += config.adam_eps
            np.divide(m, tmp, out=tmp)
            tmp *= lr / (1.0 - b1 ** step)
            model.params -= tmp
        log.epoch_losses.append(float(np.mean(losses)))
        log.learning_rates.append(lr)
    return model, log


@dataclass
class LearnedRefiner:
    model: CoarseDecoderModel

    def refine(self, coarse: PointCloud, seed: int) -> PointCloud:
        return model_forward(self.model, coarse)


@dataclass
class PerObjectRefiner:
    """One learned model per object label; `label` selects at refine time."""

    models: dict[int, CoarseDecoderModel]

    def for_label(self, label: int) -> LearnedRefiner:
        if label not in self.models:
            raise KeyError("no model trained for label %d" % label)
        return LearnedRefiner(self.models[label])

    def refine(self, coarse: PointCloud, seed: int) -> PointCloud:
        raise TypeError("PerObjectRefiner needs a label; use for_label(label)")


def train_joint(pairs: list, config: TrainingConfig,
                model_config: ModelConfig = ModelConfig()) -> tuple[CoarseDecoderModel, TrainingLog]:
    """One model over whole-scene (all objects together) pairs."""
    dataset = [(p.coarse, p.truth) for p in pairs]
    return train(dataset, config, model_config)


def train_per_object(pairs: list, config: TrainingConfig,
                     model_config: ModelConfig = ModelConfig()) -> tuple[dict[int, CoarseDecoderModel], dict[int, TrainingLog]]:
    """One model per object label over single-object pairs."""
    by_label: dict[int, list] = {}
    for p in pairs:
        if p.label is None:
            raise ValueError("per-object training needs labeled pairs")
        by_label.setdefault(p.label, []).append((p.coarse, p.truth))
    models, logs = {}, {}
    for label in sorted(by_label):
        models[label], logs[label] = train(by_label[label], config, model_config)
    return models, logs


# ---------------------------------------------------------------------------
# Checkpoints

_CKPT_MAGIC = b"UVCK"
_CKPT_VERSION = 1


def save_model(model: CoarseDecoderModel, path: str) -> None:
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<I", len(cfg.encoder_widths)))
        fh.write(struct.pack("<%dI" % len(cfg.encoder_widths), *cfg.encoder_widths))
        fh.write(struct.pack("<I", len(cfg.decoder_widths)))
        fh.write(struct.pack("<%dI" % len(cfg.decoder_widths), *cfg.decoder_widths))
        fh.write(struct.pack("<II", cfg.out_points, cfg.in_points))
        fh.write(struct.pack("<Q", len(model.params)))
        fh.write(model.params.astype("<f8").tobytes())


def load_model(path: str) -> CoarseDecoderModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError("not a model checkpoint: %s" % path)
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CKPT_VERSION:
            raise ValueError("unsupported checkpoint version %d" % version)
        (ne,) = struct.unpack("<I", fh.read(4))
        enc = struct.unpack("<%dI" % ne, fh.read(4 * ne))
        (nd,) = struct.unpack("<I", fh.read(4))
        dec = struct.unpack("<%dI" % nd, fh.read(4 * nd))
        out_points, in_points = struct.unpack("<II", fh.read(8))
        (count,) = struct.unpack("<Q", fh.read(8))
        params = np.frombuffer(fh.read(8 * count), dtype="<f8").copy()
    return CoarseDecoderModel(ModelConfig(enc, dec, out_points, in_points), params)
