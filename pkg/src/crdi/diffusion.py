"""Diffusion core: forward noising, x0 prediction, deterministic DDIM
stepping, score/noise conversion, and source-model training."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidArgumentError, NumericError, ShapeError
from .numerics import AdamState, Mlp, RngStream, adam_step, gaussian, mlp_backward, mlp_forward
from .schedules import NoiseSchedule

TIME_EMBED_DIM = 32
_CHECKPOINT_MAGIC = b"CRDN"
_CHECKPOINT_VERSION = 1


def time_features(t, T: int) -> np.ndarray:
    """Sinusoidal embedding of t: 16 geometric frequencies spanning 1..T."""
    t = np.asarray(t, dtype=np.float64)
    freqs = np.geomspace(1.0, float(T), TIME_EMBED_DIM // 2)
    ang = np.multiply.outer(t, freqs) / float(T)
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


@dataclass
class NoiseNet:
    """Noise-prediction network over (x_t, t); an MLP over [x, time features]."""

    backbone: Mlp
    d: int
    T: int
    frozen: bool = False

    @classmethod
    def init(cls, d: int, T: int, hidden, stream: RngStream) -> "NoiseNet":
        widths = [d + TIME_EMBED_DIM, *hidden, d]
        return cls(backbone=Mlp.init(widths, stream), d=d, T=T)

    def freeze(self) -> "NoiseNet":
        self.frozen = True
        return self

    def param_checksum(self) -> str:
        return self.backbone.param_checksum()


def eps_theta(net: NoiseNet, x: np.ndarray, t) -> np.ndarray:
    """Predicted noise for state x at timestep t. Batched when x is 2-D."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.d:
        raise ShapeError(f"state width {x.shape[-1]} != {net.d}")
    feat = time_features(t, net.T)
    if x.ndim == 2 and feat.ndim == 1:
        feat = np.broadcast_to(feat, (x.shape[0], feat.shape[0]))
    return mlp_forward(net.backbone, np.concatenate([x, feat], axis=-1))


def noise_to(schedule: NoiseSchedule, x0: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
    """Forward noising: sqrt(ab_t) x0 + sqrt(1-ab_t) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    if not (0 <= t <= schedule.T):
        raise InvalidArgumentError(f"t={t} outside [0, {schedule.T}]")
    return schedule.sqrt_ab(t) * x0 + schedule.sqrt_one_minus_ab(t) * eps


def predict_x0(schedule: NoiseSchedule, x_t: np.ndarray, t: int, eps_hat: np.ndarray) -> np.ndarray:
    """Direct x0 estimate from x_t and a noise prediction."""
    if t < 1:
        raise InvalidArgumentError("predict_x0 requires t >= 1")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise ShapeError(f"x_t shape {x_t.shape} != eps_hat shape {eps_hat.shape}")
    return (x_t - schedule.sqrt_one_minus_ab(t) * eps_hat) / schedule.sqrt_ab(t)


def ddim_step(schedule: NoiseSchedule, x_t: np.ndarray, t: int, t_prev: int,
              eps_hat: np.ndarray) -> np.ndarray:
    """Deterministic DDIM transition from timestep t to t_prev < t."""
    if t_prev >= t:
        raise InvalidArgumentError(f"t_prev={t_prev} must be < t={t}")
    x0_hat = predict_x0(schedule, x_t, t, eps_hat)
    return schedule.sqrt_ab(t_prev) * x0_hat + schedule.sqrt_one_minus_ab(t_prev) * eps_hat


def score_from_noise(schedule: NoiseSchedule, eps_hat: np.ndarray, t: int) -> np.ndarray:
    """Tweedie conversion: score = -eps_hat / sqrt(1 - ab_t)."""
    if t < 1:
        raise InvalidArgumentError("score conversion requires t >= 1")
    return -np.asarray(eps_hat, dtype=np.float64) / schedule.sqrt_one_minus_ab(t)


def noise_from_score(schedule: NoiseSchedule, score: np.ndarray, t: int) -> np.ndarray:
    """Exact inverse of score_from_noise."""
    if t < 1:
        raise InvalidArgumentError("score conversion requires t >= 1")
    return -np.asarray(score, dtype=np.float64) * schedule.sqrt_one_minus_ab(t)


@dataclass
class TrainConfig:
    steps: int = 4000
    batch: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999


def train_source(net: NoiseNet, schedule: NoiseSchedule, dataset: np.ndarray,
                 config: TrainConfig, stream: RngStream):
    """Denoising-objective training on the source dataset.

    Minimizes E||eps - eps_theta(noise_to(x0, t, eps), t)||^2 over uniform
    t in [1, T]. Returns the per-step loss trace; the net is frozen on exit.
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim != 2 or dataset.shape[0] == 0:
        raise InvalidArgumentError("dataset must be a non-empty (n, d) array")
    if dataset.shape[1] != net.d:
        raise ShapeError(f"dataset dim {dataset.shape[1]} != net.d {net.d}")
    if net.frozen:
        raise InvalidArgumentError("cannot train a frozen net")

    n = dataset.shape[0]
    params = net.backbone.parameters()
    state = AdamState.for_params(params)
    trace = np.zeros(config.steps)
    sqrt_ab = np.sqrt(schedule.alpha_bar)
    sqrt_1mab = np.sqrt(1.0 - schedule.alpha_bar)

    for step in range(config.steps):
        idx = (stream.uniform(config.batch) * n).astype(np.int64).clip(0, n - 1)
        t = 1 + (stream.uniform(config.batch) * schedule.T).astype(np.int64).clip(0, schedule.T - 1)
        x0 = dataset[idx]
        eps = gaussian(stream, (config.batch, net.d))
        x_t = sqrt_ab[t, None] * x0 + sqrt_1mab[t, None] * eps
        inp = np.concatenate([x_t, time_features(t, net.T)], axis=-1)
        pred = mlp_forward(net.backbone, inp)
        resid = pred - eps
        loss = float(np.mean(resid * resid))
        if not np.isfinite(loss):
            raise NumericError(f"non-finite training loss at step {step}")
        trace[step] = loss
        upstream = 2.0 * resid / resid.size
        grads, _ = mlp_backward(net.backbone, inp, upstream)
        params, state = adam_step(params, grads, state, config.lr,
                                  config.beta1, config.beta2)
        for i in range(len(net.backbone.weights)):
            net.backbone.weights[i] = params[2 * i]
            net.backbone.biases[i] = params[2 * i + 1]
    net.freeze()
    return net, trace


def save_checkpoint(path, net: NoiseNet):
    """CRDN format: magic, version, T, layer widths, params as LE float64."""
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", _CHECKPOINT_VERSION))
        f.write(struct.pack("<I", net.T))
        f.write(struct.pack("<I", len(net.backbone.widths)))
        for w in net.backbone.widths:
            f.write(struct.pack("<I", w))
        for p in net.backbone.parameters():
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> NoiseNet:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic at byte 0: {blob[:4]!r}")
    off = 4
    try:
        version, T, nwidths = struct.unpack_from("<III", blob, off)
        off += 12
        if version != _CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version} at byte 4")
        widths = list(struct.unpack_from(f"<{nwidths}I", blob, off))
        off += 4 * nwidths
        net = NoiseNet(backbone=Mlp.zeros(widths), d=widths[-1], T=T)
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            w = np.frombuffer(blob, dtype="<f8", count=a * b, offset=off).reshape(a, b)
            off += 8 * a * b
            bias = np.frombuffer(blob, dtype="<f8", count=b, offset=off)
            off += 8 * b
            net.backbone.weights[i] = w.copy()
            net.backbone.biases[i] = bias.copy()
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint at byte {off}") from exc
    except ValueError as exc:
        raise FormatError(f"truncated checkpoint at byte {off}") from exc
    if off != len(blob):
        raise FormatError(f"trailing bytes at offset {off}")
    return net.freeze()
