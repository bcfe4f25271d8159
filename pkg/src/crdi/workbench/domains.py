"""Synthetic source/target domain generators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from ..numerics import RngStream, gaussian

SPRITE_SIZE = 16


@dataclass(frozen=True)
class DomainSpec:
    """One synthetic data domain. `params` override per-kind defaults."""

    kind: str                      # ring-of-gaussians | two-moons | sprite-images
    params: tuple = ()             # sorted (key, value) pairs; hashable
    seed: int = 0

    @classmethod
    def make(cls, kind: str, seed: int = 0, **params) -> "DomainSpec":
        return cls(kind=kind, params=tuple(sorted(params.items())), seed=seed)

    def get(self, key, default):
        return dict(self.params).get(key, default)


def _ring(spec: DomainSpec, count: int, stream: RngStream) -> np.ndarray:
    k = int(spec.get("components", 8))
    radius = float(spec.get("radius", 2.0))
    rotation = float(spec.get("rotation", 0.0))
    std = float(spec.get("noise_std", 0.1))
    center = np.array([float(spec.get("center_x", 0.0)),
                       float(spec.get("center_y", 0.0))])
    modes = (stream.uniform(count) * k).astype(np.int64).clip(0, k - 1)
    ang = rotation + 2.0 * np.pi * modes / k
    centers = center + np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    return centers + std * gaussian(stream, (count, 2))


def _two_moons(spec: DomainSpec, count: int, stream: RngStream) -> np.ndarray:
    std = float(spec.get("noise_std", 0.08))
    scale = float(spec.get("scale", 1.5))
    upper = stream.uniform(count) < 0.5
    theta = np.pi * stream.uniform(count)
    x = np.where(upper, np.cos(theta), 1.0 - np.cos(theta))
    y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
    pts = scale * np.stack([x, y], axis=1)
    return pts + std * gaussian(stream, (count, 2))


def _sprites(spec: DomainSpec, count: int, stream: RngStream) -> np.ndarray:
    size = int(spec.get("size", SPRITE_SIZE))
    bar = bool(spec.get("bar", False))
    bar_row = int(spec.get("bar_row", 11))
    bar_intensity = float(spec.get("bar_intensity", 0.9))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = np.zeros((count, size, size))
    for i in range(count):
        u = stream.uniform(4)
        cx = size / 2 - 2 + 4 * u[0]
        cy = size / 2 - 2 + 4 * u[1]
        r = 3.0 + 2.0 * u[2]
        bright = 0.6 + 0.4 * u[3]
        # soft-edged disc keeps the images differentiable-looking at 16px
        dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
        img = bright * np.clip(r + 0.5 - dist, 0.0, 1.0)
        if bar:
            img[bar_row:bar_row + 2, :] = bar_intensity
        out[i] = np.clip(img, 0.0, 1.0)
    return out


_KINDS = {
    "ring-of-gaussians": _ring,
    "two-moons": _two_moons,
    "sprite-images": _sprites,
}


def synth_domain(spec: DomainSpec, count: int, stream: RngStream | None = None) -> np.ndarray:
    """Deterministic dataset for a domain spec. Points come back (n, 2);
    sprite images (n, size, size) with values in [0, 1]."""
    if count < 1:
        raise InvalidArgumentError("count must be >= 1")
    if spec.kind not in _KINDS:
        raise InvalidArgumentError(f"unknown domain kind {spec.kind!r}")
    if stream is None:
        stream = RngStream(spec.seed, f"domain/{spec.kind}")
    return _KINDS[spec.kind](spec, count, stream)


def flatten(samples: np.ndarray) -> np.ndarray:
    return np.asarray(samples).reshape(samples.shape[0], -1)


def sample_shape(spec: DomainSpec):
    """Shape of a single sample for this domain."""
    if spec.kind == "sprite-images":
        size = int(spec.get("size", SPRITE_SIZE))
        return (size, size)
    return (2,)
