"""Underwater image formation: forward synthesis, inversion, correction mask.

Two forward models are provided and kept separate. The saturating-backscatter
model ("eq6")

    I_c = J_c * exp(-beta_c z) + B_inf_c * (1 - exp(-beta_c z))

is a per-pixel convex combination of scene radiance and asymptotic
backscatter, and admits the closed-form inverse implemented by invert(). The
diffuse-plus-additive variant ("eq1")

    I_c = J_c * W_c * exp(-beta_c z) + B_c

carries a per-channel diffuse downwelling gain W_c and an additive
backscatter plane B_c; no attempt is made to merge the two models.

Attenuation beta and backscatter may be per-channel scalars or full
per-pixel planes; everything broadcasts to (height, width, 3) internally.
All operations are pure per-pixel maps.

Parameter sampling draws per-channel beta from uniform ranges ordered so red
attenuates hardest (implementation constants, chosen for physical
plausibility, not measured values): clear R [0.30, 0.50], G [0.04, 0.10],
B [0.02, 0.08]; coastal R [0.50, 0.90], G [0.15, 0.35], B [0.10, 0.30];
turbid R [0.90, 1.60], G [0.40, 0.90], B [0.35, 0.80] (1/m).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch

# exp(80) overflows any sensible radiance scale; pixels past this are
# unrecoverable by inversion and reported as such instead of returning inf.
_UNRECOVERABLE_BETA_Z = 80.0

_NORM_STD_FLOOR = 1e-5

_BETA_RANGES = {
    "clear":   ((0.30, 0.50), (0.04, 0.10), (0.02, 0.08)),
    "coastal": ((0.50, 0.90), (0.15, 0.35), (0.10, 0.30)),
    "turbid":  ((0.90, 1.60), (0.40, 0.90), (0.35, 0.80)),
}
_B_INF_RANGE = (0.05, 0.40)
_W_JITTER = 0.15


@dataclass(frozen=True)
class ImagePlanes:
    """Three equal-sized planes of non-negative finite radiance."""

    data: np.ndarray  # (h, w, 3)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) planes, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("radiance values must be finite")
        if arr.min() < 0:
            raise ValueError("radiance values must be non-negative")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class RangeMap:
    """Per-pixel range in meters, strictly positive and finite."""

    data: np.ndarray  # (h, w)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 2:
            raise ValueError(f"expected (h, w) range map, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("range values must be finite")
        if arr.min() <= 0:
            raise ValueError("range values must be strictly positive")
        object.__setattr__(self, "data", arr)


@dataclass(frozen=True)
class CorrectionMask:
    """Single-plane channel-aggregated correction factor."""

    data: np.ndarray  # (h, w)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 2:
            raise ValueError(f"expected (h, w) mask, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("mask values must be finite")
        object.__setattr__(self, "data", arr)


@dataclass(frozen=True)
class WaterParams:
    """Attenuation/backscatter parameters; per-channel scalars or planes.

    mode "eq6" uses beta and b_inf (saturating backscatter); mode "eq1" uses
    beta, w_diffuse, and the additive plane b_additive.
    """

    beta: np.ndarray        # (3,) or (h, w, 3), 1/m, >= 0
    b_inf: np.ndarray       # (3,) or (h, w, 3), >= 0
    w_diffuse: np.ndarray = field(default_factory=lambda: np.ones(3))  # (3,) > 0
    b_additive: np.ndarray | None = None  # eq1 additive plane, >= 0
    mode: str = "eq6"

    def __post_init__(self):
        if self.mode not in ("eq1", "eq6"):
            raise ValueError(f"mode must be 'eq1' or 'eq6', got {self.mode!r}")
        beta = np.asarray(self.beta, dtype=float)
        b_inf = np.asarray(self.b_inf, dtype=float)
        w = np.asarray(self.w_diffuse, dtype=float).reshape(3)
        if beta.min() < 0 or b_inf.min() < 0:
            raise ValueError("beta and b_inf must be non-negative")
        if w.min() <= 0:
            raise ValueError("w_diffuse must be positive")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "b_inf", b_inf)
        object.__setattr__(self, "w_diffuse", w)
        if self.b_additive is not None:
            b_add = np.asarray(self.b_additive, dtype=float)
            if b_add.min() < 0:
                raise ValueError("b_additive must be non-negative")
            object.__setattr__(self, "b_additive", b_add)


@dataclass(frozen=True)
class InvertResult:
    planes: ImagePlanes
    clamp_count: int
    unrecoverable_count: int


def _broadcast(param: np.ndarray, shape, name: str) -> np.ndarray:
    arr = np.asarray(param, dtype=float)
    try:
        if arr.ndim == 1:
            return np.broadcast_to(arr.reshape(1, 1, 3), shape)
        return np.broadcast_to(arr, shape)
    except ValueError:
        raise DimensionMismatch(
            f"{name} shape {arr.shape} does not broadcast to {shape}") from None


def _check_dims(img: ImagePlanes, z: RangeMap):
    if (img.height, img.width) != z.data.shape:
        raise DimensionMismatch(
            f"image {img.height}x{img.width} vs range map {z.data.shape}")


def synthesize(j: ImagePlanes, z: RangeMap, p: WaterParams) -> ImagePlanes:
    """Forward image formation in the configured mode."""
    _check_dims(j, z)
    shape = j.data.shape
    beta = _broadcast(p.beta, shape, "beta")
    att = np.exp(-beta * z.data[:, :, None])
    if p.mode == "eq6":
        b_inf = _broadcast(p.b_inf, shape, "b_inf")
        out = j.data * att + b_inf * (1.0 - att)
    else:
        out = j.data * p.w_diffuse.reshape(1, 1, 3) * att
        if p.b_additive is not None:
            out = out + _broadcast(p.b_additive, shape, "b_additive")
    return ImagePlanes(out)


def invert(i: ImagePlanes, z: RangeMap, p: WaterParams) -> InvertResult:
    """Closed-form inverse of the saturating-backscatter forward model.

    Negative intermediate results clamp to zero and are counted per
    pixel-channel entry; entries with beta*z past the overflow guard are
    zeroed and counted as unrecoverable.
    """
    if p.mode != "eq6":
        raise ValueError("invert requires eq6-mode parameters")
    _check_dims(i, z)
    shape = i.data.shape
    beta = _broadcast(p.beta, shape, "beta")
    b_inf = _broadcast(p.b_inf, shape, "b_inf")
    bz = beta * z.data[:, :, None]
    bad = bz > _UNRECOVERABLE_BETA_Z
    bz_safe = np.where(bad, 0.0, bz)
    att = np.exp(-bz_safe)
    j_hat = (i.data - b_inf * (1.0 - att)) * np.exp(bz_safe)
    neg = (j_hat < 0) & ~bad
    j_hat = np.where(neg | bad, 0.0, j_hat)
    return InvertResult(ImagePlanes(j_hat), int(neg.sum()), int(bad.sum()))


def correction_mask(i: ImagePlanes, j_hat: ImagePlanes,
                    eps: float = 1e-6) -> CorrectionMask:
    """Channel-aggregated ratio mask: mean over channels of j_hat/(i + eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if i.data.shape != j_hat.data.shape:
        raise DimensionMismatch(
            f"image {i.data.shape} vs estimate {j_hat.data.shape}")
    gamma = np.mean(j_hat.data / (i.data + eps), axis=2)
    return CorrectionMask(gamma)


def apply_mask(f: ImagePlanes, mask: CorrectionMask) -> np.ndarray:
    """Scale channels by the mask, then normalize per pixel across channels.

    Returns a raw (h, w, 3) array: the normalization is zero-mean by
    construction, so the result is not a radiance image.
    """
    if (f.height, f.width) != mask.data.shape:
        raise DimensionMismatch(
            f"image {f.data.shape} vs mask {mask.data.shape}")
    scaled = f.data * mask.data[:, :, None]
    mean = scaled.mean(axis=2, keepdims=True)
    std = scaled.std(axis=2, keepdims=True)
    return (scaled - mean) / (std + _NORM_STD_FLOOR)


def sample_params(seed: int, turbidity: str, mode: str = "eq6") -> WaterParams:
    """Draw per-channel water parameters for a named turbidity class.

    Deterministic per seed. The backscatter triple is resampled whole until
    the red component does not exceed the blue one. In eq1 mode the sampled
    asymptotic backscatter doubles as the additive plane.
    """
    if turbidity not in _BETA_RANGES:
        raise ValueError(f"unknown turbidity {turbidity!r}; "
                         f"expected one of {sorted(_BETA_RANGES)}")
    rng = np.random.default_rng(seed)
    beta = np.array([rng.uniform(lo, hi) for lo, hi in _BETA_RANGES[turbidity]])
    while True:
        b_inf = rng.uniform(*_B_INF_RANGE, size=3)
        if b_inf[0] <= b_inf[2]:
            break
    w = 1.0 + rng.uniform(-_W_JITTER, _W_JITTER, size=3)
    b_additive = b_inf if mode == "eq1" else None
    return WaterParams(beta=beta, b_inf=b_inf, w_diffuse=w,
                       b_additive=b_additive, mode=mode)
