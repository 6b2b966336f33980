"""Image transforms, stochastic sub-policy application and baseline preprocessing.

Images are ``uint8`` arrays shaped (H, W, 3); every transform also accepts a
stack shaped (N, H, W, 3) and treats each image independently, which is how
:func:`augment_batch` amortises per-call overhead. All randomness comes from
an explicitly passed :class:`numpy.random.Generator`.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DomainError
from .policy_space import MAGNITUDE_FREE, Op, SubPolicy

FILL = np.array([128, 128, 128], dtype=np.uint8)

_GEOMETRIC = frozenset({Op.ShearX, Op.ShearY, Op.TranslateX, Op.TranslateY, Op.Rotate})


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; identical seeds give identical draws on every platform."""
    if int(seed) < 0:
        raise DomainError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def substream(key: int, *index: int) -> np.random.Generator:
    """Independent stream derived from ``(key, *index)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(key), *map(int, index)])))


def _as_stack(img):
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        raise DomainError(f"images must be uint8, got {arr.dtype}")
    if arr.ndim == 3 and arr.shape[-1] == 3:
        return arr[None], True
    if arr.ndim == 4 and arr.shape[-1] == 3:
        return arr, False
    raise DomainError(f"expected (H, W, 3) or (N, H, W, 3) image data, got shape {arr.shape}")


def _luminance(stack):
    rgb = stack.astype(np.int64)
    return (rgb[..., 0] * 19595 + rgb[..., 1] * 38470 + rgb[..., 2] * 7471 + 0x8000) >> 16


def _blend(degenerate, stack, factor):
    out = degenerate + factor * (stack.astype(np.float64) - degenerate)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def _geometric_coeffs(op, m, height, width):
    if op is Op.ShearX:
        return (1.0, m, 0.0, 0.0, 1.0, 0.0)
    if op is Op.ShearY:
        return (1.0, 0.0, 0.0, m, 1.0, 0.0)
    if op is Op.TranslateX:
        return (1.0, 0.0, m, 0.0, 1.0, 0.0)
    if op is Op.TranslateY:
        return (1.0, 0.0, 0.0, 0.0, 1.0, m)
    # counter-clockwise about the image centre, y axis pointing down
    theta = math.radians(m)
    cos, sin = math.cos(theta), math.sin(theta)
    cx, cy = width / 2.0, height / 2.0
    return (cos, -sin, cx - cos * cx + sin * cy,
            sin, cos, cy - sin * cx - cos * cy)


def _autocontrast(stack):
    lo = stack.min(axis=(1, 2), keepdims=True).astype(np.float64)
    hi = stack.max(axis=(1, 2), keepdims=True).astype(np.float64)
    span = hi - lo
    flat = span <= 0
    scale = np.where(flat, 1.0, 255.0 / np.where(flat, 1.0, span))
    lo = np.where(flat, 0.0, lo)
    out = np.floor((stack - lo) * scale + 0.5)
    return np.clip(out, 0, 255).astype(np.uint8)


def apply_operation(img, op: Op, magnitude=None) -> np.ndarray:
    """Apply one transform; ``magnitude`` is in the operation's actual units.

    Geometric transforms sample bilinearly and fill uncovered pixels with
    mid-gray. The four enhancement ops blend the input with a degenerate
    image (factor 0 gives the degenerate image, 1 the input).
    """
    op = Op(op)
    if (magnitude is None) != (op in MAGNITUDE_FREE):
        if magnitude is None:
            raise DomainError(f"{op.name} requires a magnitude")
        raise DomainError(f"{op.name} takes no magnitude, got {magnitude!r}")
    stack, single = _as_stack(img)
    if magnitude is not None:
        magnitude = float(magnitude)
        if not math.isfinite(magnitude):
            raise DomainError(f"{op.name}: magnitude must be finite")

    if op in _GEOMETRIC:
        coeffs = np.array(_geometric_coeffs(op, magnitude, stack.shape[1], stack.shape[2]))
        out = _kernels.affine_warp(np.ascontiguousarray(stack), coeffs, FILL)
    elif op is Op.Solarize:
        out = np.where(stack > magnitude, 255 - stack, stack).astype(np.uint8)
    elif op is Op.Posterize:
        bits = int(math.copysign(math.floor(abs(magnitude) + 0.5), magnitude))
        if not 0 <= bits <= 8:
            raise DomainError(f"Posterize keeps 0..8 bits, got {magnitude}")
        mask = np.uint8((0xFF << (8 - bits)) & 0xFF)
        out = stack & mask
    elif op is Op.Contrast:
        lum = _luminance(stack)
        mean = np.floor(lum.mean(axis=(1, 2)) + 0.5)
        out = _blend(mean[:, None, None, None], stack, magnitude)
    elif op is Op.Color:
        gray = _luminance(stack)[..., None].astype(np.float64)
        out = _blend(gray, stack, magnitude)
    elif op is Op.Brightness:
        out = _blend(0.0, stack, magnitude)
    elif op is Op.Sharpness:
        blurred = _kernels.smooth3x3(np.ascontiguousarray(stack)).astype(np.float64)
        out = _blend(blurred, stack, magnitude)
    elif op is Op.AutoContrast:
        out = _autocontrast(stack)
    elif op is Op.Invert:
        out = 255 - stack
    elif op is Op.Equalize:
        out = _kernels.equalize(np.ascontiguousarray(stack))
    else:  # pragma: no cover
        raise DomainError(f"unhandled operation {op!r}")
    return out[0] if single else out


def _draw_pair(rng: np.random.Generator):
    u1 = rng.random()
    u2 = rng.random()
    return u1, u2


def _apply_decided(img, sp: SubPolicy, apply1: bool, apply2: bool):
    out = img
    if apply1:
        out = apply_operation(out, sp.op1, sp.mag1)
    if apply2:
        out = apply_operation(out, sp.op2, sp.mag2)
    if out is img:
        out = np.array(img, copy=True)
    return out


def apply_sub_policy(img, sp: SubPolicy, rng: np.random.Generator) -> np.ndarray:
    """Apply ``sp`` to one image; always consumes exactly two uniforms from ``rng``."""
    u1, u2 = _draw_pair(rng)
    return _apply_decided(img, sp, u1 < sp.prob1, u2 < sp.prob2)


def _batch_draws(rng, n_images, n_pool):
    # One draw from the caller's stream keys a dedicated generator; element i
    # of the arrays below belongs to image i no matter how work is split.
    key = int(rng.integers(0, 2**63 - 1))
    g = substream(key, n_images)
    idx = g.integers(0, n_pool, size=n_images)
    u = g.random((n_images, 2))
    return idx, u


def augment_batch(imgs, pool: Sequence[SubPolicy], rng: np.random.Generator,
                  workers: int = 1, return_indices: bool = False):
    """Augment each image with one sub-policy drawn uniformly from ``pool``.

    ``imgs`` is a uint8 stack (N, H, W, 3) or a sequence of (H, W, 3) images.
    The result has the same container type and order as the input and is
    independent of ``workers``.
    """
    pool = list(pool)
    if not pool:
        raise DomainError("augment_batch needs a non-empty sub-policy pool")
    stacked = isinstance(imgs, np.ndarray)
    n = len(imgs)
    idx, u = _batch_draws(rng, n, len(pool))
    apply1 = u[:, 0] < np.array([pool[i].prob1 for i in idx])
    apply2 = u[:, 1] < np.array([pool[i].prob2 for i in idx])

    if stacked:
        out = np.array(imgs, copy=True)
        groups = {}
        for i in range(n):
            if apply1[i] or apply2[i]:
                groups.setdefault((int(idx[i]), bool(apply1[i]), bool(apply2[i])), []).append(i)
        jobs = [(np.asarray(members), pool[k], a1, a2) for (k, a1, a2), members in sorted(groups.items())]

        def run(job):
            members, sp, a1, a2 = job
            return members, _apply_decided(out[members], sp, a1, a2)

        if workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(workers) as ex:
                results = list(ex.map(run, jobs))
        else:
            results = [run(j) for j in jobs]
        for members, res in results:
            out[members] = res
    else:
        def run_one(i):
            return _apply_decided(imgs[i], pool[idx[i]], bool(apply1[i]), bool(apply2[i]))

        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                out = list(ex.map(run_one, range(n)))
        else:
            out = [run_one(i) for i in range(n)]
    if return_indices:
        return out, idx
    return out


# --------------------------------------------------------------------------
# Baseline preprocessing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PreprocessConfig:
    pad: int = 4
    crop: int | tuple[int, int] | None = None  # output (h, w); None keeps the input size
    horizontal_flip_prob: float = 0.5
    cutout_size: int | None = 16
    standardize: bool = True

    def __post_init__(self):
        if self.pad < 0:
            raise DomainError(f"pad must be >= 0, got {self.pad}")
        if not 0.0 <= self.horizontal_flip_prob <= 1.0:
            raise DomainError(f"horizontal_flip_prob must lie in [0, 1], got {self.horizontal_flip_prob}")
        if self.cutout_size is not None and self.cutout_size < 1:
            raise DomainError(f"cutout_size must be positive, got {self.cutout_size}")

    def crop_shape(self, height, width):
        if self.crop is None:
            return height, width
        if isinstance(self.crop, int):
            return self.crop, self.crop
        return tuple(self.crop)


def standardize(img) -> np.ndarray:
    """Per-image zero mean / unit std; the std is floored at 1/sqrt(#samples)."""
    x = np.asarray(img, dtype=np.float64)
    axes = tuple(range(x.ndim - 3, x.ndim))
    mean = x.mean(axis=axes, keepdims=True)
    n = x.shape[-1] * x.shape[-2] * x.shape[-3]
    std = np.maximum(x.std(axis=axes, keepdims=True), 1.0 / math.sqrt(n))
    return (x - mean) / std


def pad_crop_flip_cutout(img, cfg: PreprocessConfig, rng: np.random.Generator) -> np.ndarray:
    """The 8-bit stage: zero-pad, random crop, horizontal flip, Cutout.

    Consumes exactly five draws from ``rng`` (crop y, crop x, flip, cutout
    centre y, cutout centre x) whatever the configuration.
    """
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[-1] != 3:
        raise DomainError(f"expected a (H, W, 3) uint8 image, got {img.dtype} {img.shape}")
    h, w = img.shape[:2]
    ch, cw = cfg.crop_shape(h, w)
    ph, pw = h + 2 * cfg.pad, w + 2 * cfg.pad
    if not (1 <= ch <= ph and 1 <= cw <= pw):
        raise DomainError(f"crop {ch}x{cw} does not fit the padded {ph}x{pw} image")
    if cfg.cutout_size is not None and cfg.cutout_size > min(h, w):
        raise DomainError(f"cutout_size {cfg.cutout_size} exceeds image size {h}x{w}")

    oy = int(rng.integers(0, ph - ch + 1))
    ox = int(rng.integers(0, pw - cw + 1))
    flip = rng.random() < cfg.horizontal_flip_prob
    cy = int(rng.integers(0, ch))
    cx = int(rng.integers(0, cw))

    padded = np.pad(img, ((cfg.pad, cfg.pad), (cfg.pad, cfg.pad), (0, 0))) if cfg.pad else img
    out = np.array(padded[oy:oy + ch, ox:ox + cw], copy=True)
    if flip:
        out = out[:, ::-1].copy()
    if cfg.cutout_size is not None:
        half = cfg.cutout_size // 2
        y0, x0 = max(cy - half, 0), max(cx - half, 0)
        y1, x1 = min(cy - half + cfg.cutout_size, ch), min(cx - half + cfg.cutout_size, cw)
        out[y0:y1, x0:x1] = 0
    return out


def baseline_preprocess(img, cfg: PreprocessConfig, rng: np.random.Generator) -> np.ndarray:
    """Pad/crop/flip/Cutout, then standardise when ``cfg.standardize`` is set.

    Returns uint8 without standardisation and float64 with it. Learned
    sub-policies are applied by the caller before this step.
    """
    out = pad_crop_flip_cutout(img, cfg, rng)
    return standardize(out) if cfg.standardize else out
