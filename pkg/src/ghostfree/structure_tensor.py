"""Gradient fields, Gaussian-smoothed structure tensors and scalar ST maps.

All kernels are built from :mod:`ghostfree.autograd` operations so the loss
can differentiate through the ST map of a network output. The public
functions accept and return plain numpy arrays.

The scalar map is the anisotropic edge energy ``sqrt(l1) - sqrt(l2)`` of the
smoothed tensor eigenvalues. Without smoothing ``l2 = 0`` and the map is the
plain gradient magnitude; with smoothing, isotropic noise contributes to both
eigenvalues and largely cancels, while edges survive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import InvalidDataError

REC709 = np.array([0.2126, 0.7152, 0.0722])
DEFAULT_RHO = 1.5
NORM_PERCENTILE = 99.9

_SOBEL_SMOOTH = (1.0, 2.0, 1.0)
_SOBEL_DIFF = (-1.0, 0.0, 1.0)


@dataclass(frozen=True)
class GradientField:
    gx: np.ndarray
    gy: np.ndarray


@dataclass(frozen=True)
class StTensorField:
    jxx: np.ndarray
    jxy: np.ndarray
    jyy: np.ndarray


def luminance(img) -> np.ndarray:
    """Rec. 709 luma of an ``(H, W, 3)`` image."""
    data = np.asarray(getattr(img, "data", img), dtype=np.float64)
    if data.ndim != 3 or data.shape[-1] != 3:
        raise InvalidDataError(f"luminance needs 3 channels, got shape {data.shape}")
    return data @ REC709


def gaussian_kernel(rho: float) -> np.ndarray:
    """Sampled Gaussian truncated at ``ceil(3 rho)`` and renormalized to sum 1."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    if rho == 0:
        return np.ones(1)
    radius = math.ceil(3 * rho)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    with np.errstate(over="ignore"):  # very small rho underflows to a delta
        w = np.exp(-0.5 * (x / rho) ** 2)
    return w / w.sum()


def _filter_axis(x: Tensor, weights, axis: int) -> Tensor:
    """Correlate a 2-D tensor with a 1-D kernel along ``axis``, edge-padded."""
    r = len(weights) // 2
    if r == 0:
        return x * float(weights[0])
    widths = [(0, 0), (0, 0)]
    widths[axis] = (r, r)
    xp = ag.pad_edge(x, widths)
    n = x.shape[axis]
    acc = None
    for k, wk in enumerate(weights):
        if wk == 0.0:
            continue
        sl = [slice(None), slice(None)]
        sl[axis] = slice(k, k + n)
        term = xp[tuple(sl)] * float(wk)
        acc = term if acc is None else acc + term
    return acc


def sobel_t(lum: Tensor) -> tuple[Tensor, Tensor]:
    """Sobel derivatives scaled by 1/8 with replicate borders."""
    if lum.shape[0] < 3 or lum.shape[1] < 3:
        raise InvalidDataError("gradients need an image of at least 3x3")
    smooth = np.array(_SOBEL_SMOOTH) / 4.0
    diff = np.array(_SOBEL_DIFF) / 2.0
    gx = _filter_axis(_filter_axis(lum, smooth, 0), diff, 1)
    gy = _filter_axis(_filter_axis(lum, diff, 0), smooth, 1)
    return gx, gy


def smooth_t(x: Tensor, rho: float) -> Tensor:
    w = gaussian_kernel(rho)
    return _filter_axis(_filter_axis(x, w, 0), w, 1)


def tensor_t(gx: Tensor, gy: Tensor, rho: float) -> tuple[Tensor, Tensor, Tensor]:
    return smooth_t(gx * gx, rho), smooth_t(gx * gy, rho), smooth_t(gy * gy, rho)


def response_t(jxx: Tensor, jxy: Tensor, jyy: Tensor) -> Tensor:
    """sqrt(l1) - sqrt(l2) of the 2x2 tensor at every pixel."""
    half_trace = (jxx + jyy) * 0.5
    half_diff = (jxx - jyy) * 0.5
    disc = ag.sqrt(half_diff * half_diff + jxy * jxy)
    big = ag.clip(half_trace + disc, 0.0, np.inf)
    small = ag.clip(half_trace - disc, 0.0, np.inf)
    return ag.sqrt(big) - ag.sqrt(small)


def normalize_t(r: Tensor) -> Tensor:
    """Divide by the 99.9th percentile response and clamp to [0, 1]."""
    scale = ag.quantile(r, NORM_PERCENTILE / 100.0)
    if scale.data <= 0:
        scale = ag.quantile(r, 1.0)
        if scale.data <= 0:
            return r * 0.0
    return ag.clip(r / scale, 0.0, 1.0)


def st_map_t(lum: Tensor, rho: float = DEFAULT_RHO) -> Tensor:
    """Differentiable luminance -> ST map."""
    gx, gy = sobel_t(lum)
    return normalize_t(response_t(*tensor_t(gx, gy, rho)))


def gradients(img: np.ndarray) -> GradientField:
    gx, gy = sobel_t(Tensor(_plane(img)))
    return GradientField(gx.data, gy.data)


def structure_tensor(g: GradientField, rho: float = DEFAULT_RHO) -> StTensorField:
    jxx, jxy, jyy = tensor_t(Tensor(g.gx), Tensor(g.gy), rho)
    return StTensorField(jxx.data, jxy.data, jyy.data)


def st_map(t: StTensorField) -> np.ndarray:
    r = response_t(Tensor(t.jxx), Tensor(t.jxy), Tensor(t.jyy))
    return normalize_t(r).data


def gradient_magnitude_map(img: np.ndarray) -> np.ndarray:
    """Percentile-normalized Sobel magnitude; the unsmoothed baseline."""
    gx, gy = sobel_t(Tensor(_plane(img)))
    return normalize_t(ag.sqrt(gx * gx + gy * gy)).data


def st_map_of(img, rho: float = DEFAULT_RHO) -> np.ndarray:
    """ST map of an RGB image, computed on its luminance."""
    return st_map_t(Tensor(luminance(img)), rho).data


def _plane(img) -> np.ndarray:
    data = np.asarray(img, dtype=np.float64)
    if data.ndim != 2:
        raise InvalidDataError(f"expected a single-channel image, got shape {data.shape}")
    return data
