"""Tonemapped training loss and PSNR metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DimensionMismatchError
from .image_io import HdrImage
from .radiometry import TonemapConfig, mu_law
from .structure_tensor import DEFAULT_RHO, REC709, st_map_t

DEFAULT_LAMBDA = 1e-2
PSNR_CAP = 99.0


@dataclass(frozen=True)
class LossValue:
    total: float
    mse_term: float
    st_term: float
    lam: float


def mu_law_t(x: Tensor, mu: float) -> Tensor:
    return ag.log1p(x * mu) / np.log1p(mu)


def st_image_t(hwc: Tensor, mu: float, rho: float = DEFAULT_RHO) -> Tensor:
    """Tonemapped ST map of an ``(H, W, 3)`` radiance tensor.

    The map is taken on the luminance of the tonemapped image and is then
    tonemapped once more, as the loss compares ``T(ST(.))`` terms.
    """
    lum = (mu_law_t(hwc, mu) * REC709).sum(axis=-1)
    return mu_law_t(st_map_t(lum, rho), mu)


def loss_t(
    h: Tensor,
    gt: np.ndarray,
    lam: float = DEFAULT_LAMBDA,
    tcfg: TonemapConfig = TonemapConfig(),
    rho: float = DEFAULT_RHO,
) -> tuple[Tensor, Tensor, Tensor]:
    """Differentiable ``(total, mse_term, st_term)`` for an ``(H, W, 3)`` prediction."""
    gt = np.asarray(gt, dtype=np.float64)
    if h.shape != gt.shape:
        raise DimensionMismatchError(f"prediction {h.shape} vs ground truth {gt.shape}")
    diff = mu_law_t(h, tcfg.mu) - mu_law(gt, tcfg.mu)
    mse = (diff * diff).mean()
    gt_st = st_image_t(Tensor(gt), tcfg.mu, rho).data
    st = ag.absolute(st_image_t(h, tcfg.mu, rho) - gt_st).mean()
    return mse + st * lam, mse, st


def loss(
    h: HdrImage,
    gt: HdrImage,
    lam: float = DEFAULT_LAMBDA,
    tcfg: TonemapConfig = TonemapConfig(),
) -> LossValue:
    """Tonemapped MSE plus ``lam`` times the L1 distance of tonemapped ST maps."""
    _, mse, st = loss_t(Tensor(h.data), gt.data, lam, tcfg)
    mse_v, st_v = float(mse.data), float(st.data)
    return LossValue(mse_v + lam * st_v, mse_v, st_v, lam)


def psnr_l(h: HdrImage, gt: HdrImage) -> float:
    """PSNR in dB against a unit peak; identical images report ``PSNR_CAP``."""
    a = np.asarray(h.data, dtype=np.float64)
    b = np.asarray(gt.data, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"images differ in shape: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(mse))


def psnr_mu(h: HdrImage, gt: HdrImage, tcfg: TonemapConfig = TonemapConfig()) -> float:
    return psnr_l(
        HdrImage(mu_law(np.asarray(h.data, dtype=np.float64), tcfg.mu)),
        HdrImage(mu_law(np.asarray(gt.data, dtype=np.float64), tcfg.mu)),
    )
