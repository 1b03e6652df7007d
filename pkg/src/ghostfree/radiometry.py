"""Exposure lifting, mu-law tonemapping and network input assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidDataError
from .image_io import HdrImage, LdrImage

DEFAULT_GAMMA = 2.2
DEFAULT_MU = 5000.0


@dataclass(frozen=True)
class TonemapConfig:
    mu: float = DEFAULT_MU
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not self.mu > 0 or not self.gamma > 0:
            raise InvalidDataError("mu and gamma must be positive")


@dataclass(frozen=True)
class InputStack:
    """Per-exposure network input, ``data`` is ``(7, H, W)``.

    Channels 0-2 hold the LDR image, 3-5 the lifted radiance and 6 the ST map.
    """

    data: np.ndarray
    ev: float = 0.0

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def ldr_to_hdr(img: LdrImage, gamma: float = DEFAULT_GAMMA) -> HdrImage:
    """Linearize and divide by exposure time: ``H = I**gamma / t``.

    Values above 1 are kept; short exposures legitimately lift highlights
    past the unit range.
    """
    if not gamma > 0:
        raise InvalidDataError(f"gamma must be positive, got {gamma}")
    return HdrImage(img.data ** gamma / img.t)


def mu_law(x, mu: float = DEFAULT_MU):
    """``log(1 + mu x) / log(1 + mu)``; the log base cancels in the ratio."""
    return np.log1p(mu * x) / np.log1p(mu)


def tonemap_mu(img: HdrImage, cfg: TonemapConfig = TonemapConfig()) -> HdrImage:
    return HdrImage(mu_law(img.data, cfg.mu))


def assemble_input(ldr: LdrImage, hdr: HdrImage, st: np.ndarray) -> InputStack:
    st = np.asarray(st, dtype=np.float64)
    shapes = {ldr.data.shape[:2], hdr.data.shape[:2], st.shape}
    if len(shapes) != 1:
        raise DimensionMismatchError(
            f"input planes differ in size: ldr {ldr.data.shape[:2]}, "
            f"hdr {hdr.data.shape[:2]}, st {st.shape}"
        )
    data = np.concatenate(
        [
            ldr.data.transpose(2, 0, 1),
            np.asarray(hdr.data, dtype=np.float64).transpose(2, 0, 1),
            st[None],
        ]
    )
    return InputStack(data, ldr.ev)
