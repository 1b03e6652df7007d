"""Pairwise and sequential exposure fusion.

The network only ever sees two exposures. Longer brackets are folded in one
at a time: start from the median exposure, fuse the darker frames first
(ascending EV), then the brighter ones, and after every step feed the fused
result back as the new reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import network
from .errors import DimensionMismatchError, InvalidDataError
from .image_io import HdrImage, LdrImage, load_ldr, read_sidecar_ev, save_hdr, save_png
from .network import NetworkParams
from .radiometry import DEFAULT_GAMMA, TonemapConfig, assemble_input, ldr_to_hdr, tonemap_mu
from .structure_tensor import DEFAULT_RHO, st_map_of


@dataclass
class FusionJob:
    inputs: list[tuple[str, float | None]]
    params_path: str
    output_path: str
    tonemapped_path: str | None = None
    gamma: float = DEFAULT_GAMMA
    tonemap: TonemapConfig = field(default_factory=TonemapConfig)

    def __post_init__(self):
        if not self.inputs:
            raise InvalidDataError("a fusion job needs at least one input")
        paths = [str(Path(p)) for p, _ in self.inputs]
        if len(set(paths)) != len(paths):
            raise InvalidDataError("duplicate input paths")
        for _, ev in self.inputs:
            if ev is not None and not math.isfinite(ev):
                raise InvalidDataError("exposure values must be finite")


def select_reference(evs: Sequence[float]) -> int:
    """Index of the median exposure; for an even count, the darker middle one."""
    if len(evs) == 0:
        raise InvalidDataError("cannot select a reference from an empty list")
    order = sorted(range(len(evs)), key=lambda i: (evs[i], i))
    return order[(len(evs) - 1) // 2]


def fusion_order(evs: Sequence[float]) -> tuple[int, list[int]]:
    """Reference index and the order in which the other frames are fused.

    Frames not brighter than the reference come first, then brighter ones,
    each group ascending by EV (list order breaks ties).
    """
    ref = select_reference(evs)
    rest = sorted((i for i in range(len(evs)) if i != ref), key=lambda i: (evs[i], i))
    darker = [i for i in rest if evs[i] <= evs[ref]]
    brighter = [i for i in rest if evs[i] > evs[ref]]
    return ref, darker + brighter


def _pad_to(data: np.ndarray, multiple: int) -> np.ndarray:
    h, w = data.shape[:2]
    ph, pw = -h % multiple, -w % multiple
    if ph == 0 and pw == 0:
        return data
    return np.pad(data, ((0, ph), (0, pw), (0, 0)), mode="reflect")


def build_stack(img: LdrImage, gamma: float = DEFAULT_GAMMA, rho: float = DEFAULT_RHO):
    """Seven-channel network input for one exposure."""
    return assemble_input(img, ldr_to_hdr(img, gamma), st_map_of(img.data, rho))


def fuse_pair(
    a: LdrImage, ref: LdrImage, p: NetworkParams, gamma: float = DEFAULT_GAMMA
) -> HdrImage:
    """Fuse ``a`` into the reference ``ref``; the reference is the second network input."""
    if a.data.shape != ref.data.shape:
        raise DimensionMismatchError(
            f"exposures differ in size: {a.data.shape[:2]} vs {ref.data.shape[:2]}"
        )
    h, w = a.height, a.width
    m = p.config.window
    pa = LdrImage(_pad_to(a.data, m), a.ev)
    pr = LdrImage(_pad_to(ref.data, m), ref.ev)
    out = network.forward(build_stack(pa, gamma), build_stack(pr, gamma), p)
    return HdrImage(out.data[:h, :w].copy())


def as_pseudo_ldr(h: HdrImage, gamma: float = DEFAULT_GAMMA) -> LdrImage:
    """Re-encode a fused result as an EV-0 capture whose lift gives back ``h``."""
    return LdrImage(np.clip(h.data, 0.0, 1.0) ** (1.0 / gamma), 0.0)


def fuse_sequence(
    images: Sequence[LdrImage] | FusionJob,
    p: NetworkParams | None = None,
    gamma: float = DEFAULT_GAMMA,
) -> HdrImage:
    """Fuse any number of exposures with repeated pairwise fusion.

    A single exposure is returned as its lifted radiance clamped to [0, 1].
    """
    if isinstance(images, FusionJob):
        images, gamma = load_job_images(images), images.gamma
    images = list(images)
    if not images:
        raise InvalidDataError("nothing to fuse")
    if len({img.data.shape for img in images}) != 1:
        raise DimensionMismatchError("all exposures must share the same size")
    if len(images) == 1:
        return HdrImage(np.clip(ldr_to_hdr(images[0], gamma).data, 0.0, 1.0))
    if p is None:
        raise InvalidDataError("network parameters are required to fuse several exposures")
    ref, order = fusion_order([img.ev for img in images])
    current = images[ref]
    fused = None
    for i in order:
        fused = fuse_pair(images[i], current, p, gamma)
        current = as_pseudo_ldr(fused, gamma)
    return fused


def load_job_images(job: FusionJob) -> list[LdrImage]:
    """Load every input; multi-frame jobs need an EV for each frame."""
    images = []
    for path, ev in job.inputs:
        img = load_ldr(path, ev)
        if ev is None and len(job.inputs) > 1 and read_sidecar_ev(path) is None:
            raise InvalidDataError(f"{path}: no EV given and no JSON sidecar found")
        images.append(img)
    return images


def run_job(job: FusionJob) -> HdrImage:
    """Load inputs and parameters, fuse, and write the requested outputs."""
    images = load_job_images(job)
    params = network.load_params(job.params_path) if len(images) > 1 else None
    result = fuse_sequence(images, params, job.gamma)
    save_hdr(result, job.output_path)
    if job.tonemapped_path:
        save_png(tonemap_mu(result, job.tonemap).data, job.tonemapped_path)
    return result
