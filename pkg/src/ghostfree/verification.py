"""Desk-scale verification: synthetic scenes, gradient checks, toy training."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .autograd import Tensor
from .errors import DivergenceError, InvalidDataError
from .image_io import HdrImage, LdrImage
from .losses import DEFAULT_LAMBDA, loss_t
from .network import TINY_CONFIG, NetworkConfig, NetworkParams, forward_t, init_params
from .pipeline import build_stack
from .radiometry import DEFAULT_GAMMA, TonemapConfig

SCENE_EVS = (-2.0, 0.0, 2.0)
FOREGROUND_RADIANCE = 0.9


@dataclass
class SynthScene:
    ldr_stack: list[LdrImage]
    gt: HdrImage
    motion: list[int]
    seed: int


def _radiance(size: int, seed: int, offset: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / (size - 1)
    base = 0.04 + 0.3 * x + 0.12 * y
    texture = gaussian_filter(rng.standard_normal((size, size)), 1.0)
    tint = np.array([1.0, 0.85, 0.7])
    rad = np.clip(base + 0.03 * texture, 0.005, None)[..., None] * tint
    side = max(4, size // 4)
    top = (size - side) // 2
    left = (size - side) // 2 + offset
    lo, hi = max(left, 0), min(left + side, size)
    rad[top:top + side, lo:hi] = FOREGROUND_RADIANCE
    return rad


def synth_scene(
    seed: int = 0, size: int = 16, displacement: int = 2, gamma: float = DEFAULT_GAMMA
) -> SynthScene:
    """Three-exposure bracket of a textured background with a moving bright square.

    The square sits at its base position in the EV 0 frame and is shifted
    horizontally by ``-displacement`` / ``+displacement`` pixels in the EV -2
    and EV +2 frames. Ground truth is the EV 0 radiance.
    """
    if size < 16 or size % 8:
        raise InvalidDataError(f"scene size must be a multiple of 8 and >= 16, got {size}")
    motion = [-displacement, 0, displacement]
    stack = []
    for ev, shift in zip(SCENE_EVS, motion):
        rad = _radiance(size, seed, shift)
        stack.append(LdrImage(np.clip((rad * 2.0 ** ev) ** (1.0 / gamma), 0.0, 1.0), ev))
    return SynthScene(stack, HdrImage(_radiance(size, seed, 0)), motion, seed)


class LossProbe:
    """Total loss of the (EV -2, EV 0) pair as a function of the parameters."""

    def __init__(self, scene: SynthScene, config: NetworkConfig, lam: float = DEFAULT_LAMBDA,
                 tcfg: TonemapConfig = TonemapConfig()):
        self.x1 = build_stack(scene.ldr_stack[0]).data
        self.x2 = build_stack(scene.ldr_stack[1]).data
        self.gt = np.asarray(scene.gt.data, dtype=np.float64)
        self.config = config
        self.lam = lam
        self.tcfg = tcfg

    def terms(self, tensors: dict[str, Tensor]):
        out = forward_t(Tensor(self.x1), Tensor(self.x2), tensors, self.config)
        return loss_t(out.transpose(1, 2, 0), self.gt, self.lam, self.tcfg)

    def value(self, arrays: dict[str, np.ndarray]) -> float:
        total, _, _ = self.terms({k: Tensor(v) for k, v in arrays.items()})
        return float(total.data)

    def gradient(self, arrays: dict[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
        tensors = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        total, _, _ = self.terms(tensors)
        total.backward()
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for k, t in tensors.items()}
        return float(total.data), grads


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param_path: str
    epsilon: float
    checked: int = 0
    entries: list[tuple[str, float, float, float]] = field(default_factory=list, repr=False)


def sample_param_indices(params: NetworkParams, n: int, seed: int = 0):
    """Roughly ``n`` scalar positions spread evenly over every tensor."""
    rng = np.random.default_rng(seed)
    per_tensor = max(1, math.ceil(n / len(params.tensors)))
    picks = []
    for name, arr in params.tensors.items():
        flat = rng.choice(arr.size, size=min(per_tensor, arr.size), replace=False)
        picks.extend((name, np.unravel_index(int(i), arr.shape)) for i in sorted(flat))
    return picks


def grad_check(
    p: NetworkParams,
    scene: SynthScene,
    epsilon: float = 1e-3,
    n_samples: int = 200,
    seed: int = 0,
    indices=None,
    lam: float = DEFAULT_LAMBDA,
) -> GradCheckReport:
    """Compare backpropagated gradients with central finite differences.

    Relative error is ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    probe = LossProbe(scene, p.config, lam)
    arrays = {k: v.copy() for k, v in p.tensors.items()}
    base, grads = probe.gradient(arrays)
    if not math.isfinite(base):
        raise DivergenceError("loss is not finite at the checked parameters", step=0)
    picks = indices if indices is not None else sample_param_indices(p, n_samples, seed)
    worst, worst_path, entries = 0.0, "", []
    for name, idx in picks:
        arr = arrays[name]
        keep = arr[idx]
        arr[idx] = keep + epsilon
        up = probe.value(arrays)
        arr[idx] = keep - epsilon
        down = probe.value(arrays)
        arr[idx] = keep
        fd = (up - down) / (2.0 * epsilon)
        an = float(grads[name][idx])
        rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
        path = f"{name}[{','.join(str(int(i)) for i in np.atleast_1d(idx))}]"
        entries.append((path, an, fd, rel))
        if rel >= worst:
            worst, worst_path = rel, path
    return GradCheckReport(worst, worst_path, epsilon, len(entries), entries)


def cosine_lr(step: int, steps: int, lr_max: float, lr_min: float) -> float:
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / steps))


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    lr: float = 1e-4
    lr_min: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    lam: float = DEFAULT_LAMBDA


def train_toy(
    scene: SynthScene,
    steps: int | None = None,
    train: TrainConfig = TrainConfig(),
    params: NetworkParams | None = None,
    config: NetworkConfig = TINY_CONFIG,
    seed: int = 0,
):
    """Overfit one scene with AdamW and a cosine learning-rate schedule.

    Returns the trained parameters and a per-step list of
    ``(total, mse, st)`` loss values measured before each update.
    """
    steps = train.steps if steps is None else steps
    if steps > 2000:
        raise InvalidDataError("the toy trainer is limited to 2000 steps")
    p = (params or init_params(config, seed)).copy()
    probe = LossProbe(scene, p.config, train.lam)
    m = {k: np.zeros_like(v) for k, v in p.tensors.items()}
    v = {k: np.zeros_like(a) for k, a in p.tensors.items()}
    curve: list[tuple[float, float, float]] = []
    for step in range(steps):
        tensors = {k: Tensor(a, requires_grad=True) for k, a in p.tensors.items()}
        total, mse, st = probe.terms(tensors)
        if not math.isfinite(float(total.data)):
            raise DivergenceError(f"loss became non-finite at step {step}", step=step)
        curve.append((float(total.data), float(mse.data), float(st.data)))
        total.backward()
        lr = cosine_lr(step, steps, train.lr, train.lr_min)
        t = step + 1
        for k, arr in p.tensors.items():
            g = tensors[k].grad
            if g is None:
                g = np.zeros_like(arr)
            m[k] = train.beta1 * m[k] + (1 - train.beta1) * g
            v[k] = train.beta2 * v[k] + (1 - train.beta2) * g * g
            m_hat = m[k] / (1 - train.beta1 ** t)
            v_hat = v[k] / (1 - train.beta2 ** t)
            arr *= 1.0 - lr * train.weight_decay
            arr -= lr * m_hat / (np.sqrt(v_hat) + train.eps)
    return p, curve


def final_loss(scene: SynthScene, p: NetworkParams, lam: float = DEFAULT_LAMBDA) -> float:
    return LossProbe(scene, p.config, lam).value(p.tensors)
