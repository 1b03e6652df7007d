"""Acceptance suite.

Each test checks one acceptance criterion with its pinned tolerance and time
budget, and prints a single ``ACCEPTANCE <n> <PASS|FAIL>`` line whatever the
outcome.
"""

import time

import mpmath
import numpy as np
import pytest

from ghostfree import network, pipeline
from ghostfree.image_io import HdrImage, LdrImage, load_hdr, save_hdr
from ghostfree.losses import psnr_l, psnr_mu
from ghostfree.network import NetworkConfig, TINY_CONFIG, init_params, load_params, save_params
from ghostfree.pipeline import as_pseudo_ldr, build_stack, fuse_pair, fuse_sequence
from ghostfree.radiometry import TonemapConfig, ldr_to_hdr, tonemap_mu
from ghostfree.structure_tensor import gradient_magnitude_map, gradients, st_map, structure_tensor
from ghostfree.verification import final_loss, grad_check, synth_scene, train_toy

mpmath.mp.dps = 40


@pytest.fixture
def criterion(capsys):
    """Yield a recorder; print its verdict line even when the test fails."""
    state = {}

    def record(number, title, ok, detail, budget, elapsed):
        state.update(number=number, title=title, ok=ok and elapsed < budget,
                     detail=f"{detail}; {elapsed:.2f}s of {budget:g}s budget")
        return state["ok"]

    yield record
    if state:
        verdict = "PASS" if state["ok"] else "FAIL"
        with capsys.disabled():
            print(f"\nACCEPTANCE {state['number']} {verdict} {state['title']}: {state['detail']}")


@pytest.fixture(scope="module")
def full_params():
    return init_params(NetworkConfig(), seed=0)


# 1 ------------------------------------------------------------------------

def test_criterion_1_radiometry_exactness(criterion):
    start = time.perf_counter()
    gamma, mu = 2.2, 5000
    codes = np.linspace(0.0, 1.0, 1000)
    evs = np.repeat([-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 0.5], 125)
    worst = 0.0
    for ev in np.unique(evs):
        got = ldr_to_hdr(LdrImage(codes.reshape(10, 100, 1).repeat(3, -1), ev), gamma).data[..., 0]
        for value, code in zip(got.ravel(), codes):
            want = mpmath.mpf(code) ** mpmath.mpf("2.2") / mpmath.mpf(2) ** mpmath.mpf(ev)
            worst = max(worst, _rel(value, want))
    radiance = np.concatenate([[0.0], np.logspace(-6, 3, 999)])
    got = tonemap_mu(HdrImage(radiance.reshape(10, 100, 1).repeat(3, -1)), TonemapConfig(mu)).data
    for value, h in zip(got[..., 0].ravel(), radiance):
        want = mpmath.log(1 + mu * mpmath.mpf(h)) / mpmath.log(1 + mu)
        worst = max(worst, _rel(value, want))
    elapsed = time.perf_counter() - start
    ok = criterion(1, "radiometry exactness", worst < 1e-6,
                   f"max rel error {worst:.2e} (< 1e-6)", 1.0, elapsed)
    assert ok


def _rel(value, want):
    if want == 0:
        return abs(float(value))
    return float(abs(mpmath.mpf(float(value)) - want) / abs(want))


# 2 ------------------------------------------------------------------------

def test_criterion_2_structure_tensor_noise_robustness(criterion):
    start = time.perf_counter()
    size = 64
    img = np.full((size, size), 0.2)
    img[:, size // 2:] = 0.8
    img += np.random.default_rng(2024).normal(0.0, 0.02, img.shape)
    cols = np.arange(size)
    flat = np.broadcast_to(np.abs(cols - size / 2 + 0.5) > 8, img.shape)
    edge = np.broadcast_to(np.isin(cols, [size // 2 - 1, size // 2]), img.shape)

    def flat_over_edge(m):
        return m[flat].mean() / m[edge].mean()

    st = flat_over_edge(st_map(structure_tensor(gradients(img), 1.5)))
    gm = flat_over_edge(gradient_magnitude_map(img))
    elapsed = time.perf_counter() - start
    ok = criterion(2, "structure-tensor noise robustness", st < gm,
                   f"flat/edge response st_map {st:.4f} vs gradient magnitude {gm:.4f}",
                   1.0, elapsed)
    assert ok


# 3 ------------------------------------------------------------------------

def test_criterion_3_architecture_invariants(criterion, full_params):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    cfg = full_params.config
    failures = []
    for trial in range(100):
        h, w = 8 * rng.integers(1, 3, size=2)
        ldr = LdrImage(rng.random((h, w, 3)), float(rng.integers(-3, 4)))
        stack = build_stack(ldr)
        x = stack.data
        checks = {
            "7-channel assembly": x.shape == (7, h, w)
            and np.array_equal(x[:3], ldr.data.transpose(2, 0, 1))
            and np.array_equal(x[3:6], ldr_to_hdr(ldr).data.transpose(2, 0, 1)),
        }
        ref = build_stack(LdrImage(rng.random((h, w, 3)), 0.0))
        phi1 = network.can_encode(stack, full_params)
        phi2 = network.can_encode(ref, full_params)
        checks["64-channel encoder"] = phi1.shape == (64, h, w)
        attended, cattn = network.ccam(phi1, phi2, full_params, return_attention=True)
        checks["ccam row-stochastic"] = (cattn.shape == (64, 64)
                                         and np.abs(cattn.sum(-1) - 1).max() <= 1e-6
                                         and (cattn >= 0).all())
        fused = np.concatenate([phi2, attended])
        checks["128-channel decoder input"] = fused.shape == (cfg.decoder_channels, h, w) == (128, h, w)
        block = int(rng.integers(0, 3))
        out, sattn = network.swin_block(fused, full_params, block, shifted=bool(block % 2),
                                        return_attention=True)
        checks["swin row-stochastic"] = np.abs(sattn.sum(-1) - 1).max() <= 1e-6 and (sattn >= 0).all()
        checks["residual shape"] = out.shape == fused.shape
        y = network.forward(stack, ref, full_params)
        checks["output shape"] = y.data.shape == (h, w, 3)
        checks.update(_conv_checks(rng))
        failures += [f"trial {trial}: {name}" for name, good in checks.items() if not good]
    elapsed = time.perf_counter() - start
    ok = criterion(3, "architecture shape and invariant suite", not failures,
                   f"100 trials, {len(failures)} failed checks", 30.0, elapsed)
    assert ok, failures[:5]


def _conv_checks(rng):
    c = int(rng.integers(1, 4))
    d = int(rng.integers(1, 5))
    x = rng.standard_normal((c, 16, 16))
    ident = np.zeros((c, c, 3, 3))
    ident[np.arange(c), np.arange(c), 1, 1] = 1.0
    imp = np.zeros((1, 17, 17))
    imp[0, 8, 8] = 1.0
    k = rng.standard_normal((1, 1, 3, 3))
    resp = network.conv2d(imp, k, dilation=d)[0]
    support = np.argwhere(resp != 0)
    expected = {(8 + d * i, 8 + d * j) for i in (-1, 0, 1) for j in (-1, 0, 1)}
    return {
        "conv identity": np.array_equal(network.conv2d(x, ident, dilation=d), x),
        "conv impulse": np.allclose(resp[8 - d:9 + d:d, 8 - d:9 + d:d], k[0, 0, ::-1, ::-1], atol=0),
        "conv dilation support": {tuple(p) for p in support} <= expected,
    }


# 4 ------------------------------------------------------------------------

def test_criterion_4_gradient_correctness(criterion):
    start = time.perf_counter()
    worst = []
    for seed in range(5):
        report = grad_check(init_params(TINY_CONFIG, seed), synth_scene(seed=seed),
                            epsilon=1e-3, n_samples=200, seed=seed)
        assert report.checked >= 200
        worst.append((report.max_rel_error, report.worst_param_path))
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"seed {s}: {e:.2e} at {p}" for s, (e, p) in enumerate(worst))
    ok = criterion(4, "gradient correctness at eps 1e-3", max(e for e, _ in worst) < 1e-3,
                   f"max rel error per seed [{detail}] (< 1e-3)", 300.0, elapsed)
    assert ok


# 5 ------------------------------------------------------------------------

def test_criterion_5_toy_overfit(criterion):
    start = time.perf_counter()
    scene = synth_scene()
    params, curve = train_toy(scene, steps=500)
    initial, last = curve[0][0], final_loss(scene, params)
    elapsed = time.perf_counter() - start
    ratio = last / initial
    ok = criterion(5, "toy overfit", ratio <= 0.1,
                   f"loss {initial:.4g} -> {last:.4g} ({100 * (1 - ratio):.1f}% reduction, >= 90%)",
                   600.0, elapsed)
    assert ok


# 6 ------------------------------------------------------------------------

def test_criterion_6_sequential_fusion_contract(criterion, full_params, monkeypatch):
    start = time.perf_counter()
    scene = synth_scene(seed=0, size=32)
    lo, mid, hi = scene.ldr_stack
    got = fuse_sequence([hi, mid, lo], full_params)
    manual = fuse_pair(hi, as_pseudo_ldr(fuse_pair(lo, mid, full_params)), full_params)
    identical = got.data.tobytes() == manual.data.tobytes()

    counts = {}
    real = pipeline.fuse_pair

    def counting(a, ref, p, gamma=2.2):
        counts[n] += 1
        return real(a, ref, p, gamma)

    monkeypatch.setattr(pipeline, "fuse_pair", counting)
    rng = np.random.default_rng(6)
    for n in range(1, 6):
        counts[n] = 0
        frames = [LdrImage(rng.random((16, 16, 3)), ev) for ev in range(-n + 1, n, 2)]
        fuse_sequence(frames, full_params)
    counted = all(counts[n] == n - 1 for n in counts)
    elapsed = time.perf_counter() - start
    ok = criterion(6, "sequential fusion contract", identical and counted,
                   f"bit-identical to manual chain: {identical}; pair fusions per N {counts}",
                   60.0, elapsed)
    assert ok


# 7 ------------------------------------------------------------------------

def test_criterion_7_determinism_and_serialization(criterion, tmp_path):
    start = time.perf_counter()
    cfg = NetworkConfig()
    a, b = init_params(cfg, 11), init_params(cfg, 11)
    same_init = all(a.tensors[k].tobytes() == b.tensors[k].tobytes() for k in a.tensors)
    save_params(a, tmp_path / "p.bin")
    back = load_params(tmp_path / "p.bin")
    params_rt = (back.config == cfg and back.seed == 11
                 and all(back.tensors[k].tobytes() == a.tensors[k].tobytes() for k in a.tensors))
    save_params(back, tmp_path / "q.bin")
    params_rt &= (tmp_path / "p.bin").read_bytes() == (tmp_path / "q.bin").read_bytes()

    rng = np.random.default_rng(7)
    hdr = HdrImage((rng.random((24, 40, 3)) * 10.0 ** rng.integers(-6, 6, (24, 40, 3)))
                   .astype(np.float32))
    save_hdr(hdr, tmp_path / "x.pfm")
    pfm_rt = load_hdr(tmp_path / "x.pfm").data.tobytes() == hdr.data.tobytes()
    save_hdr(load_hdr(tmp_path / "x.pfm"), tmp_path / "y.pfm")
    pfm_rt &= (tmp_path / "x.pfm").read_bytes() == (tmp_path / "y.pfm").read_bytes()

    x1 = build_stack(LdrImage(rng.random((32, 32, 3)), -2.0))
    x2 = build_stack(LdrImage(rng.random((32, 32, 3)), 0.0))
    outs = {network.forward(x1, x2, a).data.tobytes() for _ in range(3)}
    outs.add(network.forward(x1, x2, back).data.tobytes())
    repeat = len(outs) == 1
    elapsed = time.perf_counter() - start
    ok = criterion(7, "determinism and serialization", same_init and params_rt and pfm_rt and repeat,
                   f"same-seed init {same_init}, params round trip {params_rt}, "
                   f"PFM round trip {pfm_rt}, repeated forward {repeat}", 30.0, elapsed)
    assert ok


# 8 ------------------------------------------------------------------------

def test_criterion_8_metric_sanity(criterion):
    start = time.perf_counter()
    base = HdrImage(np.full((16, 16, 3), 0.5))
    err20 = abs(psnr_l(HdrImage(np.full((16, 16, 3), 0.6)), base) - 20.0)
    err40 = abs(psnr_l(HdrImage(np.full((16, 16, 3), 0.51)), base) - 40.0)
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(50):
        a = HdrImage(rng.random((16, 16, 3)) * 4.0)
        b = HdrImage(rng.random((16, 16, 3)) * 4.0)
        worst = max(worst, abs(psnr_mu(a, b) - psnr_l(tonemap_mu(a), tonemap_mu(b))))
    elapsed = time.perf_counter() - start
    ok = criterion(8, "metric sanity", max(err20, err40, worst) < 1e-9,
                   f"20 dB error {err20:.1e}, 40 dB error {err40:.1e}, "
                   f"psnr_mu vs psnr_l of tonemapped {worst:.1e} (< 1e-9 dB)", 1.0, elapsed)
    assert ok
