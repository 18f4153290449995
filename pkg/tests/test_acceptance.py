"""Acceptance gate: every primary criterion at its stated tolerance.

Each test prints one PASS line on success; a failed assertion surfaces as the
criterion's FAIL with pytest's diagnostics.
"""
import io
import time

import numpy as np
import pytest
import torch

from stylefuse import (Engine, ImageAsset, InjectionConfig, TransferJob,
                       run_style_transfer)
from stylefuse.conditioning import StubStyleEncoder
from stylefuse.ddim import Latent, ddim_invert_step, ddim_step
from stylefuse.injection import deciding_point
from stylefuse.metrics import FeatureExtractor, content_loss, gram_matrix, pixel_mse, style_loss
from stylefuse.schedule import make_schedule
from stylefuse.unet import DECODER_IDS, InjectionDirective, ToyUNet, ToyUNetConfig

from conftest import rand_image


def report(name: str, detail: str = "") -> None:
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {name}: PASS{suffix}")


# ----------------------------------------------------------------------------

def test_ddim_algebra_round_trip_1000_cases():
    """Inversion/step round trip <= 1e-5 relative over 1000 random cases, < 10 s."""
    s = make_schedule(1000, 1e-4, 0.02, 50, "scaled_linear")
    rng = np.random.default_rng(0)
    started = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        t = int(rng.integers(0, 50))
        t_next = int(rng.integers(t + 1, 51))
        g = torch.Generator().manual_seed(int(rng.integers(0, 2**31)))
        z = torch.randn(2, 4, 4, generator=g)
        eps = torch.randn(2, 4, 4, generator=g)
        up = ddim_invert_step(Latent(z, t, "content"), eps, t, t_next, s)
        back = ddim_step(up, eps, t_next, t, s)
        rel = (torch.linalg.norm(back.data - z) / torch.linalg.norm(z)).item()
        worst = max(worst, rel)
    elapsed = time.perf_counter() - started
    assert worst <= 1e-5, f"worst relative error {worst}"
    assert elapsed < 10.0, f"took {elapsed:.1f} s"
    report("ddim-algebra", f"worst rel {worst:.2e}, {elapsed:.2f} s")


def test_schedule_contract():
    """50-step sampling over 1000 training steps; alpha-bar strictly decreasing."""
    s = make_schedule(1000, 1e-4, 0.02, 50, "scaled_linear")
    assert len(s.timestep_map) == 50
    assert np.all(np.diff(s.alphas_cumprod) < 0.0)
    bars = [s.alpha_bar(t) for t in range(0, 51)]
    assert all(a > b for a, b in zip(bars, bars[1:]))
    report("schedule-contract", "50 mapped steps, alpha-bar strictly decreasing")


def test_injection_algebra():
    """Self-replacement <= 1e-6; operand bit-identity on >= 20 random steps;
    attention rows sum to 1 +-1e-6 under every override mode."""
    net = ToyUNet(ToyUNetConfig())
    rng = np.random.default_rng(1)

    # (a) self-replacement identity
    g = torch.Generator().manual_seed(11)
    z = torch.randn(3, 16, 16, generator=g)
    cond = torch.randn(8, 32, generator=g)
    eps_ref, ints = net.predict_noise(z, 300, cond, capture=True)
    directive = InjectionDirective(
        residual={lid: ints[lid].residual_in for lid in DECODER_IDS},
        attn_qk={lid: (ints[lid].q, ints[lid].k) for lid in DECODER_IDS})
    eps_inj, _ = net.predict_noise(z, 300, cond, directives=directive)
    gap = (eps_inj - eps_ref).abs().max().item()
    assert gap <= 1e-6, f"self-replacement gap {gap}"

    # (b) operand bit-identity across random steps, layers and latents
    checked = 0
    for _ in range(20):
        t = int(rng.integers(0, 1000))
        lid = int(rng.integers(3, 12))
        g = torch.Generator().manual_seed(int(rng.integers(0, 2**31)))
        z = torch.randn(3, 16, 16, generator=g)
        _, plain = net.predict_noise(z, t, cond, capture=True)
        q_src = torch.randn(plain[lid].q.shape, generator=g)
        k_src = torch.randn(plain[lid].k.shape, generator=g)
        v_src = torch.randn(plain[lid].v.shape, generator=g)
        _, qk = net.predict_noise(z, t, cond, capture=True,
                                  directives=InjectionDirective(attn_qk={lid: (q_src, k_src)}))
        assert torch.equal(qk[lid].used_v, plain[lid].v), f"qk changed V at {t}/{lid}"
        _, kv = net.predict_noise(z, t, cond, capture=True,
                                  directives=InjectionDirective(attn_kv={lid: (k_src, v_src)}))
        assert torch.equal(kv[lid].used_q, plain[lid].q), f"kv changed Q at {t}/{lid}"
        checked += 1
    assert checked >= 20

    # (c) row-stochastic attention under every mode
    lid = 9
    g = torch.Generator().manual_seed(17)
    z = torch.randn(3, 16, 16, generator=g)
    _, base = net.predict_noise(z, 42, cond, capture=True, capture_probs=True)
    q_src = torch.randn(base[lid].q.shape, generator=g)
    k_src = torch.randn(base[lid].k.shape, generator=g)
    v_src = torch.randn(base[lid].v.shape, generator=g)
    for mode, directive in {
        "none": None,
        "qk": InjectionDirective(attn_qk={lid: (q_src, k_src)}),
        "kv": InjectionDirective(attn_kv={lid: (k_src, v_src)}),
    }.items():
        _, ints = net.predict_noise(z, 42, cond, directives=directive,
                                    capture=True, capture_probs=True)
        for rec_lid in DECODER_IDS:
            sums = ints[rec_lid].attn_probs.sum(dim=-1)
            assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6), (mode, rec_lid)
    report("injection-algebra",
           f"self-replacement {gap:.1e}, 20 operand checks, rows sum to 1")


ALPHAS = (0.0, 0.2, 0.5, 1.0)


@pytest.fixture(scope="module")
def alpha_runs():
    content = rand_image(16, 7, "content")
    style = rand_image(16, 8, "style")
    runs = {}
    for alpha in ALPHAS:
        cfg = InjectionConfig(alpha=alpha, sample_steps=50, cfg_scale=1.0)
        job = TransferJob(content=content, style=style, config=cfg)
        runs[alpha] = run_style_transfer(job, Engine.toy(seed=0, sample_steps=50))
    return runs


def test_scheduling_partition(alpha_runs):
    """Step partition is exactly (T - floor(aT), floor(aT)); boundary styled."""
    for alpha, res in alpha_runs.items():
        t_alpha = deciding_point(alpha, 50)
        modes = {e["t"]: e["mode"] for e in res.trace}
        n_content = sum(m == "content" for m in modes.values())
        n_style = sum(m == "style" for m in modes.values())
        assert (n_content, n_style) == (50 - t_alpha, t_alpha), alpha
        if 1 <= t_alpha <= 50:
            assert modes[t_alpha] == "style", f"boundary t={t_alpha} not styled"
        assert len(res.trace) == 50
    expected = {0.0: 0, 0.2: 10, 0.5: 25, 1.0: 50}
    assert {a: deciding_point(a, 50) for a in ALPHAS} == expected
    report("scheduling", "partitions exact for alpha in {0, 0.2, 0.5, 1}")


def test_bank_minimality(alpha_runs):
    """Total branch capture evaluations equal T for every alpha."""
    for alpha, res in alpha_runs.items():
        ev = res.meta["backend_evals"]
        t_alpha = deciding_point(alpha, 50)
        assert ev["content_capture"] == 50 - t_alpha, alpha
        assert ev["style_capture"] == t_alpha, alpha
        assert ev["content_capture"] + ev["style_capture"] == 50, alpha
    report("bank-minimality", "content T-t_alpha + style t_alpha = T for all alpha")


def test_reconstruction_proxy():
    """alpha=0, identity codec, CFG 1, full-layer content injection at 64x64:
    output-vs-content MSE <= 1e-2 in < 60 s."""
    content = rand_image(64, 7, "content")
    style = rand_image(64, 8, "style")
    cfg = InjectionConfig(alpha=0.0, sample_steps=50, cfg_scale=1.0,
                          attn_layers=frozenset(range(3, 12)),
                          residual_layers=frozenset(range(3, 12)))
    job = TransferJob(content=content, style=style, config=cfg)
    started = time.perf_counter()
    res = run_style_transfer(job, Engine.toy(seed=0, sample_steps=50))
    elapsed = time.perf_counter() - started
    mse = pixel_mse(res.output, content)
    assert mse <= 1e-2, f"reconstruction MSE {mse}"
    assert elapsed < 60.0, f"took {elapsed:.1f} s"
    report("reconstruction-proxy", f"MSE {mse:.2e}, {elapsed:.1f} s at 64x64")


def test_independence():
    """alpha=0 output bit-invariant to style pixels once the style embedding is
    pinned; alpha=1 style bank bit-invariant to the content image."""
    content = rand_image(16, 7, "content")

    class PinnedStyleEncoder(StubStyleEncoder):
        def __call__(self, img, text=""):
            return super().__call__(rand_image(16, 555, "style"), text)

    outs = []
    for seed in (21, 22):
        eng = Engine.toy(seed=0, sample_steps=50)
        eng.style_encoder = PinnedStyleEncoder(dim=32, seed=0)
        cfg = InjectionConfig(alpha=0.0, sample_steps=50, cfg_scale=1.0)
        job = TransferJob(content=content, style=rand_image(16, seed, "style"),
                          config=cfg)
        res = run_style_transfer(job, eng)
        assert res.meta["backend_evals"]["style_invert"] == 0
        outs.append(res.output.pixels)
    assert torch.equal(outs[0], outs[1]), "alpha=0 output depends on style pixels"

    style = rand_image(16, 8, "style")
    banks = []
    for seed in (31, 32):
        cfg = InjectionConfig(alpha=1.0, sample_steps=50, cfg_scale=1.0)
        job = TransferJob(content=rand_image(16, seed, "content"), style=style,
                          config=cfg, keep_banks=True)
        banks.append(run_style_transfer(job, Engine.toy(seed=0, sample_steps=50)).banks["style"])
    a, b = banks
    assert a.store.keys() == b.store.keys() and len(a.store) > 0
    for key in a.store:
        for name in a.store[key]:
            assert torch.equal(a.store[key][name], b.store[key][name]), (key, name)
    report("independence", "style-pixel and content-image invariances hold bitwise")


def test_determinism_bit_identical_png():
    """Fixed seed: two consecutive runs produce byte-identical PNGs."""
    content = rand_image(16, 7, "content")
    style = rand_image(16, 8, "style")
    cfg = InjectionConfig(sample_steps=10)
    payloads = []
    for _ in range(2):
        job = TransferJob(content=content, style=style, config=cfg, seed=3)
        res = run_style_transfer(job, Engine.toy(seed=3, sample_steps=10))
        buf = io.BytesIO()
        arr = (res.output.pixels.clamp(0, 1) * 255).round().to(torch.uint8)
        from PIL import Image
        Image.fromarray(arr.permute(1, 2, 0).numpy(), "RGB").save(buf, format="PNG")
        payloads.append(buf.getvalue())
    assert payloads[0] == payloads[1]
    report("determinism", f"{len(payloads[0])} identical PNG bytes")


def test_metrics_properties():
    """Gram permutation invariance <= 1e-6; zero losses on identity; content
    loss monotone over 5 noise levels."""
    img = rand_image(16, 5)
    assert content_loss(img, img) == 0.0
    assert style_loss(img, img) == 0.0
    assert pixel_mse(img, img) == 0.0

    g = torch.Generator().manual_seed(2)
    feat = torch.randn(8, 10, 10, generator=g)
    perm = torch.randperm(100, generator=g)
    shuffled = feat.reshape(8, 100)[:, perm].reshape(8, 10, 10)
    gap = (gram_matrix(feat) - gram_matrix(shuffled)).abs().max().item()
    assert gap <= 1e-6

    fx = FeatureExtractor(kernel_size=1, seed=3)
    pixel_perm = torch.randperm(256, generator=g)
    img_shuffled = ImageAsset(img.pixels.reshape(3, 256)[:, pixel_perm].reshape(3, 16, 16),
                              img.role)
    assert style_loss(img_shuffled, img, fx) <= 1e-6

    noise = torch.randn(3, 16, 16, generator=g)
    losses = [content_loss(ImageAsset(img.pixels + lvl * noise, "output"), img)
              for lvl in (0.02, 0.05, 0.1, 0.2, 0.3)]
    assert all(a < b for a, b in zip(losses, losses[1:])), losses
    report("metrics", f"gram gap {gap:.1e}, monotone losses {['%.4f' % l for l in losses]}")


ABLATION_CASES = [
    ("no-content-attn", {"content_attn": False},
     lambda res: all(e["injected"] == ["residual"]
                     for e in res.trace if e["mode"] == "content")),
    ("no-content-residual", {"content_residual": False},
     lambda res: all(e["injected"] == ["attn_qk"]
                     for e in res.trace if e["mode"] == "content")),
    ("no-style", {"style_attn": False},
     lambda res: all(e["injected"] == []
                     for e in res.trace if e["mode"] == "style")),
    ("no-blip-text", {"use_style_tokens": False},
     lambda res: res.meta["style_tokens"] == 0 and res.meta["cond_tokens"] == 8),
    ("order-style-first", {"injection_order": "style_first"},
     lambda res: [e["mode"] for e in res.trace] == ["style"] * 4 + ["content"] * 6),
    ("content-kv", {"content_attn_mode": "kv"},
     lambda res: all(e["injected"] == ["residual", "attn_kv"]
                     for e in res.trace if e["mode"] == "content")),
]


def test_ablation_plumbing():
    """Each ablation toggle reshapes the trace's injected-feature kinds."""
    content = rand_image(16, 7, "content")
    style = rand_image(16, 8, "style")
    for name, overrides, check in ABLATION_CASES:
        cfg = InjectionConfig(alpha=0.6, sample_steps=10, cfg_scale=1.0, **overrides)
        job = TransferJob(content=content, style=style, config=cfg)
        res = run_style_transfer(job, Engine.toy(seed=0, sample_steps=10))
        assert check(res), f"{name}: {[e['injected'] for e in res.trace]}"
        n_modes = {m: sum(e["mode"] == m for e in res.trace) for m in ("content", "style")}
        assert n_modes["content"] + n_modes["style"] == 10
    report("ablation-plumbing", "6 toggles shape the trace as contracted")
