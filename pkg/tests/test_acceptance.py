"""Acceptance suite: one recorded PASS/FAIL line per criterion.

The lines are printed as each test runs and repeated in the terminal summary
under "acceptance criteria". Criteria 6 to 8 train GANs and are marked slow.
"""
import json
import math
import time

import numpy as np
import pytest
import torch

from ttslab.cli import run
from ttslab.coherence import wcoh, wcoh_s, wcoh_set
from ttslab.data import SignalSet, SineParams, simulate_class_sines, simulate_sine, train_test_split
from ttslab.evaluation import case_study, classification_report, fusion_map, project_2d
from ttslab.losses import categorical_loss, gradient_penalty, mse_d_loss, mse_g_loss, wgan_adv_losses
from ttslab.models import ModelSpec, build_models, embed_patches, sample_latent
from ttslab.train import TrainConfig, generate, read_losses, train


# 1 --------------------------------------------------------------------------

def test_coherence_identities(verdict):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst_self = worst_s = worst_sym = 0.0
    lo, hi = np.inf, -np.inf
    for i in range(50):
        w, c = [24, 50, 150][i % 3], [1, 3, 5][(i // 3) % 3]
        x, y = rng.normal(size=(2, c, 1, w)) * rng.uniform(0.1, 10)
        for ch in range(c):
            worst_self = max(worst_self, np.max(np.abs(wcoh(x[ch, 0], x[ch, 0]).values - 1)))
            v = wcoh(x[ch, 0], y[ch, 0]).values
            lo, hi = min(lo, v.min()), max(hi, v.max())
        worst_s = max(worst_s, abs(wcoh_s(x, x) - w))
        a, b = rng.normal(size=(2, 3, c, 1, w))
        worst_sym = max(worst_sym, abs(wcoh_set(a, b) - wcoh_set(b, a)))
    elapsed = time.perf_counter() - start
    ok = worst_self < 1e-9 and lo >= 0 and hi <= 1 and worst_s < 1e-9 and worst_sym < 1e-9 and elapsed < 120
    verdict(1, "coherence identities", ok,
            f"|wcoh(x,x)-1|={worst_self:.1e} range=[{lo:.3f},{hi:.3f}] |wcoh_s(x,x)-W|={worst_s:.1e} "
            f"asym={worst_sym:.1e} {elapsed:.1f}s")
    assert ok


# 2 --------------------------------------------------------------------------

def brute_force_set(a, b):
    """Pairwise double loop over per-channel coherence matrices."""
    n, c = a.shape[0], a.shape[1]
    total = 0.0
    for i in range(n):
        row = 0.0
        for j in range(n):
            per_channel = 0.0
            for ch in range(c):
                m = wcoh(a[i, ch, 0], b[j, ch, 0]).values
                per_channel += sum(float(m[f].sum()) for f in range(m.shape[0])) / m.shape[0]
            row += per_channel / c
        total += row / n
    return total / n


def test_set_score_oracle(verdict):
    a, b = np.random.default_rng(1).normal(size=(2, 6, 2, 1, 24))
    got, ref = wcoh_set(a, b), brute_force_set(a, b)
    ok = abs(got - ref) < 1e-9
    verdict(2, "set score vs brute-force double loop, n=6", ok, f"|diff|={abs(got - ref):.1e}")
    assert ok


# 3 --------------------------------------------------------------------------

def test_loss_identities(verdict):
    checks = {
        "mse perfect": mse_d_loss(torch.ones(16), torch.zeros(16)).item() == 0.0,
        "mse half": mse_d_loss(torch.full((16,), 0.5), torch.full((16,), 0.5)).item() == 0.5,
    }
    for k in (2, 5, 10):
        loss = categorical_loss(torch.zeros(7, k, dtype=torch.float64), torch.arange(7) % k).item()
        checks[f"ln {k}"] = abs(loss - math.log(k)) < 1e-9
    w = torch.randn(3, 1, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    w /= w.norm()
    real = torch.randn(6, 3, 1, 8, dtype=torch.float64)
    fake = torch.randn(6, 3, 1, 8, dtype=torch.float64)
    checks["gp unit linear"] = abs(gradient_penalty(lambda x: (x * w).flatten(1).sum(1), real, fake, seed=0).item()) < 1e-6
    const = gradient_penalty(lambda x: torch.full((x.shape[0],), 1.5), real, fake, seed=0).item()
    checks["gp constant"] = abs(const - 1) < 1e-6
    ok = all(checks.values())
    verdict(3, "loss identities", ok, ", ".join(k for k, v in checks.items() if not v) or f"{len(checks)} checks")
    assert ok


# 4 --------------------------------------------------------------------------

TINY = ModelSpec(channels=2, seq_len=24, patch_len=6, latent_dim=8, hidden_dim=16, heads=2, depth=1, num_classes=3)


def _probes(module, rng, per_tensor=2):
    out = []
    for name, p in module.named_parameters():
        for flat in rng.choice(p.numel(), size=min(per_tensor, p.numel()), replace=False):
            out.append((name, p, np.unravel_index(int(flat), tuple(p.shape))))
    return out


def _max_rel_error(loss_fn, probes, h=1e-6):
    worst = 0.0
    for _, p, idx in probes:
        p.grad = None
        loss_fn().backward()
        analytic = 0.0 if p.grad is None else p.grad[idx].item()
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + h
            up = loss_fn().item()
            p[idx] = orig - h
            down = loss_fn().item()
            p[idx] = orig
        numeric = (up - down) / (2 * h)
        scale = max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic - numeric) / scale)
    return worst


def test_gradients_match_finite_differences(verdict):
    g, d = build_models(TINY, seed=0)
    g, d = g.double(), d.double()
    gen = torch.Generator().manual_seed(0)
    real = torch.randn(5, 2, 1, 24, generator=gen, dtype=torch.float64)
    y = torch.tensor([0, 1, 2, 0, 1])
    lb = sample_latent(5, TINY, gen, labels=[2, 1, 0, 2, 1])
    z = lb.z.double()

    def fake():
        return g(z, lb.target_labels)

    def gp_rng():
        return torch.Generator().manual_seed(3)

    d_terms = {
        "mse D": lambda: mse_d_loss(torch.sigmoid(d(real).adv), torch.sigmoid(d(fake().detach()).adv)),
        "wgan L_adv": lambda: wgan_adv_losses(lambda x: d(x).adv, real, fake().detach(), 10.0, gp_rng())[0],
        "GP": lambda: gradient_penalty(lambda x: d(x).adv, real, fake().detach(), gp_rng()),
        "L_cls_r": lambda: categorical_loss(d(real).class_logits, y),
    }
    g_terms = {
        "mse G": lambda: mse_g_loss(torch.sigmoid(d(fake()).adv)),
        "wgan L_adv_g": lambda: -d(fake()).adv.mean(),
        "L_cls_f": lambda: categorical_loss(d(fake()).class_logits, lb.target_labels),
    }
    rng = np.random.default_rng(0)
    d_probes, g_probes = _probes(d, rng), _probes(g, rng)
    errors = {k: _max_rel_error(f, d_probes) for k, f in d_terms.items()}
    errors.update({k: _max_rel_error(f, g_probes) for k, f in g_terms.items()})
    worst = max(errors, key=errors.get)
    ok = all(e < 1e-3 for e in errors.values())
    verdict(4, "loss gradients vs central differences", ok,
            f"{len(d_probes) + len(g_probes)} probes, worst {worst} rel err {errors[worst]:.1e}")
    assert ok


# 5 --------------------------------------------------------------------------

def test_unimib_shapes(verdict):
    results = []
    for patch in (10, 15, 25):
        spec = ModelSpec(channels=3, seq_len=150, patch_len=patch, latent_dim=100, depth=3)
        g, d = build_models(spec, seed=0)
        with torch.no_grad():
            out = g(sample_latent(4, spec, torch.Generator().manual_seed(0)).z)
            tokens = embed_patches(out, d)
            score = d(out).adv
        results.append(tuple(out.shape) == (4, 3, 1, 150) and tokens.shape[1] == 150 // patch + 1
                       and tuple(score.shape) == (4,))
    ok = all(results)
    verdict(5, "UniMiB-scale shapes and token count", ok, "patch_len 10/15/25: output (4,3,1,150), W/p+1 tokens")
    assert ok


# 6 --------------------------------------------------------------------------

SMOKE_STEPS = 2000
SMOKE_EVAL = 100


@pytest.mark.slow
def test_sine_smoke_training(verdict):
    real = simulate_sine(SineParams(n_samples=10000, seed=0))
    ref = real.subset(np.arange(SMOKE_EVAL))
    lo, hi = float(real.values.min()), float(real.values.max())
    noise = np.random.default_rng(0).uniform(lo, hi, size=ref.values.shape)
    baseline = wcoh_set(ref, noise)
    spec = ModelSpec(channels=5, seq_len=24, patch_len=4, depth=3)
    scores = []
    for seed in range(3):
        state = train(real, spec, TrainConfig(objective="wgan-gp", max_steps=SMOKE_STEPS, seed=seed))
        scores.append(wcoh_set(ref, generate(state, SMOKE_EVAL, seed=seed + 100)))
    ok = all(s > baseline and s - baseline >= 0.2 * baseline for s in scores)
    verdict(6, "sine smoke training beats noise by >= 20%", ok,
            f"noise {baseline:.2f}, synthetic " + " / ".join(f"{s:.2f}" for s in scores))
    assert ok


# 7 --------------------------------------------------------------------------

BANDS2 = [(0.03, 0.07), (0.15, 0.22)]


def dominant_frequency(values):
    x = values[:, 0, 0, :] - values[:, 0, 0, :].mean(axis=-1, keepdims=True)
    spectrum = np.abs(np.fft.rfft(x, axis=-1))
    spectrum[:, 0] = 0
    return spectrum.argmax(axis=-1) / values.shape[-1]


def in_band_fraction(s, bands):
    """Share of each class whose dominant FFT bin lies in its band, widened by half a bin."""
    f, w = dominant_frequency(s.values), s.values.shape[-1]
    return [float(np.mean((f[s.labels == k] >= lo - 0.5 / w) & (f[s.labels == k] <= hi + 0.5 / w)))
            for k, (lo, hi) in enumerate(bands)]


@pytest.mark.slow
def test_conditional_fidelity(verdict):
    real = simulate_class_sines(2000, BANDS2, length_w=48, seed=0)
    assert in_band_fraction(real, BANDS2) == [1.0, 1.0]
    spec = ModelSpec(channels=1, seq_len=48, patch_len=6, depth=3, num_classes=2)
    cfg = TrainConfig(objective="wgan-gp", max_steps=4000, lambda_cls=3.0, d_steps_per_g=2, seed=0)
    state = train(real, spec, cfg)
    frac = in_band_fraction(generate(state, 400, np.repeat([0, 1], 200), seed=1), BANDS2)
    ok = min(frac) >= 0.8
    verdict(7, "conditional fidelity >= 80% in band per class", ok, "in-band " + " / ".join(f"{f:.3f}" for f in frac))
    assert ok


# 8 --------------------------------------------------------------------------

BANDS5 = [(0.02, 0.04), (0.06, 0.08), (0.10, 0.12), (0.14, 0.17), (0.20, 0.24)]


@pytest.mark.slow
def test_case_study_ordering(verdict):
    # the GAN sees the whole training pool; compositions draw subsets of it
    pool = simulate_class_sines(2200, BANDS5, length_w=48, noise_std=1.0, seed=0)
    real, test = train_test_split(pool, 200, seed=0)
    spec = ModelSpec(channels=1, seq_len=48, patch_len=6, depth=3, num_classes=5)
    cfg = TrainConfig(objective="wgan-gp", max_steps=8000, lambda_cls=3.0, d_steps_per_g=2, seed=0)
    syn = generate(train(real, spec, cfg), 1000, "balanced", seed=1)
    med = {m: float(np.median([case_study(real, syn, test, m, seed=s, scale=0.2).accuracy for s in range(3)]))
           for m in "abcd"}
    ok = med["a"] >= med["d"] >= med["b"] >= med["c"]
    verdict(8, "case-study ordering a >= d >= b >= c", ok, ", ".join(f"{m}={v:.3f}" for m, v in med.items()))
    assert ok


# 9 --------------------------------------------------------------------------

def test_resume_and_cli_reproducibility(verdict, tmp_path):
    data = simulate_class_sines(40, [(0.02, 0.06), (0.15, 0.25)], length_w=24, seed=0)
    spec = ModelSpec(channels=1, seq_len=24, patch_len=6, latent_dim=8, hidden_dim=16, heads=2, depth=1,
                     num_classes=2, dropout=0.1)
    resumed = []
    for objective in ("wgan-gp", "mse"):
        cfg = TrainConfig(objective=objective, max_steps=60, log_every=1, ckpt_every=30, seed=5)
        train(data, spec, cfg, out_dir=tmp_path / objective)
        train(data, spec, cfg, out_dir=tmp_path / f"{objective}-r", resume=tmp_path / objective / "ckpt_30")
        resumed.append(read_losses(tmp_path / objective / "losses.csv")[30:]
                       == read_losses(tmp_path / f"{objective}-r" / "losses.csv")
                       and (tmp_path / objective / "ckpt_60.bin").read_bytes()
                       == (tmp_path / f"{objective}-r" / "ckpt_60.bin").read_bytes())

    cli = tmp_path / "cli"
    tiny = ["--patch-len", "6", "--hidden-dim", "16", "--heads", "2", "--depth", "1", "--latent-dim", "8"]
    runs = {
        "simulate": (["--kind", "class-sines", "--n", "200", "--w", "24", "--bands", "[[0.02,0.06],[0.15,0.25]]"],
                     ["signals.f32", "signals.json"]),
        "preprocess": (["--input", cli / "simulate1", "--test-per-class", "20", "--normalize"],
                       ["train/signals.f32", "test/signals.f32", "test/signals.json"]),
        "train": (["--data", cli / "preprocess1" / "train", "--classes", "2", "--max-steps", "20",
                   "--ckpt-every", "10", *tiny], ["losses.csv", "ckpt_10.bin", "ckpt_20.bin"]),
        "generate": (["--ckpt", cli / "train1", "--n", "200", "--labels", "balanced"], ["signals.f32"]),
        "wcoh": (["--a", cli / "preprocess1" / "test", "--b", cli / "generate1", "--n", "10"], ["wcoh.json"]),
        "visualize": (["--real", cli / "preprocess1" / "test", "--syn", cli / "generate1", "--n", "20",
                       "--max-iter", "250"], ["pca.csv", "tsne.csv", "fusion_real.csv", "coherence.csv"]),
        "casestudy": (["--real", cli / "preprocess1" / "train", "--syn", cli / "generate1",
                       "--test", cli / "preprocess1" / "test", "--modes", '["c", "d"]', "--scale", "0.02",
                       "--epochs", "3"], ["report.json"]),
    }
    reproduced = {}
    for cmd, (argv, files) in runs.items():
        first, second = cli / f"{cmd}1", cli / f"{cmd}2"
        codes = (run([cmd, *map(str, argv), "--out", str(first)]),
                 run([cmd, "--config", str(first / "config.resolved.json"), "--out", str(second)]))
        reproduced[cmd] = codes == (0, 0) and all(
            (first / f).read_bytes() == (second / f).read_bytes() for f in files)
    ok = all(resumed) and all(reproduced.values())
    verdict(9, "resume bit-identical and CLI runs reproducible", ok,
            f"resume wgan-gp/mse {resumed}, CLI " + " ".join(f"{k}={'ok' if v else 'DIFF'}" for k, v in reproduced.items()))
    assert ok


# 10 -------------------------------------------------------------------------

def test_evaluation_oracles(verdict):
    rng = np.random.default_rng(3)
    real = SignalSet(rng.normal(size=(60, 2, 1, 16)))
    syn = SignalSet(rng.normal(size=(40, 2, 1, 16)) * [[[2.0]], [[0.5]]])
    proj = project_2d(real, syn, "pca")
    x = np.concatenate([real.values.reshape(60, -1), syn.values.reshape(40, -1)]).astype(np.float64)
    xc = x - x.mean(axis=0)
    vals, vecs = np.linalg.eigh(xc.T @ xc / (len(x) - 1))
    ref = xc @ vecs[:, np.argsort(vals)[::-1][:2]]
    pca_err = max(np.max(np.abs(proj.points[:, k] - np.sign(ref[:, k] @ proj.points[:, k]) * ref[:, k]))
                  for k in range(2))

    k = 4
    y_true = rng.integers(0, k, 500)
    y_pred = np.where(rng.uniform(size=500) < 0.7, y_true, rng.integers(0, k, 500))
    rep = classification_report(y_true, y_pred, k)
    cm = np.zeros((k, k), dtype=int)
    for t, p in zip(y_true, y_pred):
        cm[t, p] += 1
    prec = [cm[c, c] / cm[:, c].sum() for c in range(k)]
    rec = [cm[c, c] / cm[c].sum() for c in range(k)]
    f1 = [2 * p * r / (p + r) for p, r in zip(prec, rec)]
    metric_err = max(np.max(np.abs(np.subtract(rep.precision, prec))), np.max(np.abs(np.subtract(rep.recall, rec))),
                     np.max(np.abs(np.subtract(rep.f1, f1))), abs(rep.accuracy - np.trace(cm) / 500))

    grid = fusion_map(real, value_bins=30, value_range=(-1.0, 1.0))
    mass_ok = int(grid.sum()) == 60 * 16 and bool(np.all(grid.sum(axis=0) == 60))

    ok = pca_err < 1e-6 and metric_err < 1e-9 and rep.confusion_matrix == cm.tolist() and mass_ok
    verdict(10, "PCA, metric and fusion-map oracles", ok,
            f"PCA err {pca_err:.1e}, metric err {metric_err:.1e}, fusion mass {'exact' if mass_ok else 'WRONG'}")
    assert ok
