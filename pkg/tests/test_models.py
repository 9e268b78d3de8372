import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ttslab.errors import ConfigError, UsageError
from ttslab.models import (
    STRATEGIES,
    Discriminator,
    Generator,
    ModelSpec,
    build_models,
    count_parameters,
    embed_patches,
    sample_latent,
)

UNIMIB = ModelSpec(channels=3, seq_len=150, patch_len=15, latent_dim=100, hidden_dim=50, depth=3)


def block_params(m):
    # two layer norms, qkv, output projection, 4x MLP
    return 4 * m + (3 * m * m + 3 * m) + (m * m + m) + (4 * m * m + 4 * m) + (4 * m * m + m)


def generator_params(s):
    m, t = s.hidden_dim, s.n_patches
    n_in = s.latent_dim + (s.label_embed_dim if s.conditional else 0)
    label = s.num_classes * s.label_embed_dim if s.conditional else 0
    return (label + n_in * t * m + t * m + t * m + s.depth * block_params(m)
            + m * m * s.patch_len + m * s.patch_len + m * s.channels + s.channels)


def discriminator_params(s):
    m, t = s.hidden_dim, s.n_patches
    head = s.num_classes * m + s.num_classes if s.conditional else 0
    return (s.channels * s.patch_len * m + m + m + (t + 1) * m + s.depth * block_params(m)
            + 2 * m + m + 1 + head)


class TestShapes:
    def test_unimib_generator_output(self):
        g, d = build_models(UNIMIB, seed=0)
        lb = sample_latent(32, UNIMIB, torch.Generator().manual_seed(0))
        x = g.generate(lb)
        assert x.shape == (32, 3, 1, 150)
        assert embed_patches(x, d).shape == (32, 11, 50)
        assert d(x).adv.shape == (32,)
        assert d(x).class_logits is None

    def test_single_patch(self):
        s = ModelSpec(channels=2, seq_len=24, patch_len=24, hidden_dim=10, heads=2, depth=1)
        g, d = build_models(s, seed=0)
        assert d.tokens(torch.zeros(3, 2, 1, 24)).shape == (3, 2, 10)
        assert g(sample_latent(3, s).z).shape == (3, 2, 1, 24)

    def test_conditional_logits(self):
        s = ModelSpec(channels=1, seq_len=187, patch_len=11, num_classes=5, hidden_dim=10, heads=2, depth=1)
        g, d = build_models(s, seed=0)
        lb = sample_latent(7, s)
        out = d(g(lb.z, lb.target_labels))
        assert out.class_logits.shape == (7, 5)

    def test_indivisible_patch(self):
        with pytest.raises(ConfigError):
            ModelSpec(channels=1, seq_len=150, patch_len=16)

    def test_discriminator_rejects_bad_shape(self):
        _, d = build_models(ModelSpec(channels=3, seq_len=24, patch_len=6, hidden_dim=10, heads=2, depth=1))
        with pytest.raises(UsageError):
            d(torch.zeros(2, 3, 1, 25))

    def test_conditional_generator_needs_labels(self):
        s = ModelSpec(channels=1, seq_len=24, patch_len=6, num_classes=2, hidden_dim=10, heads=2, depth=1)
        g, _ = build_models(s)
        with pytest.raises(UsageError):
            g(torch.rand(2, 100))
        with pytest.raises(UsageError, match="out of range"):
            g(torch.rand(2, 100), torch.tensor([0, 2]))

    def test_add_both_needs_matching_dims(self):
        with pytest.raises(ConfigError):
            ModelSpec(channels=1, seq_len=24, patch_len=6, num_classes=2, embed_strategy="add-both")
        ModelSpec(channels=1, seq_len=24, patch_len=6, num_classes=2, embed_strategy="add-both",
                  label_embed_dim=100)

    def test_unknown_strategy(self):
        with pytest.raises(ConfigError):
            ModelSpec(channels=1, seq_len=24, patch_len=6, num_classes=2, embed_strategy="bogus")


class TestParameterCounts:
    def test_golden_unimib(self):
        g, d = build_models(UNIMIB)
        assert count_parameters(g) == 181353
        assert count_parameters(d) == 95001

    @pytest.mark.parametrize("spec", [
        UNIMIB,
        ModelSpec(channels=5, seq_len=24, patch_len=4),
        ModelSpec(channels=1, seq_len=187, patch_len=11, num_classes=5, hidden_dim=20, heads=4, depth=2),
    ])
    def test_closed_form(self, spec):
        g, d = build_models(spec)
        assert count_parameters(g) == generator_params(spec)
        assert count_parameters(d) == discriminator_params(spec)


specs = st.builds(
    lambda c, n, p, heads, hd, depth, k, strat, latent: ModelSpec(
        channels=c, seq_len=n * p, patch_len=p, latent_dim=latent, hidden_dim=heads * hd, depth=depth,
        heads=heads, num_classes=k, label_embed_dim=latent if strat == "add-both" else 6,
        embed_strategy=strat,
    ),
    c=st.integers(1, 4), n=st.integers(1, 6), p=st.integers(1, 8), heads=st.integers(1, 3),
    hd=st.integers(1, 6), depth=st.integers(1, 2), k=st.integers(0, 4), strat=st.sampled_from(STRATEGIES),
    latent=st.integers(1, 20),
)


@given(specs)
@settings(max_examples=40, deadline=None)
def test_spec_fuzz_round_trip(spec):
    assert ModelSpec.from_dict(spec.to_dict()) == spec
    g, d = build_models(spec, seed=0)
    lb = sample_latent(3, spec, torch.Generator().manual_seed(1))
    x = g(lb.z, lb.target_labels)
    assert x.shape == (3, spec.channels, 1, spec.seq_len)
    out = d(x, lb.target_labels)
    assert out.adv.shape == (3,)
    assert (out.class_logits is not None) == spec.conditional
    assert torch.isfinite(out.adv).all()


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_forward_finite_on_wide_inputs(strategy):
    s = ModelSpec(channels=2, seq_len=24, patch_len=6, hidden_dim=20, heads=4, depth=2, num_classes=3,
                  latent_dim=10, label_embed_dim=10, embed_strategy=strategy)
    g, d = build_models(s, seed=0)
    gen = torch.Generator().manual_seed(0)
    x = torch.rand(64, 2, 1, 24, generator=gen) * 20 - 10
    z = torch.rand(64, 10, generator=gen) * 20 - 10
    labels = torch.randint(3, (64,), generator=gen)
    assert torch.isfinite(g(z, labels)).all()
    out = d(x, labels)
    assert torch.isfinite(out.adv).all() and torch.isfinite(out.class_logits).all()


def test_latent_strictly_inside_unit_interval():
    s = ModelSpec(channels=1, seq_len=24, patch_len=6, num_classes=4)
    lb = sample_latent(2000, s, torch.Generator().manual_seed(0))
    assert lb.z.min() > 0 and lb.z.max() < 1
    assert lb.target_labels.min() >= 0 and lb.target_labels.max() < 4


def test_identical_latents_identical_outputs():
    g, _ = build_models(ModelSpec(channels=2, seq_len=24, patch_len=6, hidden_dim=10, heads=2), seed=0)
    z = torch.rand(1, 100).repeat(4, 1)
    x = g(z)
    assert torch.equal(x[0], x[3])


def test_batch_permutation_equivariance():
    s = ModelSpec(channels=2, seq_len=24, patch_len=6, hidden_dim=10, heads=2, depth=1)
    _, d = build_models(s, seed=0)
    x = torch.randn(6, 2, 1, 24)
    perm = torch.tensor([3, 0, 5, 1, 4, 2])
    torch.testing.assert_close(d.tokens(x)[perm], d.tokens(x[perm]))
    torch.testing.assert_close(d(x).adv[perm], d(x[perm]).adv)


def test_label_embedding_is_a_lookup():
    s = ModelSpec(channels=1, seq_len=24, patch_len=6, num_classes=3)
    g, _ = build_models(s, seed=0)
    e = g.embed_label(torch.tensor([1, 1, 2]))
    assert torch.equal(e[0], e[1]) and not torch.equal(e[0], e[2])


def test_strategy4_discriminator_ignores_labels():
    s = ModelSpec(channels=1, seq_len=24, patch_len=6, num_classes=3, hidden_dim=10, heads=2)
    g, d = build_models(s, seed=0)
    assert d.embed_label(torch.tensor([0])) is None
    x = torch.randn(4, 1, 1, 24)
    x_in, extra = d.inject(x, torch.tensor([0, 1, 2, 0]))
    assert x_in is x and extra is None
    # with the generator's label path severed, the label no longer reaches D
    with torch.no_grad():
        g.label_embed.weight.zero_()
    z = torch.rand(4, 100)
    a = d(g(z, torch.tensor([0, 0, 0, 0])))
    b = d(g(z, torch.tensor([2, 1, 2, 1])))
    assert torch.equal(a.adv, b.adv) and torch.equal(a.class_logits, b.class_logits)


@pytest.mark.parametrize("strategy", ["concat-both", "add-both", "concat-channel"])
def test_label_reaches_discriminator(strategy):
    s = ModelSpec(channels=1, seq_len=24, patch_len=6, num_classes=3, latent_dim=10, label_embed_dim=10,
                  hidden_dim=10, heads=2, embed_strategy=strategy)
    _, d = build_models(s, seed=0)
    x = torch.randn(2, 1, 1, 24)
    assert not torch.equal(d(x, torch.tensor([0, 0])).adv, d(x, torch.tensor([1, 1])).adv)


def test_generator_output_depends_on_label_after_update():
    s = ModelSpec(channels=1, seq_len=24, patch_len=6, num_classes=2, hidden_dim=10, heads=2, depth=1)
    g, _ = build_models(s, seed=0)
    opt = torch.optim.SGD(g.parameters(), lr=0.1)
    z = torch.rand(4, 100)
    g(z, torch.tensor([0, 1, 0, 1])).pow(2).sum().backward()
    opt.step()
    with torch.no_grad():
        assert not torch.equal(g(z[:1], torch.tensor([0])), g(z[:1], torch.tensor([1])))
    # finite-difference check that the embedding row influences the output
    g = g.double()
    base = g(z[:1].double(), torch.tensor([1])).sum().item()
    with torch.no_grad():
        g.label_embed.weight[1, 0] += 1e-4
    bumped = g(z[:1].double(), torch.tensor([1])).sum().item()
    assert abs(bumped - base) > 0


def test_adv_input_gradient_matches_finite_differences():
    s = ModelSpec(channels=2, seq_len=24, patch_len=6, hidden_dim=16, heads=2, depth=1)
    torch.manual_seed(0)
    d = Discriminator(s).double()
    x = torch.randn(1, 2, 1, 24, dtype=torch.float64, requires_grad=True)
    (grad,) = torch.autograd.grad(d(x).adv.sum(), x)
    rng = np.random.default_rng(0)
    h = 1e-5
    for flat in rng.choice(x.numel(), size=10, replace=False):
        e = torch.zeros_like(x).view(-1)
        e[flat] = h
        e = e.view_as(x)
        with torch.no_grad():
            fd = (d(x + e).adv - d(x - e).adv).item() / (2 * h)
        g = grad.reshape(-1)[flat].item()
        assert abs(fd - g) <= 1e-3 * max(abs(g), 1e-8) + 1e-10


def test_generator_is_deterministic_module():
    s = ModelSpec(channels=1, seq_len=24, patch_len=6, hidden_dim=10, heads=2, depth=1)
    torch.manual_seed(5)
    a = Generator(s)
    torch.manual_seed(5)
    b = Generator(s)
    z = torch.rand(3, 100)
    assert torch.equal(a(z), b(z))
