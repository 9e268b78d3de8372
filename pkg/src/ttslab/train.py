"""Adversarial training loop, sampling from checkpoints."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import torch

from . import checkpoint as ckpt
from .data import SignalSet
from .errors import ConfigError, TrainingDivergedError, UsageError
from .losses import (
    categorical_loss,
    gradient_penalty,
    mse_d_loss,
    mse_g_loss,
)
from .models import Discriminator, Generator, ModelSpec, build_models, critic, sample_latent

log = logging.getLogger(__name__)

OBJECTIVES = ("mse", "wgan-gp")
LOSS_COLUMNS = ("step", "L_D", "L_G", "L_adv", "L_cls_r", "L_cls_f", "GP", "L_adv_g")


@dataclass
class TrainConfig:
    objective: str = "wgan-gp"
    lr_g: float = 1e-4
    lr_d: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 32
    lambda_cls: float = 1.0
    lambda_gp: float = 10.0
    d_steps_per_g: int = 1
    max_steps: int = 1000
    real_label: float = 1.0
    fake_label: float = 0.0
    soft_labels: bool = False
    flip_labels: bool = False
    seed: int = 0
    log_every: int = 10
    ckpt_every: int = 500

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.lr_g < 0 or self.lr_d < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.lambda_gp < 0:
            raise ConfigError("lambda_gp must be >= 0")
        if self.real_label == self.fake_label:
            raise ConfigError("real_label and fake_label must differ")
        if self.batch_size < 1 or self.d_steps_per_g < 1 or self.max_steps < 0:
            raise ConfigError("batch_size and d_steps_per_g must be >= 1, max_steps >= 0")
        if self.log_every < 1 or self.ckpt_every < 1:
            raise ConfigError("log_every and ckpt_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    step: int
    spec: ModelSpec
    cfg: TrainConfig
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: torch.Generator
    data_meta: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    running: dict = field(default_factory=dict)

    def save(self, path) -> Path:
        tensors = {}
        tensors.update(ckpt.module_tensors(self.generator, "generator"))
        tensors.update(ckpt.module_tensors(self.discriminator, "discriminator"))
        g_moments, g_steps = ckpt.adam_tensors(self.opt_g, self.generator, "opt_g")
        d_moments, d_steps = ckpt.adam_tensors(self.opt_d, self.discriminator, "opt_d")
        tensors.update(g_moments)
        tensors.update(d_moments)
        extra = {
            "train_config": self.cfg.to_dict(),
            "data": self.data_meta,
            "optimizer": {"g_steps": g_steps, "d_steps": d_steps},
            "rng": {
                "sampler": ckpt.encode_bytes(self.rng.get_state()),
                "torch": ckpt.encode_bytes(torch.get_rng_state()),
            },
            "running": self.running,
        }
        return ckpt.write_checkpoint(path, self.spec, self.step, tensors, extra)


def _make_optimizers(g, d, cfg: TrainConfig):
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    return (torch.optim.Adam(g.parameters(), lr=cfg.lr_g, betas=betas),
            torch.optim.Adam(d.parameters(), lr=cfg.lr_d, betas=betas))


def init_state(spec: ModelSpec, cfg: TrainConfig, data_meta: Optional[dict] = None) -> TrainState:
    torch.manual_seed(cfg.seed)
    g, d = build_models(spec)
    opt_g, opt_d = _make_optimizers(g, d, cfg)
    rng = torch.Generator().manual_seed(cfg.seed)
    return TrainState(0, spec, cfg, g, d, opt_g, opt_d, rng, data_meta or {})


def load_state(path, cfg: Optional[TrainConfig] = None) -> TrainState:
    """Rebuild a resumable ``TrainState``; ``cfg`` overrides the stored config
    (e.g. a larger ``max_steps``)."""
    header, tensors = ckpt.read_checkpoint(path)
    spec = ModelSpec.from_dict(header["model_spec"])
    cfg = cfg or TrainConfig(**header["train_config"])
    g, d = Generator(spec), Discriminator(spec)
    ckpt.load_module_state(g, "generator", tensors)
    ckpt.load_module_state(d, "discriminator", tensors)
    opt_g, opt_d = _make_optimizers(g, d, cfg)
    ckpt.restore_adam(opt_g, g, "opt_g", tensors, header["optimizer"]["g_steps"])
    ckpt.restore_adam(opt_d, d, "opt_d", tensors, header["optimizer"]["d_steps"])
    rng = torch.Generator()
    rng.set_state(ckpt.decode_bytes(header["rng"]["sampler"]))
    torch.set_rng_state(ckpt.decode_bytes(header["rng"]["torch"]))
    return TrainState(header["step"], spec, cfg, g, d, opt_g, opt_d, rng,
                      header.get("data", {}), running=header.get("running", {}))


def load_generator(path) -> tuple[Generator, ModelSpec, dict]:
    header, tensors = ckpt.read_checkpoint(path)
    spec = ModelSpec.from_dict(header["model_spec"])
    g = Generator(spec)
    ckpt.load_module_state(g, "generator", tensors)
    g.eval()
    return g, spec, header


def _check_data(data: SignalSet, spec: ModelSpec) -> None:
    if (data.n_channels, data.length) != (spec.channels, spec.seq_len):
        raise UsageError(
            f"data has (C, W) = {(data.n_channels, data.length)}, model expects {(spec.channels, spec.seq_len)}"
        )
    if len(data) == 0:
        raise UsageError("training data is empty")
    if spec.conditional:
        if data.labels is None:
            raise UsageError("conditional model needs labelled training data")
        if data.labels.max() >= spec.num_classes:
            raise UsageError(f"data labels exceed num_classes={spec.num_classes}")


def _finite(step: int, **terms) -> None:
    for name, value in terms.items():
        if not math.isfinite(value):
            raise TrainingDivergedError(step, name, value)


def train_step(state: TrainState, x: torch.Tensor, y: Optional[torch.Tensor]) -> dict:
    """One generator update preceded by ``d_steps_per_g`` discriminator updates.

    Returns the loss components of the last discriminator update and of the
    generator update, as Python floats.
    """
    cfg, spec = state.cfg, state.spec
    g, d, rng = state.generator, state.discriminator, state.rng
    n = x.shape[0]
    step = state.step + 1
    lam = cfg.lambda_cls if spec.conditional else 0.0

    d.requires_grad_(True)
    for _ in range(cfg.d_steps_per_g):
        idx = torch.randint(n, (cfg.batch_size,), generator=rng)
        real = x[idx]
        c_real = y[idx] if y is not None else None
        latent = sample_latent(cfg.batch_size, spec, rng, labels=c_real)
        with torch.no_grad():
            fake = g(latent.z, latent.target_labels)
        out_real = d(real, c_real)
        out_fake = d(fake, c_real)
        if cfg.objective == "mse":
            adv_d = mse_d_loss(torch.sigmoid(out_real.adv), torch.sigmoid(out_fake.adv), cfg)
            l_adv = -adv_d
            gp = torch.zeros(())
        else:
            w = out_real.adv.mean() - out_fake.adv.mean()
            gp = gradient_penalty(critic(d, c_real), real, fake, rng) if cfg.lambda_gp else torch.zeros(())
            l_adv = w - cfg.lambda_gp * gp
        l_cls_r = categorical_loss(out_real.class_logits, c_real) if spec.conditional else torch.zeros(())
        l_d = -l_adv + lam * l_cls_r
        _finite(step, L_D=l_d.item(), L_adv=l_adv.item(), GP=gp.item(), L_cls_r=l_cls_r.item())
        state.opt_d.zero_grad(set_to_none=True)
        l_d.backward()
        state.opt_d.step()

    d.requires_grad_(False)
    latent = sample_latent(cfg.batch_size, spec, rng)
    fake = g(latent.z, latent.target_labels)
    out = d(fake, latent.target_labels)
    if cfg.objective == "mse":
        l_adv_g = mse_g_loss(torch.sigmoid(out.adv), cfg)
    else:
        l_adv_g = -out.adv.mean()
    l_cls_f = categorical_loss(out.class_logits, latent.target_labels) if spec.conditional else torch.zeros(())
    l_g = l_adv_g + lam * l_cls_f
    _finite(step, L_G=l_g.item(), L_adv_g=l_adv_g.item(), L_cls_f=l_cls_f.item())
    state.opt_g.zero_grad(set_to_none=True)
    l_g.backward()
    state.opt_g.step()
    d.requires_grad_(True)

    state.step = step
    return {
        "step": step,
        "L_D": l_d.item(),
        "L_G": l_g.item(),
        "L_adv": l_adv.item(),
        "L_cls_r": l_cls_r.item(),
        "L_cls_f": l_cls_f.item(),
        "GP": gp.item(),
        "L_adv_g": l_adv_g.item(),
    }


def _append_csv(path: Path, rows: Sequence[dict]) -> None:
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(LOSS_COLUMNS)
        for r in rows:
            w.writerow([r["step"]] + [repr(r[c]) for c in LOSS_COLUMNS[1:]])


def read_losses(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def train(
    data: SignalSet,
    spec: ModelSpec,
    cfg: TrainConfig,
    out_dir=None,
    resume=None,
    callback: Optional[Callable[[TrainState, dict], None]] = None,
) -> TrainState:
    """Train until ``cfg.max_steps`` generator updates have been made.

    With ``out_dir``, losses go to ``losses.csv`` (started afresh unless
    resuming) every ``log_every`` steps and checkpoints ``ckpt_<step>`` are
    written every ``ckpt_every`` steps and at the end. ``resume`` names a checkpoint to
    continue from; the run is then bit-identical to an uninterrupted one.
    """
    _check_data(data, spec)
    meta = {
        "class_names": data.class_names,
        "channel_names": data.channel_names,
        "sampling_rate_hz": data.sampling_rate_hz,
        "norm_stats": data.norm_stats,
    }
    if resume is not None:
        state = load_state(resume, cfg)
        if state.spec != spec:
            raise UsageError("checkpoint model spec differs from the requested spec")
    else:
        state = init_state(spec, cfg, meta)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if resume is None:
            (out / "losses.csv").unlink(missing_ok=True)
        (out / "train_config.json").write_text(json.dumps({"model_spec": spec.to_dict(),
                                                           "train_config": cfg.to_dict()}, indent=1))
    log.info("training %s objective, lambda_cls=%g lambda_gp=%g, steps %d..%d",
             cfg.objective, cfg.lambda_cls, cfg.lambda_gp, state.step, cfg.max_steps)

    x = torch.from_numpy(data.values)
    y = torch.from_numpy(data.labels) if spec.conditional else None
    state.generator.train()
    state.discriminator.train()
    pending = []
    while state.step < cfg.max_steps:
        row = train_step(state, x, y)
        if callback is not None:
            callback(state, row)
        if state.step % cfg.log_every == 0:
            state.history.append(row)
            pending.append(row)
        if out is not None and (state.step % cfg.ckpt_every == 0 or state.step == cfg.max_steps):
            _append_csv(out / "losses.csv", pending)
            pending = []
            state.save(ckpt.checkpoint_path(out, state.step))
    if out is not None and pending:
        _append_csv(out / "losses.csv", pending)
    return state


def balanced_labels(n: int, k: int) -> np.ndarray:
    """``n`` labels cycling over ``0..k-1`` so counts differ by at most one."""
    return np.arange(n) % k


def generate(
    checkpoint,
    n: int,
    labels: Union[None, str, Sequence[int], np.ndarray] = None,
    seed: int = 0,
    batch_size: int = 500,
) -> SignalSet:
    """Sample ``n`` synthetic signals from a checkpoint's generator.

    Conditional models need ``labels``: one integer per sample or the string
    ``"balanced"``.
    """
    if isinstance(checkpoint, (str, Path)):
        g, spec, header = load_generator(checkpoint)
        meta = header.get("data", {})
    else:
        g, spec, meta = checkpoint.generator, checkpoint.spec, checkpoint.data_meta
    if n < 0:
        raise UsageError("n must be >= 0")
    if spec.conditional:
        if labels is None:
            raise UsageError("conditional model needs labels (per-sample ints or 'balanced')")
        if isinstance(labels, str):
            if labels != "balanced":
                raise UsageError(f"unknown label mode {labels!r}")
            labels = balanced_labels(n, spec.num_classes)
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (n,):
            raise UsageError(f"need {n} labels, got {labels.size}")
        if n and (labels.min() < 0 or labels.max() >= spec.num_classes):
            raise UsageError(f"label out of range [0, {spec.num_classes})")
    elif labels is not None:
        raise UsageError("unconditional model does not take labels")

    rng = torch.Generator().manual_seed(seed)
    was_training = g.training
    g.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, n, batch_size):
            stop = min(n, start + batch_size)
            lab = None if labels is None else torch.from_numpy(labels[start:stop])
            latent = sample_latent(stop - start, spec, rng, labels=lab)
            chunks.append(g(latent.z, latent.target_labels).float().numpy())
    g.train(was_training)
    values = np.concatenate(chunks) if chunks else np.zeros((0, spec.channels, 1, spec.seq_len), np.float32)
    class_names = meta.get("class_names")
    if spec.conditional and class_names is None:
        class_names = [str(i) for i in range(spec.num_classes)]
    return SignalSet(
        values=values,
        labels=labels,
        class_names=class_names if spec.conditional else None,
        sampling_rate_hz=meta.get("sampling_rate_hz"),
        channel_names=meta.get("channel_names"),
        norm_stats=meta.get("norm_stats"),
    )
