"""Command-line entry point.

Every subcommand reads its parameters from built-in defaults, then an
optional ``--config`` JSON file, then ``--key value`` flags, and writes the
merged result to ``config.resolved.json`` in its output directory. Feeding
that file back through ``--config`` repeats the run.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .errors import ConfigError, TTSLabError, UsageError

log = logging.getLogger("ttslab")

SEED_ENV = "TTSLAB_SEED"
RESOLVED_NAME = "config.resolved.json"


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _json(text):
    return json.loads(text) if isinstance(text, str) else text


def _labels(text):
    if isinstance(text, str) and text.strip() == "balanced":
        return "balanced"
    return _json(text)


def _optional(kind: Callable) -> Callable:
    def parse(text):
        if text is None or (isinstance(text, str) and text.lower() in ("none", "null", "")):
            return None
        return kind(text)

    return parse


INT, FLOAT, STR, BOOL, JSON = int, float, str, _bool, _json
OPT_INT, OPT_FLOAT, OPT_STR = _optional(int), _optional(float), _optional(str)

# name -> (default, parser, help)
COMMON = {
    "out": (None, OPT_STR, "output directory (default: runs/<command>-<timestamp>)"),
    "seed": (None, OPT_INT, f"random seed (falls back to ${SEED_ENV}, then 0)"),
}

MODEL_PARAMS = {
    "patch_len": (None, OPT_INT, "timesteps per patch; must divide the sequence length"),
    "latent_dim": (100, INT, "generator input size"),
    "hidden_dim": (50, INT, "transformer width"),
    "depth": (3, INT, "encoder blocks in each network"),
    "heads": (5, INT, "attention heads"),
    "classes": (0, INT, "number of classes (0 trains an unconditional model)"),
    "label_embed_dim": (10, INT, "label embedding size"),
    "dropout": (0.0, FLOAT, "dropout rate"),
    "embed_strategy": ("generator-concat-plus-cls-head", STR, "label embedding strategy"),
}

TRAIN_PARAMS = {
    "objective": ("wgan-gp", STR, "mse or wgan-gp"),
    "lr_g": (1e-4, FLOAT, "generator learning rate"),
    "lr_d": (3e-4, FLOAT, "discriminator learning rate"),
    "adam_beta1": (0.9, FLOAT, "Adam beta1"),
    "adam_beta2": (0.999, FLOAT, "Adam beta2"),
    "batch_size": (32, INT, "batch size"),
    "lambda_cls": (1.0, FLOAT, "classification loss weight"),
    "lambda_gp": (10.0, FLOAT, "gradient penalty weight"),
    "d_steps_per_g": (1, INT, "discriminator updates per generator update"),
    "max_steps": (1000, INT, "generator updates"),
    "real_label": (1.0, FLOAT, "MSE target for real samples"),
    "fake_label": (0.0, FLOAT, "MSE target for synthetic samples"),
    "soft_labels": (False, BOOL, "use 0.9/0.1 targets"),
    "flip_labels": (False, BOOL, "swap real and fake targets"),
    "log_every": (10, INT, "loss logging cadence"),
    "ckpt_every": (500, INT, "checkpoint cadence"),
}

CWT_PARAMS = {
    "omega0": (6.0, FLOAT, "Morlet centre frequency"),
    "voices_per_octave": (10, INT, "scales per octave"),
    "min_period": (2.0, FLOAT, "smallest period in samples"),
    "max_period": (None, OPT_FLOAT, "largest period in samples (default W/2)"),
}

COMMANDS: dict[str, dict[str, tuple]] = {
    "simulate": {
        "kind": ("sine", STR, "sine or class-sines"),
        "n": (10000, INT, "number of samples (class-sines: total, split evenly)"),
        "w": (24, INT, "sequence length"),
        "c": (5, INT, "channels"),
        "freq_range": ([0.0, 0.1], JSON, "sine: frequency interval"),
        "phase_range": ([0.0, 0.1], JSON, "sine: phase interval"),
        "bands": ([[0.03, 0.07], [0.15, 0.22]], JSON, "class-sines: frequency band per class, cycles/sample"),
        "amp_range": ([0.8, 1.2], JSON, "class-sines: amplitude interval"),
        "noise_std": (0.0, FLOAT, "class-sines: additive white noise"),
    },
    "preprocess": {
        "input": (None, OPT_STR, "signal set path, or a CSV file"),
        "labeled": (False, BOOL, "CSV: last column is the label"),
        "sampling_rate_hz": (None, OPT_FLOAT, "CSV: sampling rate"),
        "crop_start": (None, OPT_INT, "first timestep kept"),
        "crop_end": (None, OPT_INT, "one past the last timestep kept"),
        "test_per_class": (None, OPT_INT, "hold out this many samples per class into test/"),
        "balance_per_class": (None, OPT_INT, "resample the (training) set to this many per class"),
        "normalize": (False, BOOL, "channel-wise standardization (training-split statistics)"),
    },
    "train": {
        "data": (None, OPT_STR, "training signal set"),
        "resume": (None, OPT_STR, "checkpoint to continue from"),
        **MODEL_PARAMS,
        **TRAIN_PARAMS,
    },
    "generate": {
        "ckpt": (None, OPT_STR, "checkpoint file or training run directory"),
        "n": (1000, INT, "samples to draw"),
        "labels": (None, _optional(_labels), "'balanced' or a JSON list of per-sample labels"),
        "batch_size": (500, INT, "generation batch size"),
    },
    "wcoh": {
        "a": (None, OPT_STR, "first signal set"),
        "b": (None, OPT_STR, "second signal set"),
        "n": (None, OPT_INT, "samples drawn from each set (default: all)"),
        "workers": (1, INT, "threads for the pair loop"),
        "matrix": (False, BOOL, "also write the n x n score matrix as CSV"),
        **CWT_PARAMS,
    },
    "visualize": {
        "real": (None, OPT_STR, "real signal set"),
        "syn": (None, OPT_STR, "synthetic signal set"),
        "n": (500, INT, "samples drawn from each set"),
        "methods": (["pca", "tsne"], JSON, "projections to draw"),
        "perplexity": (30.0, FLOAT, "t-SNE perplexity"),
        "max_iter": (1000, INT, "t-SNE iterations"),
        "value_bins": (100, INT, "fusion map value bins"),
        "channel": (0, INT, "channel for fusion maps and coherence heatmap"),
        "raw_n": (4, INT, "rows in the raw signal grid"),
        **CWT_PARAMS,
    },
    "casestudy": {
        "real": (None, OPT_STR, "labelled real training pool"),
        "syn": (None, OPT_STR, "labelled synthetic pool"),
        "test": (None, OPT_STR, "held-out test set (default: split off the real pool)"),
        "test_per_class": (200, INT, "per-class size of the split-off test set"),
        "modes": (["a", "b", "c", "d"], JSON, "compositions to evaluate"),
        "scale": (1.0, FLOAT, "multiplier on the composition counts"),
        "epochs": (30, INT, "classifier epochs"),
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ttslab", description="Transformer time-series GANs and coherence scoring.")
    parser.add_argument("--log-level", default="INFO", help="logging level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, params in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file of parameters (flags override it)")
        for key, (default, _, help_) in {**params, **COMMON}.items():
            flag = "--" + key.replace("_", "-")
            extra = {"nargs": "?", "const": "true"} if params.get(key, (None, None))[1] is BOOL else {}
            p.add_argument(flag, dest=key, default=argparse.SUPPRESS,
                           help=f"{help_} [default: {default}]", **extra)
    return parser


def resolve(command: str, flags: dict[str, Any], config_path: Optional[str] = None) -> dict:
    """Defaults, then the config file, then flags; values parsed to their declared types."""
    table = {**COMMANDS[command], **COMMON}
    merged = {k: v[0] for k, v in table.items()}
    layers = []
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {config_path}: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        if loaded.get("command", command) != command:
            raise ConfigError(f"config is for command {loaded['command']!r}, not {command!r}")
        loaded.pop("command", None)
        layers.append(loaded)
    layers.append(flags)
    for layer in layers:
        for key, value in layer.items():
            if key not in table:
                raise ConfigError(f"unknown parameter {key!r} for {command}")
            try:
                merged[key] = table[key][1](value) if value is not None else None
            except (ValueError, TypeError, json.JSONDecodeError) as e:
                raise ConfigError(f"bad value for {key}: {e}") from None
    if merged["seed"] is None:
        env = os.environ.get(SEED_ENV)
        try:
            merged["seed"] = int(env) if env else 0
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if merged["out"] is None:
        merged["out"] = str(Path("runs") / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}")
    return merged


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise UsageError("missing required parameter(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _prepare_out(cfg: dict, command: str) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_NAME).write_text(json.dumps({"command": command, **cfg}, indent=1, sort_keys=True))
    return out


def _draw(s, n: Optional[int], seed: int):
    """Seeded subsample of ``n`` samples in original order (equal-size sets get equal indices)."""
    if n is None or n >= len(s):
        return s
    if n < 1:
        raise UsageError("n must be >= 1")
    idx = np.sort(np.random.default_rng(seed).choice(len(s), size=n, replace=False))
    return s.subset(idx)


def _cwt_spec(cfg: dict):
    from .coherence import CwtSpec

    return CwtSpec(cfg["omega0"], cfg["voices_per_octave"], cfg["min_period"], cfg["max_period"])


# --------------------------------------------------------------------------
# Subcommands


def cmd_simulate(cfg: dict, out: Path) -> None:
    from .data import SineParams, save_signal_set, simulate_class_sines, simulate_sine

    if cfg["kind"] == "sine":
        s = simulate_sine(SineParams(cfg["n"], cfg["w"], cfg["c"], tuple(cfg["freq_range"]),
                                     tuple(cfg["phase_range"]), cfg["seed"]))
    elif cfg["kind"] == "class-sines":
        k = len(cfg["bands"])
        if k == 0 or cfg["n"] % k:
            raise UsageError(f"n={cfg['n']} must be a positive multiple of the {k} bands")
        s = simulate_class_sines(cfg["n"] // k, [tuple(b) for b in cfg["bands"]], cfg["w"], cfg["c"],
                                 tuple(cfg["amp_range"]), cfg["noise_std"], cfg["seed"])
    else:
        raise UsageError(f"unknown simulation kind {cfg['kind']!r}")
    save_signal_set(s, out)
    print(f"wrote {len(s)} samples of shape {s.values.shape[1:]} to {out}")


def cmd_preprocess(cfg: dict, out: Path) -> None:
    from .data import (apply_normalization, crop_window, import_csv, load_signal_set, normalize_channels,
                       resample_balanced, save_signal_set, train_test_split)

    _require(cfg, "input")
    src = Path(cfg["input"])
    if src.suffix.lower() == ".csv":
        s = import_csv(src, cfg["labeled"], cfg["sampling_rate_hz"])
    else:
        s = load_signal_set(src)
    if cfg["crop_start"] is not None or cfg["crop_end"] is not None:
        s = crop_window(s, cfg["crop_start"] or 0, cfg["crop_end"] if cfg["crop_end"] is not None else s.length)
    test = None
    if cfg["test_per_class"] is not None:
        s, test = train_test_split(s, cfg["test_per_class"], cfg["seed"])
    if cfg["balance_per_class"] is not None:
        s = resample_balanced(s, cfg["balance_per_class"], cfg["seed"])
    if cfg["normalize"]:
        s = normalize_channels(s)
        if test is not None:
            test = apply_normalization(test, s.norm_stats)
    if test is None:
        save_signal_set(s, out)
    else:
        save_signal_set(s, f"{out}/train/")
        save_signal_set(test, f"{out}/test/")
    print(f"wrote {len(s)} samples" + (f" (+{len(test)} test)" if test is not None else "") + f" to {out}")


def cmd_train(cfg: dict, out: Path) -> None:
    from .data import load_signal_set
    from .models import ModelSpec
    from .train import TrainConfig, train

    _require(cfg, "data", "patch_len")
    data = load_signal_set(cfg["data"])
    spec = ModelSpec(
        channels=data.n_channels, seq_len=data.length, patch_len=cfg["patch_len"],
        latent_dim=cfg["latent_dim"], hidden_dim=cfg["hidden_dim"], depth=cfg["depth"], heads=cfg["heads"],
        num_classes=cfg["classes"], label_embed_dim=cfg["label_embed_dim"], dropout=cfg["dropout"],
        embed_strategy=cfg["embed_strategy"],
    )
    tcfg = TrainConfig(seed=cfg["seed"], **{k: cfg[k] for k in TRAIN_PARAMS})
    state = train(data, spec, tcfg, out_dir=out, resume=cfg["resume"])
    last = state.history[-1] if state.history else {}
    print(f"trained to step {state.step}; last losses " + json.dumps(last))


def latest_checkpoint(path) -> Path:
    p = Path(path)
    if p.is_dir():
        steps = sorted(int(f.stem.split("_")[1]) for f in p.glob("ckpt_*.json"))
        if not steps:
            raise UsageError(f"no checkpoints in {p}")
        return p / f"ckpt_{steps[-1]}"
    return p


def cmd_generate(cfg: dict, out: Path) -> None:
    from .data import save_signal_set
    from .train import generate

    _require(cfg, "ckpt")
    s = generate(latest_checkpoint(cfg["ckpt"]), cfg["n"], cfg["labels"], cfg["seed"], cfg["batch_size"])
    save_signal_set(s, out)
    counts = np.bincount(s.labels).tolist() if s.labels is not None and len(s) else None
    print(f"wrote {len(s)} samples to {out}" + (f"; class counts {counts}" if counts else ""))


def cmd_wcoh(cfg: dict, out: Path) -> None:
    from .coherence import pair_scores, set_score
    from .data import load_signal_set

    _require(cfg, "a", "b")
    a, b = load_signal_set(cfg["a"]), load_signal_set(cfg["b"])
    n = cfg["n"] if cfg["n"] is not None else min(len(a), len(b))
    if n > min(len(a), len(b)):
        raise UsageError(f"n={n} exceeds the smaller set ({min(len(a), len(b))} samples)")
    a, b = _draw(a, n, cfg["seed"]), _draw(b, n, cfg["seed"])
    spec = _cwt_spec(cfg)
    scores = pair_scores(a, b, spec, cfg["workers"])
    report = {
        "wcoh_set": set_score(scores),
        "n": n,
        "w": a.length,
        "spec": spec.to_dict(),
        "per_pair_stats": {
            "min": float(scores.min()),
            "max": float(scores.max()),
            "mean": float(scores.mean()),
            "std": float(scores.std()),
        },
        # index-aligned pairs only; equals W when both sets are the same samples
        "paired_mean": float(np.mean(np.diag(scores))),
    }
    (out / "wcoh.json").write_text(json.dumps(report, indent=1))
    if cfg["matrix"]:
        np.savetxt(out / "wcoh_matrix.csv", scores, delimiter=",", fmt="%.17g")
    print(json.dumps({"wcoh_set": report["wcoh_set"], "paired_mean": report["paired_mean"], "n": n}))


def cmd_visualize(cfg: dict, out: Path) -> None:
    from . import plots
    from .coherence import wcoh
    from .data import load_signal_set
    from .evaluation import fusion_map, project_2d

    _require(cfg, "real", "syn")
    real, syn = load_signal_set(cfg["real"]), load_signal_set(cfg["syn"])
    real, syn = _draw(real, cfg["n"], cfg["seed"]), _draw(syn, cfg["n"], cfg["seed"] + 1)
    plots.raw_grid(real, syn, out / "raw.png", cfg["raw_n"])
    for method in cfg["methods"]:
        proj = project_2d(real, syn, method, cfg["seed"], cfg["perplexity"], cfg["max_iter"])
        plots.projection(proj, out / f"{method}.png")
    ch = cfg["channel"]
    if not 0 <= ch < real.n_channels:
        raise UsageError(f"channel {ch} out of range for {real.n_channels} channels")
    both = np.concatenate([real.channel(ch).ravel(), syn.channel(ch).ravel()])
    value_range = (float(both.min()), float(both.max()))
    for tag, s in (("real", real), ("synthetic", syn)):
        grid = fusion_map(s, value_bins=cfg["value_bins"], value_range=value_range, channel=ch)
        plots.fusion(grid, out / f"fusion_{tag}.png", tag)
    if real.length == syn.length:
        m = wcoh(real.values[0, ch, 0], syn.values[0, ch, 0], _cwt_spec(cfg))
        plots.coherence_heatmap(m.values, m.periods, out / "coherence.png")
        np.savetxt(out / "coherence.csv", m.values, delimiter=",", fmt="%.17g")
    print(f"wrote figures to {out}")


def cmd_casestudy(cfg: dict, out: Path) -> None:
    from . import plots
    from .data import load_signal_set, train_test_split
    from .evaluation import case_study, write_report

    _require(cfg, "real")
    real = load_signal_set(cfg["real"])
    syn = load_signal_set(cfg["syn"]) if cfg["syn"] else None
    if cfg["test"]:
        test = load_signal_set(cfg["test"])
    else:
        real, test = train_test_split(real, cfg["test_per_class"], cfg["seed"])
    k = max(real.num_classes, test.num_classes)
    reports = []
    for mode in cfg["modes"]:
        r = case_study(real, syn, test, mode, cfg["seed"], cfg["scale"], k, cfg["epochs"])
        reports.append(r)
        plots.confusion(r.confusion_matrix, out / f"confusion_{mode}.png", f"mode {mode}")
        print(f"mode {mode}: accuracy {r.accuracy:.4f} (train {r.counts})")
    write_report(reports, out / "report.json")


HANDLERS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "generate": cmd_generate,
    "wcoh": cmd_wcoh,
    "visualize": cmd_visualize,
    "casestudy": cmd_casestudy,
}


def run(argv: Optional[list[str]] = None) -> int:
    try:
        args = vars(build_parser().parse_args(argv))
        command = args.pop("command")
        level = args.pop("log_level")
        config_path = args.pop("config", None)
        logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO),
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        cfg = resolve(command, args, config_path)
        out = _prepare_out(cfg, command)
        HANDLERS[command](cfg, out)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (TTSLabError, OSError, RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
