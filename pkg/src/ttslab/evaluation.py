"""Qualitative comparisons and the downstream classification case study."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from sklearn.decomposition import PCA
from sklearn.manifold import TSNE
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support
from torch import nn

from .data import SignalSet, concat
from .errors import UsageError

# --------------------------------------------------------------------------
# 2-D projections


@dataclass
class Projection2D:
    points: np.ndarray
    origin: np.ndarray  # "real" / "synthetic" per point
    method: str
    method_params: dict = field(default_factory=dict)
    labels: Optional[np.ndarray] = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "origin", "label"])
            for i, (x, y) in enumerate(self.points):
                label = "" if self.labels is None else int(self.labels[i])
                w.writerow([repr(float(x)), repr(float(y)), self.origin[i], label])


def _flatten(s: SignalSet) -> np.ndarray:
    return s.values.reshape(len(s), -1).astype(np.float64)


def project_2d(real: SignalSet, syn: SignalSet, method: str = "pca", seed: int = 0,
               perplexity: float = 30.0, max_iter: int = 1000) -> Projection2D:
    """Embed the union of both sets in two dimensions (samples flattened to C*W vectors)."""
    if (real.n_channels, real.length) != (syn.n_channels, syn.length):
        raise UsageError("real and synthetic sets differ in (C, W)")
    x = np.concatenate([_flatten(real), _flatten(syn)])
    if len(x) < 3:
        raise UsageError("need at least 3 samples to project")
    origin = np.array(["real"] * len(real) + ["synthetic"] * len(syn))
    labels = None
    if real.labels is not None and syn.labels is not None:
        labels = np.concatenate([real.labels, syn.labels])
    if method == "pca":
        pca = PCA(n_components=2, svd_solver="full")
        pts = pca.fit_transform(x)
        params = {"explained_variance": pca.explained_variance_.tolist()}
    elif method == "tsne":
        perp = min(perplexity, len(x) - 1.0)
        tsne = TSNE(n_components=2, perplexity=perp, max_iter=max_iter, init="pca",
                    random_state=seed)
        pts = tsne.fit_transform(x)
        params = {"perplexity": perp, "max_iter": max_iter, "seed": seed}
    else:
        raise UsageError(f"unknown projection method {method!r}")
    return Projection2D(pts, origin, method, params, labels)


# --------------------------------------------------------------------------
# Fusion maps


def fusion_map(s: SignalSet, time_bins: Optional[int] = None, value_bins: int = 100,
               value_range: Optional[tuple[float, float]] = None, channel: int = 0) -> np.ndarray:
    """2-D histogram of ``(timestep, value)`` points over all samples of one channel.

    Returns integer counts of shape ``(value_bins, time_bins)``, row 0 holding
    the lowest values. Values outside ``value_range`` land in the edge bins,
    so the grid always sums to ``N * W``.
    """
    if len(s) == 0:
        raise UsageError("fusion map of an empty set")
    v = s.channel(channel).astype(np.float64)
    n, w = v.shape
    time_bins = w if time_bins is None else time_bins
    if time_bins < 1 or value_bins < 1:
        raise UsageError("bin counts must be positive")
    lo, hi = value_range if value_range is not None else (v.min(), v.max())
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise UsageError("value_range must be finite")
    if hi <= lo:
        hi = lo + 1.0
    rows = np.floor((v - lo) / (hi - lo) * value_bins).astype(np.int64)
    rows = np.clip(rows, 0, value_bins - 1)
    cols = np.broadcast_to((np.arange(w) * time_bins) // w, v.shape)
    grid = np.zeros((value_bins, time_bins), dtype=np.int64)
    np.add.at(grid, (rows.ravel(), cols.ravel()), 1)
    return grid


def fusion_bin_centers(value_bins: int, value_range: tuple[float, float]) -> np.ndarray:
    lo, hi = value_range
    return lo + (np.arange(value_bins) + 0.5) * (hi - lo) / value_bins


# --------------------------------------------------------------------------
# Reference classifier


class ConvClassifier(nn.Module):
    """Three conv blocks (kernel 5; 16/32/64 filters; ReLU; max-pool 2),
    global average pooling and a linear head."""

    def __init__(self, in_channels: int, num_classes: int):
        super().__init__()
        layers, c = [], in_channels
        for width in (16, 32, 64):
            layers += [nn.Conv1d(c, width, 5, padding=2), nn.ReLU(), nn.MaxPool1d(2)]
            c = width
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(64, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim == 4:
            x = x[:, :, 0, :]
        return self.head(self.features(x).mean(dim=-1))


def train_classifier(train_set: SignalSet, num_classes: int, seed: int = 0, epochs: int = 30,
                     batch_size: int = 64, lr: float = 1e-3) -> ConvClassifier:
    if train_set.labels is None:
        raise UsageError("classifier training needs labels")
    if train_set.length < 8:
        raise UsageError("sequences shorter than 8 steps cannot pass three pooling stages")
    torch.manual_seed(seed)
    model = ConvClassifier(train_set.n_channels, num_classes)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    x = torch.from_numpy(train_set.values)
    y = torch.from_numpy(train_set.labels)
    g = torch.Generator().manual_seed(seed)
    loss_fn = nn.CrossEntropyLoss()
    model.train()
    for _ in range(epochs):
        perm = torch.randperm(len(x), generator=g)
        for start in range(0, len(x), batch_size):
            idx = perm[start:start + batch_size]
            opt.zero_grad(set_to_none=True)
            loss_fn(model(x[idx]), y[idx]).backward()
            opt.step()
    model.eval()
    return model


def predict(model: ConvClassifier, s: SignalSet, batch_size: int = 1024) -> np.ndarray:
    out = []
    with torch.no_grad():
        for start in range(0, len(s), batch_size):
            out.append(model(torch.from_numpy(s.values[start:start + batch_size])).argmax(-1).numpy())
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


# --------------------------------------------------------------------------
# Case study

MODES = {
    # mode: (real count, synthetic count) at full scale
    "a": (5000, 0),
    "b": (0, 5000),
    "c": (1000, 0),
    "d": (1000, 4000),
}
MODE_NAMES = {"a": "real-only", "b": "synthetic-only", "c": "small-real", "d": "mixed"}


@dataclass
class CaseStudyReport:
    mode: str
    precision: list
    recall: list
    f1: list
    accuracy: float
    confusion_matrix: list
    counts: dict

    def to_dict(self) -> dict:
        return asdict(self)


def classification_report(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int,
                          mode: str = "", counts: Optional[dict] = None) -> CaseStudyReport:
    ks = list(range(num_classes))
    p, r, f, _ = precision_recall_fscore_support(y_true, y_pred, labels=ks, zero_division=0)
    cm = confusion_matrix(y_true, y_pred, labels=ks)
    return CaseStudyReport(
        mode=mode,
        precision=p.tolist(),
        recall=r.tolist(),
        f1=f.tolist(),
        accuracy=float(np.mean(y_true == y_pred)) if len(y_true) else 0.0,
        confusion_matrix=cm.tolist(),
        counts=counts or {},
    )


def _class_draw(s: SignalSet, per_class: int, num_classes: int, seed: int, source: str) -> SignalSet:
    """First ``per_class`` members of each class under a seed-fixed shuffle, so
    smaller draws are subsets of larger ones."""
    rng = np.random.default_rng(seed)
    picks = []
    for k in range(num_classes):
        members = np.flatnonzero(s.labels == k)
        members = members[rng.permutation(members.size)]
        if members.size < per_class:
            raise UsageError(
                f"insufficient {source} samples for class {k}: need {per_class}, have {members.size}"
            )
        picks.append(members[:per_class])
    return s.subset(np.concatenate(picks))


def compose_training_set(real: SignalSet, syn: Optional[SignalSet], mode: str, num_classes: int,
                         seed: int = 0, scale: float = 1.0) -> tuple[SignalSet, dict]:
    if mode not in MODES:
        raise UsageError(f"unknown case-study mode {mode!r}; choose from {sorted(MODES)}")
    n_real, n_syn = (int(round(c * scale)) for c in MODES[mode])
    parts = []
    if n_real:
        parts.append(_class_draw(real, n_real // num_classes, num_classes, seed, "real"))
    if n_syn:
        if syn is None or syn.labels is None:
            raise UsageError(f"mode {mode} needs labelled synthetic data")
        parts.append(_class_draw(syn, n_syn // num_classes, num_classes, seed + 1, "synthetic"))
    composed = concat(parts)
    counts = {
        "real": len(parts[0]) if n_real else 0,
        "synthetic": len(parts[-1]) if n_syn else 0,
        "per_class": np.bincount(composed.labels, minlength=num_classes).tolist(),
    }
    return composed, counts


def _overlap(a: SignalSet, b: SignalSet) -> bool:
    rows = {r.tobytes() for r in a.values.reshape(len(a), -1)}
    return any(r.tobytes() in rows for r in b.values.reshape(len(b), -1))


def case_study(real_train: SignalSet, syn_train: Optional[SignalSet], test: SignalSet, mode: str,
               seed: int = 0, scale: float = 1.0, num_classes: Optional[int] = None,
               epochs: int = 30, allow_overlap: bool = False) -> CaseStudyReport:
    """Train the reference classifier on the composition for ``mode`` and score it on ``test``.

    Modes: ``a`` 5000 real, ``b`` 5000 synthetic, ``c`` 1000 real, ``d`` 1000
    real + 4000 synthetic, every count multiplied by ``scale`` and split
    evenly across classes.
    """
    if test.labels is None:
        raise UsageError("test set must be labelled")
    k = num_classes or max(real_train.num_classes, test.num_classes)
    train_set, counts = compose_training_set(real_train, syn_train, mode, k, seed, scale)
    if not allow_overlap and _overlap(train_set, test):
        raise UsageError("test set shares samples with the training composition")
    model = train_classifier(train_set, k, seed=seed, epochs=epochs)
    report = classification_report(test.labels, predict(model, test), k, mode, counts)
    return report


def write_report(reports, path) -> None:
    payload = [r.to_dict() for r in reports] if isinstance(reports, (list, tuple)) else reports.to_dict()
    Path(path).write_text(json.dumps(payload, indent=1))
