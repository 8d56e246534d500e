"""Displacement-error metrics and the per-class report."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .scene import CLASS_NAMES

METRIC_NAMES = ("ADE", "MDE", "FDE")


def displacement(preds, gts) -> np.ndarray:
    """Per-instance, per-step Euclidean errors, shape (n, t_f)."""
    preds = np.asarray(preds, dtype=float)
    gts = np.asarray(gts, dtype=float)
    if preds.shape != gts.shape:
        raise ValueError(f"prediction/ground-truth shape mismatch: {preds.shape} vs {gts.shape}")
    if preds.ndim == 2:
        preds, gts = preds[None], gts[None]
    if preds.shape[0] == 0:
        raise ValueError("metrics need at least one instance")
    return np.linalg.norm(preds - gts, axis=-1)


def ade(preds, gts) -> float:
    return float(displacement(preds, gts).mean(axis=1).mean())


def mde(preds, gts) -> float:
    return float(displacement(preds, gts).max(axis=1).mean())


def fde(preds, gts) -> float:
    return float(displacement(preds, gts)[:, -1].mean())


def all_metrics(preds, gts) -> dict[str, float]:
    err = displacement(preds, gts)
    return {"ADE": float(err.mean(axis=1).mean()), "MDE": float(err.max(axis=1).mean()), "FDE": float(err[:, -1].mean())}


@dataclass
class MetricsReport:
    """ADE/MDE/FDE overall and per agent class.

    A class with no instances maps to ``None`` rather than zeros.
    """

    metrics: dict[str, dict[str, float] | None]
    counts: dict[str, int]
    throughput: float | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, preds, gts, classes, throughput: float | None = None) -> "MetricsReport":
        preds = np.asarray(preds, dtype=float)
        gts = np.asarray(gts, dtype=float)
        names = np.array([c.value if hasattr(c, "value") else str(c) for c in classes])
        metrics: dict = {"all": all_metrics(preds, gts)}
        counts = {"all": int(len(preds))}
        for name in CLASS_NAMES:
            sel = names == name
            counts[name] = int(sel.sum())
            metrics[name] = all_metrics(preds[sel], gts[sel]) if sel.any() else None
        return cls(metrics, counts, throughput)

    @property
    def ade(self) -> float:
        return self.metrics["all"]["ADE"]

    def table(self) -> dict:
        """Metrics keyed exactly by {all, classes} x {ADE, MDE, FDE}."""
        return {
            key: ({m: None for m in METRIC_NAMES} if self.metrics[key] is None else dict(self.metrics[key]))
            for key in ["all"] + CLASS_NAMES
        }

    def to_dict(self) -> dict:
        return {"metrics": self.table(), "counts": dict(self.counts),
                "throughput_per_s": self.throughput, **self.extra}

    def to_json(self, **kw) -> str:
        return json.dumps(self.table(), **kw)
