"""LSTM decoder with a point (L2) head and a bivariate-Gaussian head.

Each step's head output is a displacement from the previous position, so the
decoded point (or Gaussian mean) is ``previous + raw``. Gaussian outputs are
kept in raw form ``(mu_x, mu_y, log sigma_x, log sigma_y, atanh rho, z)``;
``sigma = exp(.)`` and ``rho = tanh(.)`` hold the constraints by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numeric as nx
from .numeric import ParamStore, Tensor

HIDDEN = 40
HEAD_DIMS = {"l2": 3, "gauss": 6}
LOG_2PI = math.log(2 * math.pi)


def init_decoder(store: ParamStore, rng: np.random.Generator, head: str, n_in: int = 3, hidden: int = HIDDEN) -> None:
    if head not in HEAD_DIMS:
        raise ValueError(f"unknown head {head!r}")
    store.add("decoder.lstm.weight", nx.uniform_fan_in(rng, (n_in + hidden, 4 * hidden), n_in + hidden))
    store.add("decoder.lstm.bias", np.zeros(4 * hidden))
    store.add(f"decoder.head_{head}.weight", nx.uniform_fan_in(rng, (hidden, HEAD_DIMS[head]), hidden))
    store.add(f"decoder.head_{head}.bias", np.zeros(HEAD_DIMS[head]))


def decode(fused: Tensor, t_f: int, last_observed: np.ndarray, head: str, store: ParamStore,
           scale: float = 15.0, teacher: np.ndarray | None = None, origin: np.ndarray | None = None) -> Tensor:
    """Roll the decoder for ``t_f`` steps.

    fused: (b, 40) initial hidden state; the initial cell state is zero.
    Returns (b, t_f, 3) points for the L2 head or (b, t_f, 6) raw Gaussian
    parameters. With ``teacher`` (b, t_f, 3) the ground-truth previous
    position is fed at each step; otherwise the model's own previous output.
    Step inputs are ``(previous - origin) / scale``; outputs stay in the
    caller's frame.
    """
    if t_f < 1:
        raise ValueError("decode: t_f must be >= 1")
    if head not in HEAD_DIMS:
        raise ValueError(f"unknown head {head!r}")
    b = fused.shape[0]
    dtype = fused.dtype
    if teacher is not None and np.shape(teacher) != (b, t_f, 3):
        raise ValueError(f"decode: teacher must have shape {(b, t_f, 3)}, got {np.shape(teacher)}")
    w, bias = store["decoder.lstm.weight"], store["decoder.lstm.bias"]
    hw, hb = store[f"decoder.head_{head}.weight"], store[f"decoder.head_{head}.bias"]
    h, c = fused, Tensor(np.zeros((b, w.shape[1] // 4), dtype=dtype))
    prev: Tensor = Tensor(np.asarray(last_observed, dtype=dtype).reshape(b, 3))
    shift = Tensor(np.zeros((b, 3), dtype=dtype) if origin is None else np.asarray(origin, dtype=dtype).reshape(b, 3))
    steps = []
    for t in range(t_f):
        h, c = nx.lstm_cell_step((prev - shift) * (1.0 / scale), h, c, w, bias)
        raw = nx.linear(h, hw, hb)
        if head == "l2":
            out = prev + raw
            point = out
        else:
            out = nx.concat([prev[:, :2] + raw[:, :2], raw[:, 2:5], prev[:, 2:3] + raw[:, 5:6]], axis=-1)
            point = nx.concat([out[:, :2], out[:, 5:6]], axis=-1)
        steps.append(out.reshape(b, 1, -1))
        prev = Tensor(teacher[:, t].astype(dtype)) if teacher is not None else point
    return nx.concat(steps, axis=1)


def l2_loss(pred: Tensor, gt) -> Tensor:
    """Mean over steps of the squared Euclidean error; also averaged over any leading batch axis."""
    gt = nx.as_tensor(np.asarray(gt, dtype=pred.dtype), like=pred)
    if pred.shape != gt.shape:
        raise ValueError(f"l2_loss shape mismatch: {pred.shape} vs {gt.shape}")
    return nx.square(pred - gt).sum(axis=-1).mean()


def gaussian_nll(pred: Tensor, gt, lambda_z: float = 1.0) -> Tensor:
    """Bivariate-normal negative log-likelihood on (x, y) plus ``lambda_z`` * squared z error.

    ``pred`` carries raw parameters (mu_x, mu_y, log sigma_x, log sigma_y, atanh rho, z)
    per step. Averaged over steps and any leading batch axis.
    """
    gt = np.asarray(gt, dtype=pred.dtype)
    if pred.shape[:-1] != gt.shape[:-1] or pred.shape[-1] != 6 or gt.shape[-1] != 3:
        raise ValueError(f"gaussian_nll shape mismatch: {pred.shape} vs {gt.shape}")
    mx, my, sx, sy, r, z = (pred[..., i] for i in range(6))
    dx = (Tensor(gt[..., 0]) - mx) * nx.exp(-sx)
    dy = (Tensor(gt[..., 1]) - my) * nx.exp(-sy)
    rho = nx.tanh(r)
    lc = nx.logcosh(r)
    quad = nx.square(dx) + nx.square(dy) - 2.0 * rho * dx * dy
    # 1 / (1 - rho^2) = cosh(r)^2 and log sqrt(1 - rho^2) = -log cosh(r)
    nll = LOG_2PI + sx + sy - lc + 0.5 * quad * nx.exp(2.0 * lc)
    per_step = nll + lambda_z * nx.square(Tensor(gt[..., 2]) - z)
    bad = ~np.isfinite(per_step.data)
    if bad.any():
        step = int(np.argwhere(bad)[0][-1])
        raise ValueError(f"gaussian_nll: non-finite density at step {step}")
    return per_step.mean()


def point_estimate(params) -> np.ndarray:
    """(mu_x, mu_y, z) per step from Gaussian parameters (raw or squashed: only means are read)."""
    p = params.data if isinstance(params, Tensor) else np.asarray(params)
    return np.stack([p[..., 0], p[..., 1], p[..., 5]], axis=-1)


@dataclass(frozen=True, eq=False)
class TrajectoryPrediction:
    """Decoded forecast of one target.

    ``gauss`` rows are (mu_x, mu_y, sigma_x, sigma_y, rho, z) with the
    constraints already applied.
    """

    head: str
    points: np.ndarray               # (t_f, 3)
    gauss: np.ndarray | None = None  # (t_f, 6)

    @classmethod
    def from_raw(cls, head: str, raw: np.ndarray) -> "TrajectoryPrediction":
        raw = np.asarray(raw, dtype=float)
        if head == "l2":
            return cls("l2", raw.copy())
        g = raw.copy()
        g[:, 2:4] = np.exp(raw[:, 2:4])
        g[:, 4] = np.tanh(raw[:, 4])
        return cls("gauss", point_estimate(raw), g)

    def to_json(self, instance_id: str) -> dict:
        out = {"instance_id": instance_id, "head": self.head, "points": self.points.tolist()}
        if self.gauss is not None:
            out["gauss"] = self.gauss.tolist()
        return out
