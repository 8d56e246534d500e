"""Variable-length LSTM track encoder shared by the target and its neighbours."""
from __future__ import annotations

import numpy as np

from . import numeric as nx
from .numeric import ParamStore, Tensor
from .scene import AgentClass, SceneBatch

HIDDEN = 17
ENC_DIM = HIDDEN + 3
PREFIX = "encoder.lstm"


def init_encoder(store: ParamStore, rng: np.random.Generator, n_in: int = 3, hidden: int = HIDDEN) -> None:
    store.add(f"{PREFIX}.weight", nx.uniform_fan_in(rng, (n_in + hidden, 4 * hidden), n_in + hidden))
    store.add(f"{PREFIX}.bias", np.zeros(4 * hidden))


def run_lstm(seqs: np.ndarray, lengths: np.ndarray, store: ParamStore, prefix: str = PREFIX) -> Tensor:
    """Final hidden state of each sequence after exactly ``lengths[i]`` steps.

    seqs: (N, T, n_in) already scaled; steps at or beyond a sequence's length
    never touch its state, so padding values cannot leak into the result.
    """
    w, b = store[f"{prefix}.weight"], store[f"{prefix}.bias"]
    hidden = b.shape[0] // 4
    n, T, _ = seqs.shape
    lengths = np.asarray(lengths)
    dtype = w.dtype
    h = Tensor(np.zeros((n, hidden), dtype=dtype))
    c = Tensor(np.zeros((n, hidden), dtype=dtype))
    for t in range(min(T, int(lengths.max(initial=0)))):
        active = (lengths > t)[:, None]
        h_new, c_new = nx.lstm_cell_step(Tensor(seqs[:, t].astype(dtype)), h, c, w, b)
        h = nx.where(active, h_new, h)
        c = nx.where(active, c_new, c)
    return h


def encode_track(positions: np.ndarray, true_length: int, cls: AgentClass, store: ParamStore,
                 scale: float = 15.0) -> np.ndarray:
    """20-dim encoding (hidden state at ``true_length`` ++ class one-hot) of one track."""
    positions = np.asarray(positions, dtype=float)
    if not 1 <= true_length <= len(positions):
        raise ValueError(f"encode_track: true_length must be in [1, {len(positions)}], got {true_length}")
    with nx.no_grad():
        h = run_lstm(positions[None] / scale, np.array([true_length]), store)
    return np.concatenate([h.data[0], cls.one_hot().astype(h.dtype)])


def _right_align(pos: np.ndarray, lengths: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros(pos.shape[:-2] + (width, pos.shape[-1]), dtype=pos.dtype)
    for idx in np.ndindex(lengths.shape):
        L = min(int(lengths[idx]), width)
        if L:
            out[idx][width - L:] = pos[idx][int(lengths[idx]) - L:int(lengths[idx])]
    return out


def encode_batch(batch: SceneBatch, store: ParamStore, scale: float = 15.0,
                 fixed_length: bool = False, origin: np.ndarray | None = None) -> tuple[Tensor, Tensor, np.ndarray]:
    """Encode targets and neighbours with one shared LSTM.

    Returns (target encodings (b, 20), neighbour encodings (b, n_b, 20), validity (b, n_b)).
    Invalid neighbour slots are exactly zero. With ``fixed_length`` every
    neighbour history is zero-pre-padded to t_h and read for all t_h steps.
    ``origin`` (b, 3), when given, is subtracted from every real position of
    the instance before scaling.
    """
    dtype = store[f"{PREFIX}.weight"].dtype
    b, t_h, _ = batch.target_hist.shape
    _, n_b, t_b, _ = batch.nbr_pos.shape
    valid = batch.nbr_valid
    target_hist, nbr_pos = batch.target_hist, batch.nbr_pos
    if origin is not None:
        origin = np.asarray(origin, dtype=dtype)
        target_hist = target_hist - origin[:, None, :]
        real = np.arange(t_b)[None, None, :] < batch.nbr_len[..., None]
        nbr_pos = np.where(real[..., None], nbr_pos - origin[:, None, None, :], 0)
    if fixed_length:
        nbr = _right_align(nbr_pos, batch.nbr_len, t_h)
        nbr_len = np.where(valid, t_h, 0)
    else:
        nbr, nbr_len = nbr_pos, batch.nbr_len
    T = max(t_h, nbr.shape[2])
    seqs = np.zeros((b + b * n_b, T, 3), dtype=dtype)
    seqs[:b, :t_h] = target_hist / scale
    seqs[b:, :nbr.shape[2]] = nbr.reshape(b * n_b, -1, 3) / scale
    lengths = np.concatenate([np.full(b, t_h), nbr_len.reshape(-1)])
    h = run_lstm(seqs, lengths, store)

    eye = np.eye(3, dtype=dtype)
    target = nx.concat([h[:b], Tensor(eye[batch.target_class])], axis=-1)
    nbr_h = h[b:].reshape(b, n_b, -1)
    nbr_onehot = eye[batch.nbr_class] * valid[..., None]
    nbr_enc = nx.concat([nx.where(valid[..., None], nbr_h, 0.0), Tensor(nbr_onehot.astype(dtype))], axis=-1)
    return target, nbr_enc, valid
