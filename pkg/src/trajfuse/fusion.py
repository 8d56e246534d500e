"""Social map, trajectory-conditioned attention mask and the fusion heads.

Three fusers produce a 20-dim social embedding:

* ``scnn``: masked social map -> conv(3, s2, p1, 64) + ReLU -> conv(5, s2, p2, 16)
  -> maxpool(2) -> dense 16 -> 20
* ``sp``: masked social map summed over the grid -> dense 20 -> 20
* ``con``: the ``n_max`` nearest neighbour encodings concatenated -> dense -> 20
"""
from __future__ import annotations

import numpy as np

from . import numeric as nx
from .encoder import ENC_DIM
from .numeric import ParamStore, Tensor

SOCIAL_DIM = 20
CONV1 = dict(kernel=3, stride=2, padding=1, channels=64)
CONV2 = dict(kernel=5, stride=2, padding=2, channels=16)
POOL = 2


def init_mask_head(store: ParamStore, rng: np.random.Generator, k: int) -> None:
    store.add("fusion.mask_fc.weight", nx.uniform_fan_in(rng, (ENC_DIM, k * k), ENC_DIM))
    store.add("fusion.mask_fc.bias", np.zeros(k * k))


def init_scnn(store: ParamStore, rng: np.random.Generator) -> None:
    k1, c1 = CONV1["kernel"], CONV1["channels"]
    k2, c2 = CONV2["kernel"], CONV2["channels"]
    store.add("fusion.conv1.weight", nx.uniform_fan_in(rng, (k1, k1, ENC_DIM, c1), k1 * k1 * ENC_DIM))
    store.add("fusion.conv1.bias", np.zeros(c1))
    store.add("fusion.conv2.weight", nx.uniform_fan_in(rng, (k2, k2, c1, c2), k2 * k2 * c1))
    store.add("fusion.conv2.bias", np.zeros(c2))
    store.add("fusion.embed_fc.weight", nx.uniform_fan_in(rng, (c2, SOCIAL_DIM), c2))
    store.add("fusion.embed_fc.bias", np.zeros(SOCIAL_DIM))


def init_sp(store: ParamStore, rng: np.random.Generator) -> None:
    store.add("fusion_sp.embed_fc.weight", nx.uniform_fan_in(rng, (ENC_DIM, SOCIAL_DIM), ENC_DIM))
    store.add("fusion_sp.embed_fc.bias", np.zeros(SOCIAL_DIM))


def init_con(store: ParamStore, rng: np.random.Generator, n_max: int) -> None:
    store.add("fusion_con.embed_fc.weight", nx.uniform_fan_in(rng, (n_max * ENC_DIM, SOCIAL_DIM), n_max * ENC_DIM))
    store.add("fusion_con.embed_fc.bias", np.zeros(SOCIAL_DIM))


def build_social_map(nbr_enc: Tensor, cells: np.ndarray, valid: np.ndarray, k: int) -> Tensor:
    """Scatter valid neighbour encodings into a zero (b, k, k, c) grid."""
    b, n_b, c = nbr_enc.shape
    cells = np.asarray(cells).reshape(b, n_b, 2)
    valid = np.asarray(valid, dtype=bool).reshape(b, n_b)
    if np.any(cells[valid] < 0) or np.any(cells[valid] >= k):
        raise ValueError(f"build_social_map: cell index outside [0, {k})")
    bi, ni = np.nonzero(valid)
    flat_dst = bi * k * k + cells[bi, ni, 0] * k + cells[bi, ni, 1]
    if len(np.unique(flat_dst)) != len(flat_dst):
        raise ValueError("build_social_map: two neighbours assigned to the same cell")
    src = nbr_enc.reshape(b * n_b, c)[bi * n_b + ni]
    return nx.scatter_rows(src, flat_dst, b * k * k).reshape(b, k, k, c)


def attention_mask(target_enc: Tensor, store: ParamStore, k: int) -> Tensor:
    """softmax over the k*k logits of a single dense layer, shaped (b, k, k)."""
    logits = nx.linear(target_enc, store["fusion.mask_fc.weight"], store["fusion.mask_fc.bias"])
    return nx.softmax(logits, axis=-1).reshape(target_enc.shape[0], k, k)


def uniform_mask(b: int, k: int, dtype=np.float32) -> Tensor:
    return Tensor(np.full((b, k, k), 1.0 / (k * k), dtype=dtype))


def apply_mask(social_map: Tensor, mask: Tensor) -> Tensor:
    b, k, _, _ = social_map.shape
    if mask.shape != (b, k, k):
        raise ValueError(f"mask shape {mask.shape} does not match social map {social_map.shape}")
    return social_map * mask.reshape(b, k, k, 1)


def _batched(fn):
    # allow a single (k, k, c) map with a (k, k) mask
    def wrapper(social_map, mask, store, **kw):
        if social_map.ndim == 3:
            out = fn(social_map.reshape(1, *social_map.shape), mask.reshape(1, *mask.shape), store, **kw)
            if isinstance(out, tuple):
                return (out[0][0],) + out[1:]
            return out[0]
        return fn(social_map, mask, store, **kw)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_batched
def fuse_scnn(social_map: Tensor, mask: Tensor, store: ParamStore, return_features: bool = False):
    """Social-convolution embedding; with ``return_features`` also the conv activations."""
    x = apply_mask(social_map, mask)
    a1 = nx.relu(nx.conv2d(x, store["fusion.conv1.weight"], store["fusion.conv1.bias"],
                           stride=CONV1["stride"], padding=CONV1["padding"]))
    a2 = nx.conv2d(a1, store["fusion.conv2.weight"], store["fusion.conv2.bias"],
                   stride=CONV2["stride"], padding=CONV2["padding"])
    pooled = nx.maxpool2d(a2, POOL, POOL)
    flat = pooled.reshape(pooled.shape[0], -1)
    out = nx.linear(flat, store["fusion.embed_fc.weight"], store["fusion.embed_fc.bias"])
    if return_features:
        return out, {"conv1": a1, "conv2": a2, "pool": pooled}
    return out


@_batched
def fuse_sp(social_map: Tensor, mask: Tensor, store: ParamStore, return_features: bool = False):
    """Social pooling: mask-weighted sum over grid cells, then a dense layer."""
    pooled = apply_mask(social_map, mask).sum(axis=(1, 2))
    out = nx.linear(pooled, store["fusion_sp.embed_fc.weight"], store["fusion_sp.embed_fc.bias"])
    if return_features:
        return out, {"pooled": pooled}
    return out


def fuse_con(nbr_enc: Tensor, valid: np.ndarray, distance: np.ndarray, store: ParamStore,
             n_max: int = 8) -> tuple[Tensor, int]:
    """Nearest-first concatenation of up to ``n_max`` neighbour encodings.

    Returns the (b, 20) embedding and the number of neighbours dropped.
    """
    b, n_b, c = nbr_enc.shape
    valid = np.asarray(valid, dtype=bool)
    key = np.where(valid, np.asarray(distance, dtype=float), np.inf)
    order = np.argsort(key, axis=1, kind="stable")
    dropped = int(np.maximum(valid.sum(axis=1) - n_max, 0).sum())
    take = order[:, :n_max]
    slots = np.zeros((b, n_max), dtype=np.int64)
    slot_valid = np.zeros((b, n_max), dtype=bool)
    w = min(n_max, n_b)
    slots[:, :w] = take
    slot_valid[:, :w] = np.take_along_axis(valid, take, axis=1)
    flat = nbr_enc.reshape(b * n_b, c)[(np.arange(b)[:, None] * n_b + slots).reshape(-1)]
    flat = nx.where(slot_valid.reshape(-1, 1), flat, 0.0).reshape(b, n_max * c)
    out = nx.linear(flat, store["fusion_con.embed_fc.weight"], store["fusion_con.embed_fc.bias"])
    return out, dropped


def fuse(target_enc: Tensor, social: Tensor) -> Tensor:
    """Concatenate the target encoding with the social embedding (-> 40 dims)."""
    if target_enc.shape[-1] != ENC_DIM or social.shape[-1] != SOCIAL_DIM:
        raise ValueError(f"fuse expects 20 + 20 dims, got {target_enc.shape} and {social.shape}")
    return nx.concat([target_enc, social], axis=-1)
