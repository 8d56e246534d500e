"""Full forecasting network: encoder -> social fusion -> decoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numeric as nx
from .decoder import TrajectoryPrediction, decode, gaussian_nll, init_decoder, l2_loss
from .encoder import encode_batch, init_encoder
from .fusion import (
    SOCIAL_DIM,
    attention_mask,
    build_social_map,
    fuse,
    fuse_con,
    fuse_scnn,
    fuse_sp,
    init_con,
    init_mask_head,
    init_scnn,
    init_sp,
    uniform_mask,
)
from .numeric import ParamStore, Tensor
from .scene import DEFAULT_K, DEFAULT_M, DEFAULT_T_FUT, DEFAULT_T_HIST, SceneBatch

HEADS = ("l2", "gauss")
FUSIONS = ("scnn", "sp", "con", "none")
ENCODERS = ("vlstm", "lstm")
FRAMES = ("target", "longitudinal", "ego")


@dataclass(frozen=True)
class ModelConfig:
    head: str = "l2"
    fusion: str = "scnn"
    encoder: str = "vlstm"
    attention: bool = True
    t_h: int = DEFAULT_T_HIST
    t_f: int = DEFAULT_T_FUT
    m: float = DEFAULT_M
    k: int = DEFAULT_K
    n_max: int = 8
    lambda_z: float = 1.0
    frame: str = "target"
    input_scale: float | None = None

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}, got {self.frame!r}")
        if min(self.t_h, self.t_f, self.k, self.n_max) < 1 or self.m <= 0:
            raise ValueError("t_h, t_f, k, n_max and m must be positive")
        if self.input_scale is not None and self.input_scale <= 0:
            raise ValueError("input_scale must be positive")

    @property
    def position_scale(self) -> float:
        # inputs are divided by half the region size unless set explicitly
        return self.input_scale if self.input_scale is not None else self.m / 2

    @property
    def uses_mask(self) -> bool:
        return self.fusion in ("scnn", "sp")


@dataclass
class ForwardOutput:
    output: Tensor               # (b, t_f, 3) points or (b, t_f, 6) raw Gaussian params
    mask: Tensor | None = None   # (b, k, k)
    social: Tensor | None = None
    extras: dict = field(default_factory=dict)


class TrajectoryModel:
    def __init__(self, config: ModelConfig, seed: int = 0, params: ParamStore | None = None):
        self.config = config
        self.seed = seed
        self.params = params if params is not None else self.init_params(config, seed)

    @staticmethod
    def init_params(config: ModelConfig, seed: int) -> ParamStore:
        rng = np.random.default_rng(seed)
        store = ParamStore()
        init_encoder(store, rng)
        if config.uses_mask and config.attention:
            init_mask_head(store, rng, config.k)
        if config.fusion == "scnn":
            init_scnn(store, rng)
        elif config.fusion == "sp":
            init_sp(store, rng)
        elif config.fusion == "con":
            init_con(store, rng, config.n_max)
        init_decoder(store, rng, config.head)
        return store

    # -- forward ------------------------------------------------------------
    def social_embedding(self, batch: SceneBatch, target: Tensor, nbr: Tensor, valid: np.ndarray):
        cfg, p = self.config, self.params
        b = batch.size
        if cfg.fusion == "none":
            return Tensor(np.zeros((b, SOCIAL_DIM), dtype=target.dtype)), None, {}
        if cfg.fusion == "con":
            out, dropped = fuse_con(nbr, valid, batch.nbr_dist, p, cfg.n_max)
            return out, None, {"con_dropped": dropped}
        mask = attention_mask(target, p, cfg.k) if cfg.attention else uniform_mask(b, cfg.k, target.dtype)
        smap = build_social_map(nbr, batch.nbr_cell, valid, cfg.k)
        fn = fuse_scnn if cfg.fusion == "scnn" else fuse_sp
        return fn(smap, mask, p), mask, {"social_map": smap}

    def origin(self, batch: SceneBatch) -> np.ndarray | None:
        """Per-instance point subtracted from every input position.

        ``target`` uses the target's last observed position, ``longitudinal``
        only its x coordinate (lateral offset and height stay ego-relative),
        ``ego`` nothing.
        """
        if self.config.frame == "ego":
            return None
        origin = np.array(batch.last_observed, copy=True)
        if self.config.frame == "longitudinal":
            origin[:, 1:] = 0
        return origin

    def forward(self, batch: SceneBatch, teacher: bool = False) -> ForwardOutput:
        cfg = self.config
        if batch.target_hist.shape[1] != cfg.t_h:
            raise ValueError(f"batch history length {batch.target_hist.shape[1]} != model t_h {cfg.t_h}")
        origin = self.origin(batch)
        target, nbr, valid = encode_batch(batch, self.params, cfg.position_scale,
                                          fixed_length=cfg.encoder == "lstm", origin=origin)
        social, mask, extras = self.social_embedding(batch, target, nbr, valid)
        fused = fuse(target, social)
        gt = batch.ground_truth if teacher else None
        if gt is not None and gt.shape[1] != cfg.t_f:
            raise ValueError(f"batch horizon {gt.shape[1]} != model t_f {cfg.t_f}")
        out = decode(fused, cfg.t_f, batch.last_observed, cfg.head, self.params, cfg.position_scale,
                     teacher=gt, origin=origin)
        return ForwardOutput(out, mask, social, extras)

    def loss(self, batch: SceneBatch, teacher: bool = True) -> Tensor:
        out = self.forward(batch, teacher=teacher).output
        if self.config.head == "l2":
            return l2_loss(out, batch.ground_truth)
        return gaussian_nll(out, batch.ground_truth, self.config.lambda_z)

    def predict(self, batch: SceneBatch) -> np.ndarray:
        """Autoregressive point forecasts, (b, t_f, 3)."""
        with nx.no_grad():
            out = self.forward(batch, teacher=False).output.data
        if self.config.head == "gauss":
            out = np.stack([out[..., 0], out[..., 1], out[..., 5]], axis=-1)
        return out

    def predict_full(self, batch: SceneBatch) -> tuple[list[TrajectoryPrediction], np.ndarray | None]:
        with nx.no_grad():
            fo = self.forward(batch, teacher=False)
        preds = [TrajectoryPrediction.from_raw(self.config.head, r) for r in fo.output.data]
        return preds, (fo.mask.data if fo.mask is not None else None)

    # -- persistence ----------------------------------------------------------
    def meta(self) -> dict:
        return {"model": asdict(self.config), "seed": self.seed, "position_scale": self.config.position_scale}

    def save(self, path) -> None:
        nx.save_checkpoint(path, self.params, self.meta())

    def to_bytes(self) -> bytes:
        return nx.dumps_checkpoint(self.params, self.meta())

    @classmethod
    def from_arrays(cls, arrays: dict, meta: dict, expect: ModelConfig | None = None) -> "TrajectoryModel":
        config = ModelConfig(**meta["model"])
        if expect is not None:
            diffs = {k: (v, getattr(config, k)) for k, v in asdict(expect).items() if getattr(config, k) != v}
            if diffs:
                raise nx.CheckpointError(f"checkpoint config differs from requested: {diffs}")
        store = cls.init_params(config, 0)
        store.load_arrays(arrays)
        return cls(config, meta.get("seed", 0), store)

    @classmethod
    def load(cls, path, expect: ModelConfig | None = None) -> "TrajectoryModel":
        arrays, meta = nx.load_checkpoint(Path(path))
        return cls.from_arrays(arrays, meta, expect)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TrajectoryModel":
        return cls.from_arrays(*nx.loads_checkpoint(blob))

    def with_config(self, **changes) -> "TrajectoryModel":
        return TrajectoryModel(replace(self.config, **changes), self.seed, self.params)
