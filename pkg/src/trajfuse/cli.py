"""Command-line entry point: gen, train, eval, predict, ablate.

Every command resolves a run configuration (defaults < ``--config`` JSON <
flags), writes it to ``<out>/config.json`` and can be re-run from that file.
Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import numeric as nx
from .experiments import (
    ABLATION_ROWS,
    EXPERIMENT_TRAINING,
    Corpus,
    ablation_matrix,
    horizon_sweep,
    mean_ade,
    results_csv,
)
from .model import TrajectoryModel
from .plots import write_heatmap, write_trajectory
from .scene import build_batch
from .sceneio import SceneFileError, export_predictions, export_scenes, import_scenes
from .synth import DENSITY_LEVELS, generate_corpus
from .training import TrainConfig, TrainingDiverged, evaluate, instances_from_scenes, train_instances

log = logging.getLogger("trajfuse")

SCHEDULES = {"reference": {}, "desk": EXPERIMENT_TRAINING}


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=lambda: TrainConfig(**EXPERIMENT_TRAINING))
    data: str | None = None
    val_data: str | None = None
    checkpoint: str | None = None
    out: str = "out"
    scenes: int = 16
    frames: int = 60
    density: str = "mixed"
    noise: float = 0.0
    interaction: bool = True
    stride: int = 3
    n_instances: int | None = 2000
    seeds: int = 1
    plot: bool = False
    n_plots: int = 8
    throughput_calls: int = 1000

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = asdict(self.train)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        train = d.pop("train", None)
        base = cls(**d)
        if train is not None:
            base.train = TrainConfig.from_dict(train)
        return base


# flag -> (section, key); section None means a top-level RunConfig field
_FLAG_MAP = {
    "seed": ("train", "seed"), "head": ("train", "head"), "fusion": ("train", "fusion"),
    "encoder": ("train", "encoder"), "t_hist": ("train", "t_h"), "t_fut": ("train", "t_f"),
    "epochs": ("train", "max_epochs"), "lr": ("train", "lr"), "batch_size": ("train", "batch_size"),
    "data": (None, "data"), "val_data": (None, "val_data"), "checkpoint": (None, "checkpoint"),
    "out": (None, "out"), "scenes": (None, "scenes"), "frames": (None, "frames"),
    "density": (None, "density"), "noise": (None, "noise"), "seeds": (None, "seeds"),
    "stride": (None, "stride"), "n_instances": (None, "n_instances"), "n_plots": (None, "n_plots"),
    "throughput_calls": (None, "throughput_calls"),
}


def resolve_config(args: argparse.Namespace) -> tuple[RunConfig, set[str]]:
    """Merge defaults, config file and flags. Also returns the explicitly set training keys."""
    raw: dict = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    train_raw = dict(raw.get("train", {}))
    explicit = set(train_raw)
    if args.schedule:
        train_raw = {**SCHEDULES[args.schedule], **{k: v for k, v in train_raw.items()
                                                     if k not in EXPERIMENT_TRAINING}}
    top = {k: v for k, v in raw.items() if k != "train"}
    for flag, (section, key) in _FLAG_MAP.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if section == "train":
            train_raw[key] = value
            explicit.add(key)
        else:
            top[key] = value
    if getattr(args, "uniform_mask", False):
        train_raw["attention"] = False
        explicit.add("attention")
    if getattr(args, "no_interaction", False):
        top["interaction"] = False
    if getattr(args, "plot", False):
        top["plot"] = True
    if args.schedule:
        train = TrainConfig.from_dict(train_raw)
    else:
        train = TrainConfig.from_dict({**EXPERIMENT_TRAINING, **train_raw})
    cfg = RunConfig.from_dict(top)
    cfg.train = train
    return cfg, explicit


def _echo_config(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_model(cfg: RunConfig, explicit: set[str]) -> TrajectoryModel:
    model = TrajectoryModel.load(cfg.checkpoint)
    requested = asdict(cfg.train.model_config())
    for key in sorted(explicit):
        if key in requested and requested[key] != getattr(model.config, key):
            raise nx.CheckpointError(
                f"checkpoint parameter {key!r} is {getattr(model.config, key)!r} but {requested[key]!r} was requested")
    return model


# -- commands -------------------------------------------------------------------

def cmd_gen(cfg: RunConfig, explicit: set[str]) -> int:
    overrides = {"noise_std": cfg.noise, "interaction": cfg.interaction}
    if cfg.density != "mixed":
        overrides["density"] = cfg.density
    scenes = generate_corpus(cfg.train.seed, cfg.scenes, cfg.frames, **overrides)
    path = Path(cfg.data) if cfg.data else Path(cfg.out) / "scenes.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    export_scenes(path, scenes)
    counts = Counter()
    for s in scenes:
        for aid, tr in s.tracks().items():
            counts[tr.cls.value] += 1
    density = float(np.mean([s.mean_agents_per_frame() for s in scenes]))
    print(f"wrote {len(scenes)} scenes x {cfg.frames} frames to {path}")
    print("agents per class: " + ", ".join(f"{c}={counts[c]}" for c in ("pedestrian", "vehicle", "rider")))
    print(f"mean agents per frame: {density:.2f}")
    return 0


def _split_scenes(cfg: RunConfig):
    scenes = import_scenes(cfg.data)
    if not scenes:
        raise ValueError(f"{cfg.data}: no scenes")
    if cfg.val_data:
        return scenes, import_scenes(cfg.val_data)
    if len(scenes) < 2:
        return scenes, None
    rng = np.random.default_rng(cfg.train.seed)
    order = rng.permutation(len(scenes))
    n_val = max(1, len(scenes) // 8)
    val = [scenes[i] for i in sorted(order[:n_val])]
    return [scenes[i] for i in sorted(order[n_val:])], val


def cmd_train(cfg: RunConfig, explicit: set[str]) -> int:
    tr_scenes, va_scenes = _split_scenes(cfg)
    tr = instances_from_scenes(tr_scenes, cfg.train, cfg.stride)
    va = instances_from_scenes(va_scenes, cfg.train, cfg.stride) if va_scenes else None
    print(f"training on {len(tr)} instances, validating on {len(va) if va else len(tr)}")
    res = train_instances(cfg.train, tr, va)
    out = Path(cfg.out)
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else out / "model.ckpt"
    res.model.save(ckpt)
    res.write_log(out / "train_log.csv")
    print(f"best epoch {res.best_epoch}, validation ADE {res.best_val_ade:.4f}; checkpoint {ckpt}")
    return 0


def cmd_eval(cfg: RunConfig, explicit: set[str]) -> int:
    model = _load_model(cfg, explicit)
    inst = instances_from_scenes(import_scenes(cfg.data), model.config, cfg.stride)
    if not inst:
        raise ValueError(f"{cfg.data}: no instances at t_h={model.config.t_h}, t_f={model.config.t_f}")
    report = evaluate(model, inst, cfg.throughput_calls)
    out = Path(cfg.out)
    _write_json(out / "metrics.json", report.table())
    _write_json(out / "report.json", report.to_dict())
    m = report.metrics["all"]
    print(f"{len(inst)} instances: ADE {m['ADE']:.4f} MDE {m['MDE']:.4f} FDE {m['FDE']:.4f}")
    if report.throughput is not None:
        print(f"single-stream throughput: {report.throughput:.1f} predictions/s")
    if cfg.plot:
        _plots(model, inst[:cfg.n_plots], out / "plots")
    return 0


def _plots(model: TrajectoryModel, inst, plot_dir: Path) -> None:
    plot_dir.mkdir(parents=True, exist_ok=True)
    batch = build_batch(inst)
    preds, masks = model.predict_full(batch)
    for i, (ins, p) in enumerate(zip(inst, preds)):
        nbrs = [nb.positions for nb in ins.neighbors]
        write_trajectory(plot_dir / f"trajectory_{i:03d}", ins.history, ins.ground_truth, p.points, nbrs,
                         title=f"{ins.instance_id} ({ins.cls.value})")
    if masks is not None:
        write_heatmap(plot_dir / "attention", masks[0], title=f"attention mask, {inst[0].instance_id}")
    print(f"plots written to {plot_dir}")


def cmd_predict(cfg: RunConfig, explicit: set[str]) -> int:
    model = _load_model(cfg, explicit)
    inst = instances_from_scenes(import_scenes(cfg.data), model.config, cfg.stride)
    preds = []
    for lo in range(0, len(inst), 512):
        preds.extend(model.predict_full(build_batch(inst[lo:lo + 512]))[0])
    path = Path(cfg.out) / "predictions.jsonl"
    export_predictions(path, [i.instance_id for i in inst], preds)
    print(f"wrote {len(preds)} predictions to {path}")
    return 0


def cmd_ablate(cfg: RunConfig, explicit: set[str]) -> int:
    if cfg.data:
        corpus = Corpus.from_scenes(import_scenes(cfg.data), cfg.train.seed, n_instances=cfg.n_instances,
                                    stride=cfg.stride)
    else:
        overrides = {"noise_std": cfg.noise, "interaction": cfg.interaction}
        if cfg.density != "mixed":
            overrides["density"] = cfg.density
        corpus = Corpus.from_scenes(generate_corpus(cfg.train.seed, cfg.scenes, cfg.frames, **overrides),
                                    cfg.train.seed, n_instances=cfg.n_instances, stride=cfg.stride)
    seeds = [cfg.train.seed + i for i in range(cfg.seeds)]
    ablation = ablation_matrix(corpus, cfg.train, seeds)
    full = next(label for label, row in ABLATION_ROWS.items() if row["attention"] and row["encoder"] == "vlstm")
    sweep = horizon_sweep(corpus, replace(cfg.train, **ABLATION_ROWS[full]), seeds,
                          reuse={cfg.train.t_f: ablation[full]})
    text = results_csv({"ablation": ablation, "horizon": sweep})
    path = Path(cfg.out) / "ablation.csv"
    path.write_text(text, encoding="utf-8")
    for table in (ablation, sweep):
        for label, runs in table.items():
            print(f"{label:24s} mean ADE {mean_ade(runs):.4f}")
    print(f"wrote {path}")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "ablate": cmd_ablate}
NEEDS_DATA = {"train", "eval", "predict"}
NEEDS_CHECKPOINT = {"eval", "predict"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (for example an echoed config.json)")
    common.add_argument("--seed", type=int)
    common.add_argument("--head", choices=["l2", "gauss"])
    common.add_argument("--fusion", choices=["scnn", "sp", "con"])
    common.add_argument("--encoder", choices=["vlstm", "lstm"])
    common.add_argument("--uniform-mask", action="store_true", help="replace the attention mask by 1/k^2")
    common.add_argument("--t-hist", type=int)
    common.add_argument("--t-fut", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--plot", action="store_true", help="write SVG/CSV figures (eval)")
    common.add_argument("--data", help="scene file (JSON lines)")
    common.add_argument("--val-data", help="validation scene file (train)")
    common.add_argument("--checkpoint", help="model checkpoint path")
    common.add_argument("--schedule", choices=sorted(SCHEDULES),
                        help="optimiser preset: 'reference' (lr 1e-3, x0.1 every 10 epochs, batch 256) or 'desk'")
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--stride", type=int, help="anchor-frame stride when extracting instances")
    common.add_argument("--n-instances", type=int, help="corpus size for ablate")
    common.add_argument("--seeds", type=int, help="number of consecutive seeds for ablate")
    common.add_argument("--scenes", type=int)
    common.add_argument("--frames", type=int)
    common.add_argument("--density", choices=["mixed", *DENSITY_LEVELS])
    common.add_argument("--noise", type=float)
    common.add_argument("--no-interaction", action="store_true")
    common.add_argument("--n-plots", type=int)
    common.add_argument("--throughput-calls", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="trajfuse", description="Multi-agent trajectory forecasting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate synthetic scenes")
    sub.add_parser("train", parents=[common], help="train a model")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    sub.add_parser("predict", parents=[common], help="export predictions as JSON lines")
    sub.add_parser("ablate", parents=[common], help="ablation matrix and horizon sweep")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg, explicit = resolve_config(args)
    except (OSError, ValueError, TypeError) as exc:
        parser.error(f"invalid configuration: {exc}")
    cmd = args.command
    if cmd in NEEDS_DATA and not cfg.data:
        parser.error(f"{cmd} requires --data")
    for path in ([cfg.data] if cmd in NEEDS_DATA or (cmd == "ablate" and cfg.data) else []) + \
            ([cfg.val_data] if cfg.val_data else []):
        if not Path(path).is_file():
            parser.error(f"data file not found: {path}")
    if cmd in NEEDS_CHECKPOINT:
        if not cfg.checkpoint:
            parser.error(f"{cmd} requires --checkpoint")
        if not Path(cfg.checkpoint).is_file():
            parser.error(f"checkpoint not found: {cfg.checkpoint}")
    try:
        _echo_config(cfg)
        return COMMANDS[cmd](cfg, explicit)
    except (TrainingDiverged, nx.CheckpointError, SceneFileError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
