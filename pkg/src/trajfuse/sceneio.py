"""JSON-lines scene files and prediction exports.

One scene per line::

    {"scene_id": str, "frame_period_s": float,
     "frames": [{"t": int, "agents": [{"id": int, "class": str, "x": .., "y": .., "z": ..}]}]}
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Sequence

from .decoder import TrajectoryPrediction
from .scene import AgentClass, AgentObs, Frame, Scene


class SceneFileError(ValueError):
    """Schema violations, one entry per offending line."""

    def __init__(self, path, errors: list[tuple[int, str]]):
        self.path = str(path)
        self.errors = errors
        lines = "; ".join(f"line {n}: {msg}" for n, msg in errors)
        super().__init__(f"{self.path}: {lines}")


def scene_to_dict(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "frame_period_s": scene.frame_period_s,
        "frames": [
            {"t": f.t, "agents": [{"id": a.agent_id, "class": a.cls.value, "x": a.x, "y": a.y, "z": a.z}
                                  for a in f.agents]}
            for f in scene.frames
        ],
    }


def _number(obj: dict, key: str, where: str) -> float:
    if key not in obj:
        raise ValueError(f"{where}: missing {key!r} field")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ValueError(f"{where}: {key!r} must be a finite number, got {v!r}")
    return float(v)


def _integer(obj: dict, key: str, where: str) -> int:
    if key not in obj:
        raise ValueError(f"{where}: missing {key!r} field")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"{where}: {key!r} must be an integer, got {v!r}")
    return v


def scene_from_dict(d) -> Scene:
    if not isinstance(d, dict):
        raise ValueError("scene must be a JSON object")
    if not isinstance(d.get("scene_id"), str):
        raise ValueError("missing or non-string 'scene_id' field")
    period = _number(d, "frame_period_s", "scene")
    if period <= 0:
        raise ValueError("'frame_period_s' must be positive")
    frames_raw = d.get("frames")
    if not isinstance(frames_raw, list):
        raise ValueError("missing or non-list 'frames' field")
    frames = []
    for fi, fr in enumerate(frames_raw):
        where = f"frame {fi}"
        if not isinstance(fr, dict) or not isinstance(fr.get("agents"), list):
            raise ValueError(f"{where}: needs 't' and an 'agents' list")
        t = _integer(fr, "t", where)
        agents = []
        for ai, a in enumerate(fr["agents"]):
            aw = f"{where} agent {ai}"
            if not isinstance(a, dict):
                raise ValueError(f"{aw}: agent must be an object")
            if "class" not in a:
                raise ValueError(f"{aw}: missing 'class' field")
            try:
                cls = AgentClass(a["class"])
            except ValueError:
                raise ValueError(f"{aw}: unknown class {a['class']!r}") from None
            agents.append(AgentObs(_integer(a, "id", aw), cls, _number(a, "x", aw), _number(a, "y", aw),
                                   _number(a, "z", aw)))
        frames.append(Frame(t, tuple(agents)))
    return Scene(d["scene_id"], tuple(frames), period)


def export_scenes(path, scenes: Iterable[Scene]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenes:
            fh.write(json.dumps(scene_to_dict(s), separators=(",", ":")))
            fh.write("\n")


def import_scenes(path) -> list[Scene]:
    """Parse a scene file; every malformed line is collected before raising."""
    scenes, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                scenes.append(scene_from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                errors.append((lineno, f"invalid JSON ({exc.msg})"))
            except ValueError as exc:
                errors.append((lineno, str(exc)))
    if errors:
        raise SceneFileError(path, errors)
    return scenes


def export_predictions(path, instance_ids: Sequence[str], predictions: Sequence[TrajectoryPrediction]) -> None:
    if len(instance_ids) != len(predictions):
        raise ValueError("one instance id per prediction required")
    with open(path, "w", encoding="utf-8") as fh:
        for iid, p in zip(instance_ids, predictions):
            fh.write(json.dumps(p.to_json(iid), separators=(",", ":")))
            fh.write("\n")


def read_predictions(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
