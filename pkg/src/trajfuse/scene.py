"""Scene/agent data model, grid discretisation and padded batches."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numeric import DTYPE

DEFAULT_M = 30.0
DEFAULT_K = 11
DEFAULT_T_HIST = 5
DEFAULT_T_FUT = 5


class AgentClass(str, enum.Enum):
    PEDESTRIAN = "pedestrian"
    VEHICLE = "vehicle"
    RIDER = "rider"

    @property
    def index(self) -> int:
        return _CLASS_ORDER.index(self)

    def one_hot(self) -> np.ndarray:
        v = np.zeros(3, dtype=DTYPE)
        v[self.index] = 1
        return v


_CLASS_ORDER = [AgentClass.PEDESTRIAN, AgentClass.VEHICLE, AgentClass.RIDER]
CLASS_NAMES = [c.value for c in _CLASS_ORDER]


def class_from_index(i: int) -> AgentClass:
    return _CLASS_ORDER[i]


@dataclass(frozen=True)
class AgentObs:
    agent_id: int
    cls: AgentClass
    x: float
    y: float
    z: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class Frame:
    t: int
    agents: tuple[AgentObs, ...]

    def __post_init__(self):
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"frame t={self.t}: duplicate agent ids")


@dataclass(frozen=True)
class Scene:
    scene_id: str
    frames: tuple[Frame, ...]
    frame_period_s: float = 0.25

    def __post_init__(self):
        ts = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"scene {self.scene_id}: frame indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    def mean_agents_per_frame(self) -> float:
        return float(np.mean([len(f.agents) for f in self.frames])) if self.frames else 0.0

    def tracks(self) -> dict[int, "AgentTrack"]:
        samples: dict[int, list] = {}
        classes: dict[int, AgentClass] = {}
        for f in self.frames:
            for a in f.agents:
                samples.setdefault(a.agent_id, []).append((f.t, (a.x, a.y, a.z)))
                classes[a.agent_id] = a.cls
        return {
            aid: AgentTrack(aid, classes[aid], np.array([t for t, _ in s]), np.array([p for _, p in s], dtype=float))
            for aid, s in samples.items()
        }


@dataclass(frozen=True, eq=False)
class AgentTrack:
    agent_id: int
    cls: AgentClass
    frames: np.ndarray     # (n,) strictly increasing frame indices
    positions: np.ndarray  # (n, 3) metres, ego-relative

    def __post_init__(self):
        if len(self.frames) < 1 or len(self.frames) != len(self.positions):
            raise ValueError(f"agent {self.agent_id}: need >=1 sample with matching positions")
        if np.any(np.diff(self.frames) <= 0):
            raise ValueError(f"agent {self.agent_id}: frame indices must be strictly increasing")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError(f"agent {self.agent_id}: non-finite coordinates")


def assign_grid_cell(dx: float, dy: float, m: float = DEFAULT_M, k: int = DEFAULT_K) -> tuple[int, int] | None:
    """Cell (row, col) of a target-relative ground-plane offset, or None outside the region.

    The region is the half-open square [-m/2, m/2) on both axes; rows index y, cols index x.
    """
    if not (math.isfinite(dx) and math.isfinite(dy)):
        raise ValueError(f"assign_grid_cell: non-finite offset ({dx}, {dy})")
    if m <= 0 or k < 1:
        raise ValueError(f"assign_grid_cell: need m > 0 and k >= 1 (m={m}, k={k})")
    half = m / 2
    if not (-half <= dx < half and -half <= dy < half):
        return None
    width = m / k
    row = min(int(math.floor((dy + half) / width)), k - 1)
    col = min(int(math.floor((dx + half) / width)), k - 1)
    return row, col


@dataclass(frozen=True, eq=False)
class NeighborTrack:
    agent_id: int
    cls: AgentClass
    positions: np.ndarray  # (L, 3), L in [1, t_h], oldest first, ends at the anchor frame
    cell: tuple[int, int]
    distance: float        # ground-plane distance to the target at the anchor frame


@dataclass(frozen=True, eq=False)
class PredictionInstance:
    instance_id: str
    scene_id: str
    agent_id: int
    cls: AgentClass
    anchor_t: int
    history: np.ndarray       # (t_h, 3)
    ground_truth: np.ndarray  # (t_f, 3)
    neighbors: tuple[NeighborTrack, ...] = ()

    @property
    def last_observed(self) -> np.ndarray:
        return self.history[-1]


@dataclass
class ExtractionReport:
    instances: int = 0
    skipped_short_history: int = 0
    cell_collisions_dropped: int = 0

    def merge(self, other: "ExtractionReport") -> None:
        self.instances += other.instances
        self.skipped_short_history += other.skipped_short_history
        self.cell_collisions_dropped += other.cell_collisions_dropped


def extract_instances(
    scene: Scene,
    t_h: int = DEFAULT_T_HIST,
    t_f: int = DEFAULT_T_FUT,
    m: float = DEFAULT_M,
    k: int = DEFAULT_K,
    stride: int = 1,
    report: ExtractionReport | None = None,
) -> list[PredictionInstance]:
    """Cut prediction instances from every valid anchor frame of a scene.

    Anchor frames are scene positions ``a`` (0-based) with ``t_h - 1 <= a`` and
    ``a + t_f < len(scene)``, stepping by ``stride``. A target needs samples in
    all ``t_h + t_f`` frames around the anchor; neighbours only need to be present
    at the anchor and keep their contiguous observed suffix (up to ``t_h`` frames).
    """
    report = report if report is not None else ExtractionReport()
    n = len(scene.frames)
    if n < t_h + t_f:
        return []
    # per-frame lookup of positions: list index -> {agent_id: (cls, xyz)}
    lookup = [{a.agent_id: (a.cls, (a.x, a.y, a.z)) for a in f.agents} for f in scene.frames]
    out: list[PredictionInstance] = []
    for a in range(t_h - 1, n - t_f, stride):
        window = lookup[a - t_h + 1:a + t_f + 1]
        present = lookup[a]
        for aid in sorted(present):
            cls, pos = present[aid]
            if not all(aid in fr for fr in window):
                report.skipped_short_history += 1
                continue
            traj = np.array([fr[aid][1] for fr in window], dtype=float)
            hist, fut = traj[:t_h], traj[t_h:]
            neighbors, dropped = _gather_neighbors(lookup, a, aid, hist[-1], t_h, m, k)
            report.cell_collisions_dropped += dropped
            out.append(
                PredictionInstance(
                    instance_id=f"{scene.scene_id}:{aid}:{scene.frames[a].t}",
                    scene_id=scene.scene_id,
                    agent_id=aid,
                    cls=cls,
                    anchor_t=scene.frames[a].t,
                    history=hist,
                    ground_truth=fut,
                    neighbors=tuple(neighbors),
                )
            )
    report.instances += len(out)
    return out


def _gather_neighbors(lookup, a, target_id, center, t_h, m, k):
    by_cell: dict[tuple[int, int], NeighborTrack] = {}
    dropped = 0
    for nid in sorted(lookup[a]):
        if nid == target_id:
            continue
        cls, pos = lookup[a][nid]
        dx, dy = pos[0] - center[0], pos[1] - center[1]
        cell = assign_grid_cell(dx, dy, m, k)
        if cell is None:
            continue
        length = 0
        while length < t_h and a - length >= 0 and nid in lookup[a - length]:
            length += 1
        track = np.array([lookup[a - j][nid][1] for j in range(length - 1, -1, -1)], dtype=float)
        cand = NeighborTrack(nid, cls, track, cell, float(math.hypot(dx, dy)))
        prev = by_cell.get(cell)
        if prev is None:
            by_cell[cell] = cand
            continue
        dropped += 1
        # nearest wins; ids ascend in this loop so an equal-distance incumbent keeps its slot
        if cand.distance < prev.distance:
            by_cell[cell] = cand
    return sorted(by_cell.values(), key=lambda nb: nb.agent_id), dropped


@dataclass(eq=False)
class SceneBatch:
    """Padded tensors for a list of instances.

    Neighbour slots beyond an instance's count have length 0 and ``nbr_valid``
    False; time steps beyond a neighbour's length are zero.
    """

    target_hist: np.ndarray   # (b, t_h, 3)
    target_class: np.ndarray  # (b,) int
    nbr_pos: np.ndarray       # (b, n_b, t_b, 3)
    nbr_len: np.ndarray       # (b, n_b) int
    nbr_class: np.ndarray     # (b, n_b) int
    nbr_cell: np.ndarray      # (b, n_b, 2) int
    nbr_dist: np.ndarray      # (b, n_b)
    nbr_valid: np.ndarray     # (b, n_b) bool
    ground_truth: np.ndarray  # (b, t_f, 3)
    instance_ids: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.target_hist.shape[0]

    @property
    def last_observed(self) -> np.ndarray:
        return self.target_hist[:, -1, :]

    @property
    def classes(self) -> list[AgentClass]:
        return [class_from_index(int(i)) for i in self.target_class]


def build_batch(instances: Sequence[PredictionInstance]) -> SceneBatch:
    """Pack instances (in the given order) into zero-padded arrays."""
    if not instances:
        raise ValueError("build_batch: empty instance list")
    b = len(instances)
    t_h = instances[0].history.shape[0]
    t_f = instances[0].ground_truth.shape[0]
    n_b = max(1, max(len(i.neighbors) for i in instances))
    t_b = max([1] + [len(nb.positions) for i in instances for nb in i.neighbors])
    nbr_pos = np.zeros((b, n_b, t_b, 3), dtype=DTYPE)
    nbr_len = np.zeros((b, n_b), dtype=np.int64)
    nbr_class = np.zeros((b, n_b), dtype=np.int64)
    nbr_cell = np.zeros((b, n_b, 2), dtype=np.int64)
    nbr_dist = np.zeros((b, n_b), dtype=DTYPE)
    for r, inst in enumerate(instances):
        if inst.history.shape[0] != t_h or inst.ground_truth.shape[0] != t_f:
            raise ValueError(f"build_batch: instance {inst.instance_id} has mismatched horizon")
        for j, nb in enumerate(inst.neighbors):
            L = len(nb.positions)
            nbr_pos[r, j, :L] = nb.positions
            nbr_len[r, j] = L
            nbr_class[r, j] = nb.cls.index
            nbr_cell[r, j] = nb.cell
            nbr_dist[r, j] = nb.distance
    return SceneBatch(
        target_hist=np.stack([i.history for i in instances]).astype(DTYPE),
        target_class=np.array([i.cls.index for i in instances], dtype=np.int64),
        nbr_pos=nbr_pos,
        nbr_len=nbr_len,
        nbr_class=nbr_class,
        nbr_cell=nbr_cell,
        nbr_dist=nbr_dist,
        nbr_valid=nbr_len > 0,
        ground_truth=np.stack([i.ground_truth for i in instances]).astype(DTYPE),
        instance_ids=[i.instance_id for i in instances],
    )


def iter_batches(instances: Sequence[PredictionInstance], batch_size: int, rng: np.random.Generator | None = None):
    """Yield SceneBatch objects; shuffled when an rng is given."""
    order = np.arange(len(instances))
    if rng is not None:
        order = rng.permutation(len(instances))
    for lo in range(0, len(order), batch_size):
        yield build_batch([instances[i] for i in order[lo:lo + batch_size]])
