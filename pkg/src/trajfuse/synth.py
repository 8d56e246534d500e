"""Synthetic multi-agent traffic scenes in the ego frame.

The ego vehicle sits at the origin of a straight road running along x.
Vehicles and riders move along fixed polylines (lanes, lane changes, a weaving
bike path) at a speed that, with interaction on, is reduced by an IDM-style
car-following rule. Pedestrians walk on the sidewalks with persistent turning
and, with interaction on, a social-force repulsion from nearby agents.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scene import AgentClass, AgentObs, Frame, Scene

LANE_WIDTH = 3.5
VEHICLE_LANES = (-5.25, -1.75, 1.75, 5.25)   # y < 0 drives +x, y > 0 drives -x
BIKE_LANES = (-8.5, 8.5)
SIDEWALKS = ((-13.5, -10.5), (10.5, 13.5))
WORLD_X = 60.0
SENSE_X = 45.0
DENSITY_LEVELS = {"low": 0.5, "medium": 1.0, "high": 1.8}


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    density: str | float = "medium"
    class_mix: tuple[float, float, float] = (1.0, 1.0, 1.0)  # pedestrian, vehicle, rider spawn weights
    frame_period_s: float = 0.2
    interaction: bool = True
    lane_change_prob: float = 0.35
    noise_std: float = 0.0
    warmup_frames: int = 120

    def density_factor(self) -> float:
        if isinstance(self.density, str):
            if self.density not in DENSITY_LEVELS:
                raise ValueError(f"unknown density {self.density!r}; expected one of {sorted(DENSITY_LEVELS)}")
            return DENSITY_LEVELS[self.density]
        if not self.density > 0:
            raise ValueError(f"density must be positive, got {self.density}")
        return float(self.density)

    def validate(self) -> None:
        self.density_factor()
        if len(self.class_mix) != 3 or min(self.class_mix) < 0 or sum(self.class_mix) <= 0:
            raise ValueError(f"class_mix must be three non-negative weights, got {self.class_mix}")
        if self.frame_period_s <= 0 or self.noise_std < 0 or not 0 <= self.lane_change_prob <= 1:
            raise ValueError("invalid frame period, noise or lane-change probability")


def ground_z(x: float, y: float) -> float:
    """Road surface height: a gentle grade plus raised sidewalks."""
    return 0.03 * x + (0.15 if abs(y) >= 10.0 else 0.0)


class Polyline:
    """Arc-length parameterised 2-D path."""

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=float)
        seg = np.hypot(*np.diff(self.points, axis=0).T)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def at(self, s: float) -> tuple[float, float]:
        return float(np.interp(s, self.s, self.points[:, 0])), float(np.interp(s, self.s, self.points[:, 1]))


def lane_polyline(y0: float, direction: int, change_to: float | None = None, change_at: float = 0.0,
                  change_len: float = 30.0, weave: tuple[float, float, float] | None = None) -> Polyline:
    xs = np.arange(-WORLD_X - 5, WORLD_X + 5.001, 0.5) * direction
    ys = np.full_like(xs, y0)
    if change_to is not None:
        u = np.clip((xs * direction - change_at) / change_len, 0.0, 1.0)
        ys = y0 + (change_to - y0) * (1 - np.cos(np.pi * u)) / 2
    if weave is not None:
        amp, wavelength, phase = weave
        ys = ys + amp * np.sin(2 * np.pi * xs / wavelength + phase)
    return Polyline(np.stack([xs, ys], axis=1))


@dataclass
class _PathAgent:
    agent_id: int
    cls: AgentClass
    path: Polyline
    s: float
    v0: float
    v: float
    direction: int
    spawn_step: int

    def xy(self) -> tuple[float, float]:
        return self.path.at(self.s)


@dataclass
class _Walker:
    agent_id: int
    pos: np.ndarray
    heading: float
    speed: float
    yaw_rate: float
    side: int
    direction: int  # +1 walks toward +x, -1 toward -x


@dataclass
class SyntheticWorld:
    """Stateful simulator; ``run`` returns the recorded Scene.

    ``plans`` keeps, per path-following agent, the polyline, spawn step, arc
    position at spawn and desired speed so tests can replay motion exactly.
    """

    config: SynthConfig
    scene_id: str = "synth-0"
    plans: dict[int, tuple[Polyline, int, float, float]] = field(default_factory=dict)

    def __post_init__(self):
        self.config.validate()
        self.rng = np.random.default_rng(self.config.seed)
        self.path_agents: list[_PathAgent] = []
        self.walkers: list[_Walker] = []
        self.next_id = 1
        self.step_idx = 0

    # -- spawning -------------------------------------------------------------
    def _rates(self) -> np.ndarray:
        mix = np.asarray(self.config.class_mix, dtype=float)
        mix = mix / mix.sum()
        # base arrivals per second over the whole road
        return 3.0 * self.config.density_factor() * mix

    def _new_id(self) -> int:
        aid = self.next_id
        self.next_id += 1
        return aid

    def _spawn_vehicle(self, s_offset: float = 0.0) -> None:
        rng = self.rng
        lane = int(rng.integers(len(VEHICLE_LANES)))
        y0 = VEHICLE_LANES[lane]
        direction = 1 if y0 < 0 else -1
        same_side = [y for y in VEHICLE_LANES if np.sign(y) == np.sign(y0) and y != y0]
        change_to = None
        change_at = 0.0
        if same_side and rng.random() < self.config.lane_change_prob:
            change_to = same_side[0]
            change_at = float(rng.uniform(-45, 25))
        path = lane_polyline(y0, direction, change_to, change_at, change_len=float(rng.uniform(25, 40)))
        self._spawn_on_path(AgentClass.VEHICLE, path, direction, float(rng.uniform(6.0, 14.0)), s_offset)

    def _spawn_rider(self, s_offset: float = 0.0) -> None:
        rng = self.rng
        side = int(rng.integers(2))
        y0 = BIKE_LANES[side]
        direction = 1 if y0 < 0 else -1
        weave = (float(rng.uniform(0.3, 0.8)), float(rng.uniform(12, 25)), float(rng.uniform(0, 2 * np.pi)))
        path = lane_polyline(y0, direction, weave=weave)
        self._spawn_on_path(AgentClass.RIDER, path, direction, float(rng.uniform(3.0, 6.5)), s_offset)

    def _spawn_on_path(self, cls, path, direction, v0, s_offset) -> None:
        # keep a minimum entry gap behind the last agent on this path start
        x0, y0 = path.at(s_offset)
        for other in self.path_agents:
            ox, oy = other.xy()
            if abs(oy - y0) < 1.5 and abs(ox - x0) < 8.0:
                return
        aid = self._new_id()
        self.path_agents.append(_PathAgent(aid, cls, path, s_offset, v0, v0, direction, self.step_idx))
        self.plans[aid] = (path, self.step_idx, s_offset, v0)

    def _spawn_walker(self, anywhere: bool = False) -> None:
        rng = self.rng
        side = int(rng.integers(2))
        lo, hi = SIDEWALKS[side]
        y = float(rng.uniform(lo + 0.3, hi - 0.3))
        heading_dir = 1 if rng.random() < 0.5 else -1
        x = float(rng.uniform(-WORLD_X, WORLD_X)) if anywhere else -heading_dir * WORLD_X
        heading = (0.0 if heading_dir > 0 else np.pi) + float(rng.normal(0, 0.2))
        self.walkers.append(
            _Walker(self._new_id(), np.array([x, y]), heading, float(rng.uniform(0.9, 1.7)),
                    float(rng.normal(0, 0.25)), side, heading_dir)
        )

    # -- dynamics -------------------------------------------------------------
    def _leader_gap(self, agent: _PathAgent, positions: dict[int, tuple[float, float]]) -> tuple[float, float] | None:
        ax, ay = positions[agent.agent_id]
        best = None
        for other in self.path_agents:
            if other is agent or other.direction != agent.direction:
                continue
            ox, oy = positions[other.agent_id]
            if abs(oy - ay) > LANE_WIDTH / 2:
                continue
            gap = (ox - ax) * agent.direction
            if gap > 0 and (best is None or gap < best[0]):
                best = (gap, other.v)
        return best

    def _step_paths(self, dt: float) -> None:
        positions = {a.agent_id: a.xy() for a in self.path_agents}
        new_v = {}
        for a in self.path_agents:
            if not self.config.interaction:
                new_v[a.agent_id] = a.v0
                continue
            length = 4.5 if a.cls is AgentClass.VEHICLE else 1.8
            s0, T, amax, bcomf = (3.0, 1.2, 2.0, 3.0) if a.cls is AgentClass.VEHICLE else (1.5, 0.8, 1.2, 2.0)
            acc = amax * (1 - (a.v / a.v0) ** 4)
            lead = self._leader_gap(a, positions)
            if lead is not None:
                gap, lead_v = lead
                gap = max(gap - length, 0.1)
                s_star = s0 + a.v * T + a.v * (a.v - lead_v) / (2 * math.sqrt(amax * bcomf))
                acc -= amax * (max(s_star, 0.0) / gap) ** 2
            new_v[a.agent_id] = float(np.clip(a.v + acc * dt, 0.0, 1.2 * a.v0))
        for a in self.path_agents:
            a.v = new_v[a.agent_id]
            a.s += a.v * dt
        self.path_agents = [a for a in self.path_agents if a.s < a.path.length - 1.0]

    def _step_walkers(self, dt: float) -> None:
        """Heading-persistent walking along the sidewalk plus pairwise repulsion.

        The heading integrates a piecewise-constant yaw rate, relaxes toward
        the walking direction and is steered back toward the band centre, so
        walkers drift in smooth arcs instead of bouncing between the kerbs.
        """
        rng = self.rng
        others = [np.array(a.xy()) for a in self.path_agents]
        pos_now = [w.pos.copy() for w in self.walkers]
        for i, w in enumerate(self.walkers):
            if rng.random() < 0.04:
                w.yaw_rate = float(rng.normal(0, 0.25))
            desired = 0.0 if w.direction > 0 else math.pi
            err = math.remainder(w.heading - desired, 2 * math.pi)
            lo, hi = SIDEWALKS[w.side]
            offset = w.pos[1] - (lo + hi) / 2
            w.heading += (w.yaw_rate - 0.3 * err - 0.4 * offset * w.direction) * dt
            vel = w.speed * np.array([math.cos(w.heading), math.sin(w.heading)])
            if self.config.interaction:
                for j, p in enumerate(pos_now + others):
                    if j == i:
                        continue
                    d = w.pos - p
                    dist = float(np.hypot(*d))
                    if 1e-6 < dist < 4.0:
                        vel += 2.5 * math.exp((0.8 - dist) / 0.6) * d / dist
            sp = float(np.hypot(*vel))
            if sp > 2.5:
                vel *= 2.5 / sp
            w.pos = w.pos + vel * dt
            w.pos[1] = min(max(w.pos[1], lo), hi)
        self.walkers = [w for w in self.walkers if abs(w.pos[0]) <= WORLD_X]

    def _spawn_step(self, dt: float) -> None:
        rates = self._rates() * dt
        n_ped, n_veh, n_rid = (self.rng.poisson(r) for r in rates)
        for _ in range(n_veh):
            self._spawn_vehicle()
        for _ in range(n_rid):
            self._spawn_rider()
        for _ in range(n_ped):
            self._spawn_walker()

    def _populate(self) -> None:
        # initial agents spread over the road, then a short warm-up
        rates = self._rates()
        for _ in range(self.rng.poisson(rates[1] * 8)):
            self._spawn_vehicle(s_offset=float(self.rng.uniform(0, 2 * WORLD_X)))
        for _ in range(self.rng.poisson(rates[2] * 8)):
            self._spawn_rider(s_offset=float(self.rng.uniform(0, 2 * WORLD_X)))
        for _ in range(self.rng.poisson(rates[0] * 25)):
            self._spawn_walker(anywhere=True)

    def step(self) -> None:
        dt = self.config.frame_period_s
        self._spawn_step(dt)
        self._step_paths(dt)
        self._step_walkers(dt)
        self.step_idx += 1

    def observe(self, t: int) -> Frame:
        agents = []
        noise = self.config.noise_std
        for a in self.path_agents:
            x, y = a.xy()
            agents.append((a.agent_id, a.cls, x, y))
        for w in self.walkers:
            agents.append((w.agent_id, AgentClass.PEDESTRIAN, float(w.pos[0]), float(w.pos[1])))
        obs = []
        for aid, cls, x, y in sorted(agents, key=lambda r: r[0]):
            if abs(x) > SENSE_X:
                continue
            z = ground_z(x, y)
            if noise > 0:
                x, y, z = (v + float(self.rng.normal(0, noise)) for v in (x, y, z))
            obs.append(AgentObs(aid, cls, round(x, 4), round(y, 4), round(z, 4)))
        return Frame(t, tuple(obs))

    def run(self, n_frames: int) -> Scene:
        if n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        self._populate()
        for _ in range(self.config.warmup_frames):
            self.step()
        frames = []
        for t in range(n_frames):
            frames.append(self.observe(t))
            self.step()
        return Scene(self.scene_id, tuple(frames), self.config.frame_period_s)


def generate_synthetic_scene(config: SynthConfig, n_frames: int, scene_id: str | None = None) -> Scene:
    """Deterministic synthetic scene for ``config.seed``."""
    return SyntheticWorld(config, scene_id or f"synth-{config.seed}").run(n_frames)


def generate_corpus(seed: int, n_scenes: int, n_frames: int, **overrides) -> list[Scene]:
    """Scenes alternating low/high density with per-scene seeds drawn from ``seed``."""
    ss = np.random.SeedSequence(seed)
    scenes = []
    for i, child in enumerate(ss.spawn(n_scenes)):
        sub_seed = int(child.generate_state(1)[0])
        density = overrides.get("density", "low" if i % 2 == 0 else "high")
        cfg = SynthConfig(seed=sub_seed, **{**overrides, "density": density})
        scenes.append(generate_synthetic_scene(cfg, n_frames, scene_id=f"s{seed}-{i:03d}"))
    return scenes
