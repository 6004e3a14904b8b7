"""Parameterized synthetic trajectory generators.

Used to build labeled toy datasets: constant-speed straight lines,
constant-turn arcs (left = counterclockwise), low-amplitude static
jitter, plus dead-band and zigzag shapes that no labeling branch
accepts. Speed bands are chosen with margin against the default
labeling thresholds so each generator's class is unambiguous.
"""

from typing import List, Tuple

import numpy as np

from .datasets import RawScene
from .trajectory import Intention, Trajectory, TrajectoryWindow


def _polyline(start, headings, step: float) -> np.ndarray:
    """Chain of unit steps scaled by ``step`` along per-step headings."""
    n = headings.shape[0] + 1
    pts = np.empty((n, 2))
    pts[0] = start
    pts[1:, 0] = start[0] + np.cumsum(step * np.cos(headings))
    pts[1:, 1] = start[1] + np.cumsum(step * np.sin(headings))
    return pts


def _random_start(rng, scale: float = 5.0):
    return rng.uniform(-scale, scale, 2)


def straight_points(rng, n: int, dt: float,
                    speed_range: Tuple[float, float] = (0.25, 1.5)) -> np.ndarray:
    """Constant heading, speed above the straight-branch bound."""
    speed = rng.uniform(*speed_range)
    heading = np.full(n - 1, rng.uniform(0.0, 2.0 * np.pi))
    return _polyline(_random_start(rng), heading, speed * dt)


def arc_points(rng, n: int, dt: float, turn: int,
               speed_range: Tuple[float, float] = (0.12, 0.19),
               total_turn_range: Tuple[float, float] = (0.8, 2.2)) -> np.ndarray:
    """Constant-rate turn; ``turn=+1`` curves left (counterclockwise),
    ``-1`` right. Speeds sit between the turn and straight bounds so the
    straight branch can never shadow the turn branch."""
    if turn not in (1, -1):
        raise ValueError("turn must be +1 (left) or -1 (right)")
    speed = rng.uniform(*speed_range)
    total = rng.uniform(*total_turn_range)
    m = n - 1
    delta = turn * total / max(m - 1, 1)
    headings = rng.uniform(0.0, 2.0 * np.pi) + delta * np.arange(m)
    return _polyline(_random_start(rng), headings, speed * dt)


def static_points(rng, n: int, dt: float, jitter: float = 0.0015) -> np.ndarray:
    """Jitter steps far below the static speed bound."""
    radii = rng.uniform(0.0, jitter, n - 1)
    angles = rng.uniform(0.0, 2.0 * np.pi, n - 1)
    steps = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    pts = np.empty((n, 2))
    pts[0] = _random_start(rng)
    pts[1:] = pts[0] + np.cumsum(steps, axis=0)
    return pts


def deadband_points(rng, n: int, dt: float,
                    speed_range: Tuple[float, float] = (0.02, 0.08)) -> np.ndarray:
    """Straight motion in the dead band between the static and turn speed
    bounds; no labeling branch fires."""
    speed = rng.uniform(*speed_range)
    heading = np.full(n - 1, rng.uniform(0.0, 2.0 * np.pi))
    return _polyline(_random_start(rng), heading, speed * dt)


def zigzag_points(rng, n: int, dt: float, block: int = 6,
                  swing: float = 1.2, speed: float = 0.6) -> np.ndarray:
    """Forward motion with alternating heading blocks; the canonical-y
    spread blocks the straight branch while the many reversals block the
    turn branch."""
    base = rng.uniform(0.0, 2.0 * np.pi)
    signs = np.repeat([1.0, -1.0], block)
    reps = int(np.ceil((n - 1) / signs.shape[0]))
    pattern = np.tile(signs, reps)[: n - 1]
    return _polyline(_random_start(rng), base + swing * pattern, speed * dt)


def random_walk_points(rng, n: int, scale: float = 1.0) -> np.ndarray:
    """Unconstrained random walk for property tests."""
    steps = rng.normal(0.0, scale, (n - 1, 2))
    pts = np.empty((n, 2))
    pts[0] = _random_start(rng)
    pts[1:] = pts[0] + np.cumsum(steps, axis=0)
    return pts


_CLASS_GENERATORS = {
    Intention.STRAIGHT: lambda rng, n, dt: straight_points(rng, n, dt),
    Intention.LEFT: lambda rng, n, dt: arc_points(rng, n, dt, turn=1),
    Intention.RIGHT: lambda rng, n, dt: arc_points(rng, n, dt, turn=-1),
    Intention.STATIC: lambda rng, n, dt: static_points(rng, n, dt),
}


def class_points(rng, intention: Intention, n: int, dt: float) -> np.ndarray:
    """Trajectory drawn from the named class's generator."""
    try:
        gen = _CLASS_GENERATORS[intention]
    except KeyError:
        raise ValueError(f"no generator for {intention}") from None
    return gen(rng, n, dt)


def make_window(points: np.ndarray, t_obs: int, dt: float,
                agent_id: str = "0", scene_id: str = "synthetic",
                start_frame: int = 0) -> TrajectoryWindow:
    """Split a full trajectory into an observation/future window."""
    pts = np.asarray(points, dtype=np.float64)
    obs = Trajectory(pts[:t_obs], dt)
    fut = Trajectory(pts[t_obs:], dt) if pts.shape[0] > t_obs else None
    return TrajectoryWindow(observation=obs, future=fut,
                            agent_id=agent_id, scene_id=scene_id,
                            start_frame=start_frame)


def four_class_windows(rng, n_per_class: int, t_obs: int, t_pred: int,
                       dt: float = 0.4, scene_id: str = "synthetic"
                       ) -> List[TrajectoryWindow]:
    """Balanced labeled toy dataset cycling through the four classes."""
    n = t_obs + t_pred
    windows = []
    agent = 0
    for _ in range(n_per_class):
        for intention in (Intention.STRAIGHT, Intention.LEFT,
                          Intention.RIGHT, Intention.STATIC):
            pts = class_points(rng, intention, n, dt)
            windows.append(make_window(pts, t_obs, dt, agent_id=str(agent),
                                       scene_id=scene_id))
            agent += 1
    return windows


def windows_to_scene(windows: List[TrajectoryWindow], name: str,
                     frame_step: int = 10) -> RawScene:
    """Pack windows into one RawScene (distinct agents, shared clock)."""
    frames = []
    agents = []
    points = []
    for i, w in enumerate(windows):
        pts = w.complete().points
        frames.extend(range(0, frame_step * pts.shape[0], frame_step))
        agents.extend([i] * pts.shape[0])
        points.append(pts)
    dt = windows[0].observation.dt
    order = np.lexsort((np.array(frames), np.array(agents)))
    return RawScene(
        name=name,
        frames=np.array(frames, dtype=np.int64)[order],
        agents=np.array(agents, dtype=np.int64)[order],
        points=np.concatenate(points)[order],
        dt=dt,
    )
