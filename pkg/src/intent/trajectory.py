"""Trajectory types, canonicalizing geometry, and intention labeling.

Everything here is pure and deterministic: velocity/heading sequences,
the rotation that maps a window onto a canonical frame (start at the
origin, observation chord on the nonnegative x axis), trend counting,
and the rule-based intention label assignment used during training.
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

from . import kernels

TWO_PI = 2.0 * np.pi


class ShapeError(ValueError):
    """Input has the wrong length/shape for the requested operation."""


class Intention(IntEnum):
    """Coarse motion intention. The four nonnegative values are the model
    classes; UNLABELED marks trajectories no labeling branch accepts."""

    STRAIGHT = 0
    LEFT = 1
    RIGHT = 2
    STATIC = 3
    UNLABELED = -1

    @property
    def label_name(self) -> str:
        return self.name.lower()


N_CLASSES = 4


@dataclass(frozen=True)
class Trajectory:
    """Ordered 2D locations sampled every ``dt`` seconds."""

    points: np.ndarray  # (n, 2) float64
    dt: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ShapeError(f"trajectory points must be (n, 2), got {pts.shape}")
        if pts.shape[0] < 2:
            raise ShapeError("trajectory needs at least 2 points")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(pts)):
            raise ValueError("trajectory contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class TrajectoryWindow:
    """Observation segment plus (during training) the future it precedes.

    ``start_frame``/``frame_step`` keep enough bookkeeping to write
    predictions back out in the source file's frame numbering.
    """

    observation: Trajectory
    future: Optional[Trajectory]
    agent_id: str = "0"
    scene_id: str = "scene"
    start_frame: int = 0
    frame_step: int = 1

    def __post_init__(self):
        if len(self.observation) < 2:
            raise ShapeError("observation needs at least 2 points")
        if self.future is not None and self.future.dt != self.observation.dt:
            raise ValueError("observation and future must share dt")

    @property
    def t_obs(self) -> int:
        return len(self.observation)

    @property
    def t_pred(self) -> int:
        return 0 if self.future is None else len(self.future)

    def complete(self) -> Trajectory:
        """Observation and future concatenated in time order."""
        if self.future is None:
            return self.observation
        pts = np.concatenate([self.observation.points, self.future.points])
        return Trajectory(pts, self.observation.dt)

    @property
    def window_id(self) -> str:
        return f"{self.scene_id}:{self.agent_id}:{self.start_frame}"


@dataclass(frozen=True)
class TransformParams:
    """Rotation/translation taking a window to its canonical frame.

    ``phi`` in [0, pi] is the magnitude of the chord angle; ``flip_branch``
    records whether the chord pointed to positive y, which selects the
    rotation sign.
    """

    phi: float
    origin: np.ndarray  # (2,)
    flip_branch: bool

    def __post_init__(self):
        if not 0.0 <= self.phi <= np.pi:
            raise ValueError(f"phi must be in [0, pi], got {self.phi}")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))


@dataclass(frozen=True)
class ObservationFeatures:
    """Model inputs derived from one observation segment."""

    velocities: np.ndarray    # (t_obs,) units/second
    radians: np.ndarray       # (t_obs,) headings in [-pi, pi]
    transformed_y: np.ndarray  # (t_obs,) canonical-frame y
    last_location: np.ndarray  # (2,) world frame

    def __post_init__(self):
        n = self.velocities.shape[0]
        if self.radians.shape[0] != n or self.transformed_y.shape[0] != n:
            raise ShapeError("feature sequences must share length")


@dataclass(frozen=True)
class LabelingThresholds:
    """Hyper-parameters of the labeling rule.

    ``thresh_v`` bounds trend counts, ``thresh_y`` bounds the canonical-y
    spread for the turn branches, and ``thresh_y_straight`` is the tighter
    spread bound used by the straight branch so that fast turns stay
    reachable. Speed bounds satisfy ``v_a < v_lr < v_s``.
    """

    thresh_v: float = 5.0
    thresh_y: float = 5.0
    thresh_y_straight: float = 0.5
    v_a: float = 0.01
    v_s: float = 0.2
    v_lr: float = 0.1

    def __post_init__(self):
        vals = (self.thresh_v, self.thresh_y, self.thresh_y_straight,
                self.v_a, self.v_s, self.v_lr)
        if any(v < 0 for v in vals):
            raise ValueError("thresholds must be nonnegative")
        if not self.v_a < self.v_lr < self.v_s:
            raise ValueError("require v_a < v_lr < v_s")


# ---------------------------------------------------------------------------
# geometry operations


def _check_length(traj: Trajectory, t_obs: int):
    if t_obs < 2:
        raise ShapeError("t_obs must be at least 2")
    if len(traj) < t_obs:
        raise ShapeError(f"trajectory has {len(traj)} points, needs >= {t_obs}")


def compute_velocity_sequence(traj: Trajectory, t_obs: int) -> np.ndarray:
    """Speed per observed step; the final entry duplicates its predecessor
    so the sequence length equals ``t_obs``."""
    _check_length(traj, t_obs)
    return kernels.velocity_sequence(traj.points[:t_obs], traj.dt)


def compute_radian_sequence(traj: Trajectory, t_obs: int) -> np.ndarray:
    """Heading per observed step in [-pi, pi] (exact backward motion maps
    to -pi). Zero-length steps carry the previous heading forward; the
    final entry duplicates its predecessor."""
    _check_length(traj, t_obs)
    return kernels.radian_sequence(traj.points[:t_obs])


def compute_rotation_radian(traj: Trajectory, t_obs: int) -> TransformParams:
    """Rotation parameters aligning the observation chord with +x.

    A static chord (last observed point equal to the first) is degenerate;
    it yields phi = 0 and no flip, i.e. a pure translation.
    """
    _check_length(traj, t_obs)
    first = traj.points[0]
    last = traj.points[t_obs - 1]
    dx = last[0] - first[0]
    dy = last[1] - first[1]
    if dx == 0.0 and dy == 0.0:
        return TransformParams(phi=0.0, origin=first.copy(), flip_branch=False)
    if dx == 0.0:
        phi = np.pi / 2.0
    else:
        phi = abs(np.arctan(dy / dx))
        if dx < 0.0:
            phi = np.pi - phi
    return TransformParams(phi=float(phi), origin=first.copy(), flip_branch=bool(dy > 0.0))


def transform_trajectory(traj: Trajectory, params: TransformParams) -> Trajectory:
    """Apply the canonicalizing transform point-wise."""
    pts = kernels.transform_points(
        traj.points, params.phi, params.origin[0], params.origin[1], params.flip_branch
    )
    return Trajectory(pts, traj.dt)


def inverse_transform(traj: Trajectory, params: TransformParams) -> Trajectory:
    """Exact inverse of :func:`transform_trajectory` (rotation transpose
    plus translation back to the original origin)."""
    pts = kernels.inverse_points(
        traj.points, params.phi, params.origin[0], params.origin[1], params.flip_branch
    )
    return Trajectory(pts, traj.dt)


def transform_points(points: np.ndarray, params: TransformParams) -> np.ndarray:
    """Array-level canonicalizing transform (no Trajectory wrapper)."""
    return kernels.transform_points(
        np.asarray(points, dtype=np.float64),
        params.phi, params.origin[0], params.origin[1], params.flip_branch,
    )


def inverse_transform_points(points: np.ndarray, params: TransformParams) -> np.ndarray:
    """Array-level inverse of :func:`transform_points`."""
    return kernels.inverse_points(
        np.asarray(points, dtype=np.float64),
        params.phi, params.origin[0], params.origin[1], params.flip_branch,
    )


def trend_count(seq) -> int:
    """Number of strict decreases between consecutive elements."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 1 or seq.shape[0] < 2:
        raise ShapeError("trend_count needs a 1-D sequence of length >= 2")
    return int(np.count_nonzero(np.diff(seq) < 0.0))


def assign_intention_label(
    x_transformed,
    y_transformed,
    velocities,
    radians,
    thresholds: LabelingThresholds,
) -> Intention:
    """Rule-based intention label over complete-trajectory sequences.

    Branch order: static (slow) first, then straight (fast, flat, forward),
    then the turn branch for intermediate speeds with right checked before
    left. Anything that falls through is UNLABELED.
    """
    xs = np.asarray(x_transformed, dtype=np.float64)
    ys = np.asarray(y_transformed, dtype=np.float64)
    vel = np.asarray(velocities, dtype=np.float64)
    rad = np.asarray(radians, dtype=np.float64)

    mean_v = float(np.mean(vel))
    if mean_v < thresholds.v_a:
        return Intention.STATIC

    std_y = float(np.std(ys))
    if (mean_v > thresholds.v_s
            and std_y < thresholds.thresh_y_straight
            and trend_count(xs) <= thresholds.thresh_v):
        return Intention.STRAIGHT

    if (mean_v > thresholds.v_lr
            and std_y < thresholds.thresh_y
            and trend_count(xs) <= thresholds.thresh_v):
        if trend_count(-ys) <= thresholds.thresh_v and trend_count(-rad) <= thresholds.thresh_v:
            return Intention.RIGHT
        if trend_count(ys) <= thresholds.thresh_v and trend_count(rad) <= thresholds.thresh_v:
            return Intention.LEFT

    return Intention.UNLABELED


def extract_observation_features(
    window: TrajectoryWindow,
    labeling: Optional[LabelingThresholds] = None,
):
    """Full per-window feature pass.

    Returns ``(features, transform, label)``. The label is computed from
    the complete trajectory and only when ``labeling`` thresholds are
    supplied (training); at evaluation time pass ``labeling=None`` and the
    label slot is ``None``.
    """
    obs = window.observation
    t_obs = len(obs)

    velocities = kernels.velocity_sequence(obs.points, obs.dt)
    radians = kernels.radian_sequence(obs.points)
    params = compute_rotation_radian(obs, t_obs)
    obs_canon = kernels.transform_points(
        obs.points, params.phi, params.origin[0], params.origin[1], params.flip_branch
    )
    features = ObservationFeatures(
        velocities=velocities,
        radians=radians,
        transformed_y=obs_canon[:, 1].copy(),
        last_location=obs.points[-1].copy(),
    )

    label = None
    if labeling is not None:
        if window.future is None:
            raise ValueError("label requested for a window with no future segment")
        full = window.complete()
        full_canon = kernels.transform_points(
            full.points, params.phi, params.origin[0], params.origin[1], params.flip_branch
        )
        label = assign_intention_label(
            full_canon[:, 0],
            full_canon[:, 1],
            kernels.velocity_sequence(full.points, full.dt),
            kernels.radian_sequence(full.points),
            thresholds=labeling,
        )
    return features, params, label
