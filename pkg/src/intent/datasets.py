"""Trajectory file ingestion, windowing, and dataset splits.

Canonical on-disk format: UTF-8 text, one record per line, whitespace
separated columns ``frame agent_id x y``; ``#`` starts a comment line.
A dataset root may carry a ``manifest.cfg`` (key=value) declaring ``dt``,
``unit`` and the ``scenes`` file list; otherwise kind defaults apply and
every ``*.txt`` in the root is a scene.

Agents whose frame numbers skip a beat are split into separate tracks
rather than interpolated.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .trajectory import Trajectory, TrajectoryWindow


class ParseError(ValueError):
    """Malformed trajectory file (reports path and line number)."""


class DatasetError(ValueError):
    """Missing files or inconsistent dataset layout."""


UNITS = ("meters", "pixels")

KIND_DEFAULTS = {
    # kind: (dt seconds, unit, t_obs, t_pred)
    "ethucy": (0.4, "meters", 8, 12),
    "sdd": (0.4, "pixels", 8, 12),
    "kitti": (0.1, "meters", 20, 40),
}


@dataclass(frozen=True)
class WindowConfig:
    t_obs: int = 8
    t_pred: int = 12
    stride: int = 1

    def __post_init__(self):
        if self.t_obs < 2 or self.t_pred < 1 or self.stride < 1:
            raise ValueError("need t_obs >= 2, t_pred >= 1, stride >= 1")

    @property
    def length(self) -> int:
        return self.t_obs + self.t_pred


@dataclass
class RawScene:
    """Parsed records of one scene: parallel arrays sorted by (agent, frame)."""

    name: str
    frames: np.ndarray   # (n,) int64
    agents: np.ndarray   # (n,) int64
    points: np.ndarray   # (n, 2) float64
    dt: float
    unit: str = "meters"

    def __post_init__(self):
        if self.unit not in UNITS:
            raise ValueError(f"unknown unit '{self.unit}'")

    def __len__(self):
        return self.frames.shape[0]


def _parse_int(token: str, what: str, path, line_no: int) -> int:
    try:
        return int(token)
    except ValueError:
        pass
    try:
        val = float(token)
    except ValueError:
        raise ParseError(f"{path}:{line_no}: bad {what} '{token}'") from None
    if not val.is_integer():
        raise ParseError(f"{path}:{line_no}: {what} '{token}' is not an integer")
    return int(val)


def parse_trajectory_file(path, unit: str = "meters", dt: float = 0.4) -> RawScene:
    """Parse one canonical 4-column scene file."""
    path = Path(path)
    frames: List[int] = []
    agents: List[int] = []
    xs: List[float] = []
    ys: List[float] = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            cols = stripped.split()
            if len(cols) != 4:
                raise ParseError(f"{path}:{line_no}: expected 4 columns, got {len(cols)}")
            frame = _parse_int(cols[0], "frame", path, line_no)
            agent = _parse_int(cols[1], "agent id", path, line_no)
            try:
                x, y = float(cols[2]), float(cols[3])
            except ValueError:
                raise ParseError(f"{path}:{line_no}: bad coordinate") from None
            if not (np.isfinite(x) and np.isfinite(y)):
                raise ParseError(f"{path}:{line_no}: non-finite coordinate")
            key = (frame, agent)
            if key in seen:
                raise ParseError(f"{path}:{line_no}: duplicate (frame, agent) {key}")
            seen.add(key)
            frames.append(frame)
            agents.append(agent)
            xs.append(x)
            ys.append(y)
    if not frames:
        raise ParseError(f"{path}: no records")
    order = np.lexsort((np.array(frames), np.array(agents)))
    return RawScene(
        name=path.stem,
        frames=np.array(frames, dtype=np.int64)[order],
        agents=np.array(agents, dtype=np.int64)[order],
        points=np.stack([np.array(xs), np.array(ys)], axis=1)[order],
        dt=dt,
        unit=unit,
    )


def write_scene(scene: RawScene, path):
    """Serialize back to the canonical 4-column format."""
    with open(path, "w", encoding="utf-8") as fh:
        for frame, agent, (x, y) in zip(scene.frames, scene.agents, scene.points):
            fh.write(f"{frame} {agent} {float(x)!r} {float(y)!r}\n")


def agent_tracks(scene: RawScene):
    """Contiguous (agent, frames, points, frame_step) tracks.

    Frames of one agent must advance by a constant step; a larger gap
    starts a new track."""
    tracks = []
    for agent in np.unique(scene.agents):
        sel = scene.agents == agent
        frames = scene.frames[sel]
        pts = scene.points[sel]
        if frames.shape[0] == 1:
            tracks.append((int(agent), frames, pts, 1))
            continue
        diffs = np.diff(frames)
        step = int(diffs.min())
        if step <= 0:
            raise ParseError(f"scene {scene.name}: agent {agent} has non-increasing frames")
        breaks = np.nonzero(diffs != step)[0]
        start = 0
        for b in list(breaks) + [frames.shape[0] - 1]:
            end = b + 1
            tracks.append((int(agent), frames[start:end], pts[start:end], step))
            start = end
    return tracks


def build_windows(scene: RawScene, config: WindowConfig) -> List[TrajectoryWindow]:
    """Sliding windows over every track long enough for one observation
    plus one future segment; deterministic (scene, agent, start frame)
    order."""
    out: List[TrajectoryWindow] = []
    for agent, frames, pts, step in agent_tracks(scene):
        n = pts.shape[0]
        if n < config.length:
            continue
        for start in range(0, n - config.length + 1, config.stride):
            obs = Trajectory(pts[start:start + config.t_obs], scene.dt)
            fut = Trajectory(
                pts[start + config.t_obs:start + config.length], scene.dt)
            out.append(TrajectoryWindow(
                observation=obs, future=fut, agent_id=str(agent),
                scene_id=scene.name, start_frame=int(frames[start]),
                frame_step=step,
            ))
    return out


def leave_one_out_split(scenes: Sequence[RawScene], held_out: str,
                        config: WindowConfig
                        ) -> Tuple[List[TrajectoryWindow], List[TrajectoryWindow]]:
    """Windows of the held-out scene become the test set; all remaining
    scenes form the training set."""
    names = [s.name for s in scenes]
    if held_out not in names:
        raise DatasetError(f"unknown scene '{held_out}' (have {names})")
    if len(scenes) < 2:
        raise DatasetError("leave-one-out needs at least two scenes")
    train: List[TrajectoryWindow] = []
    test: List[TrajectoryWindow] = []
    for scene in scenes:
        windows = build_windows(scene, config)
        if scene.name == held_out:
            test.extend(windows)
        else:
            train.extend(windows)
    return train, test


# ---------------------------------------------------------------------------
# dataset roots


def _parse_manifest(path) -> Dict[str, str]:
    out: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ParseError(f"{path}:{line_no}: expected key=value")
            key, _, val = stripped.partition("=")
            out[key.strip()] = val.strip()
    return out


@dataclass
class LoadedDataset:
    kind: str
    scenes: List[RawScene]
    window_config: WindowConfig
    unit: str

    def all_windows(self) -> List[TrajectoryWindow]:
        out: List[TrajectoryWindow] = []
        for scene in self.scenes:
            out.extend(build_windows(scene, self.window_config))
        return out

    def split(self, held_out: str):
        return leave_one_out_split(self.scenes, held_out, self.window_config)

    def scene_names(self) -> List[str]:
        return [s.name for s in self.scenes]


def load_dataset(kind: str, root, window_config: Optional[WindowConfig] = None
                 ) -> LoadedDataset:
    """Load every scene under ``root`` with kind-specific conventions.

    ``manifest.cfg`` in the root may override ``dt``, ``unit`` and the
    scene file list; without it every ``*.txt`` is taken in name order.
    """
    if kind not in KIND_DEFAULTS:
        raise DatasetError(f"unknown dataset kind '{kind}'")
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root '{root}' is not a directory")
    dt, unit, t_obs, t_pred = KIND_DEFAULTS[kind]

    manifest_path = root / "manifest.cfg"
    scene_files: List[Path]
    if manifest_path.exists():
        manifest = _parse_manifest(manifest_path)
        unknown = set(manifest) - {"dt", "unit", "scenes"}
        if unknown:
            raise ParseError(f"{manifest_path}: unknown keys {sorted(unknown)}")
        if "dt" in manifest:
            dt = float(manifest["dt"])
        if "unit" in manifest:
            unit = manifest["unit"]
            if unit not in UNITS:
                raise DatasetError(f"{manifest_path}: unknown unit '{unit}'")
        if "scenes" in manifest:
            names = [tok for tok in manifest["scenes"].replace(",", " ").split() if tok]
            scene_files = [root / n for n in names]
        else:
            scene_files = sorted(root.glob("*.txt"))
    else:
        scene_files = sorted(root.glob("*.txt"))
    if not scene_files:
        raise DatasetError(f"no scene files under '{root}'")
    missing = [str(p) for p in scene_files if not p.exists()]
    if missing:
        raise DatasetError(f"missing scene files: {missing}")

    wc = window_config if window_config is not None \
        else WindowConfig(t_obs=t_obs, t_pred=t_pred)
    scenes = [parse_trajectory_file(p, unit=unit, dt=dt) for p in scene_files]
    return LoadedDataset(kind=kind, scenes=scenes, window_config=wc, unit=unit)
