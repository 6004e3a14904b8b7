"""Displacement metrics, the constant-velocity baseline, timing, and
representation export.

ADE is the mean per-step Euclidean distance between predicted and actual
futures; FDE is the distance at the final step only. Both are computed in
dataset-native units on world-frame trajectories.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .backend import worker_count
from .model import FrozenModel
from .trajectory import Intention, TrajectoryWindow


def _distances(predicted, actual) -> np.ndarray:
    p = np.asarray(predicted, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape or p.ndim != 2 or p.shape[0] < 1:
        raise ValueError(f"trajectory shape mismatch: {p.shape} vs {a.shape}")
    d = p - a
    return np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])


def ade(predicted, actual) -> float:
    """Average displacement error: mean Euclidean distance per step."""
    return float(np.mean(_distances(predicted, actual)))


def fde(predicted, actual) -> float:
    """Final displacement error: Euclidean distance at the last step."""
    return float(_distances(predicted, actual)[-1])


def constant_velocity_predict(window: TrajectoryWindow,
                              t_pred: Optional[int] = None) -> np.ndarray:
    """Extrapolate the last observed displacement for ``t_pred`` steps."""
    steps = t_pred if t_pred is not None else window.t_pred
    if steps < 1:
        raise ValueError("t_pred must be >= 1 (window has no future)")
    obs = window.observation.points
    vel = obs[-1] - obs[-2]
    return obs[-1] + np.outer(np.arange(1, steps + 1, dtype=np.float64), vel)


@dataclass
class MetricsReport:
    window_ids: List[str]
    ade_values: np.ndarray
    fde_values: np.ndarray
    unit: str

    @property
    def count(self) -> int:
        return self.ade_values.shape[0]

    @property
    def ade_mean(self) -> float:
        return float(np.mean(self.ade_values))

    @property
    def fde_mean(self) -> float:
        return float(np.mean(self.fde_values))

    def summary_lines(self) -> str:
        return (f"ade_mean={self.ade_mean:.6f}\n"
                f"fde_mean={self.fde_mean:.6f}\n"
                f"n_windows={self.count}\n"
                f"unit={self.unit}\n")

    def to_tsv(self) -> str:
        rows = ["window_id\tade\tfde"]
        for wid, a, f in zip(self.window_ids, self.ade_values, self.fde_values):
            rows.append(f"{wid}\t{a:.9g}\t{f:.9g}")
        return "\n".join(rows) + "\n"


@dataclass
class TimingReport:
    training_seconds: float
    inference_ms_per_window: float
    window_count: int

    def __post_init__(self):
        if self.inference_ms_per_window < 0 or self.window_count < 0:
            raise ValueError("timing must be nonnegative")

    def summary_lines(self) -> str:
        return (f"training_seconds={self.training_seconds:.3f}\n"
                f"inference_ms_per_window={self.inference_ms_per_window:.3f}\n"
                f"n_windows={self.window_count}\n")


Predictor = Union[FrozenModel, Callable[[TrajectoryWindow], np.ndarray]]


def _as_predict_fn(predictor: Predictor):
    if isinstance(predictor, FrozenModel):
        return predictor.predict
    return predictor


def evaluate_model(predictor: Predictor, windows: Sequence[TrajectoryWindow],
                   unit: str = "meters", threads: Optional[int] = None
                   ) -> MetricsReport:
    """Per-window ADE/FDE in world coordinates.

    ``predictor`` maps a window to a (t_pred, 2) prediction; windows fan
    out over a thread pool (the parameters are frozen) and the reduction
    keeps input order, so reports are bit-reproducible.
    """
    if not windows:
        raise ValueError("no windows to evaluate")
    for w in windows:
        if w.future is None:
            raise ValueError(f"window {w.window_id} has no ground-truth future")
    fn = _as_predict_fn(predictor)
    n_threads = threads if threads is not None else worker_count()
    n_threads = max(1, min(n_threads, len(windows)))
    if n_threads > 1 and len(windows) > 64:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            preds = list(pool.map(fn, windows))
    else:
        preds = [fn(w) for w in windows]
    ade_vals = np.array([ade(p, w.future.points) for p, w in zip(preds, windows)])
    fde_vals = np.array([fde(p, w.future.points) for p, w in zip(preds, windows)])
    return MetricsReport(
        window_ids=[w.window_id for w in windows],
        ade_values=ade_vals, fde_values=fde_vals, unit=unit,
    )


def benchmark_timing(model: Predictor, windows: Sequence[TrajectoryWindow],
                     repetitions: int, training_seconds: float = float("nan")
                     ) -> TimingReport:
    """Mean per-window inference time over ``repetitions`` passes after one
    untimed warm-up pass (which also absorbs JIT compilation)."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if not windows:
        raise ValueError("no windows to time")
    fn = _as_predict_fn(model)
    for w in windows:
        fn(w)
    t0 = time.perf_counter()
    for _ in range(repetitions):
        for w in windows:
            fn(w)
    elapsed = time.perf_counter() - t0
    per_window_ms = elapsed / (repetitions * len(windows)) * 1000.0
    return TimingReport(training_seconds=training_seconds,
                        inference_ms_per_window=per_window_ms,
                        window_count=len(windows))


def export_representations(model: FrozenModel, windows: Sequence[TrajectoryWindow],
                           out_path):
    """Tab-separated export for external embedding/projection tooling:
    window id, predicted hard label, soft-label probabilities, then the
    representation vector."""
    with open(out_path, "w", encoding="utf-8") as fh:
        for w in windows:
            out = model.run(w)
            cols = [w.window_id, Intention(out.hard_label).label_name]
            cols.extend(f"{v:.9g}" for v in out.soft_label)
            cols.extend(f"{v:.9g}" for v in out.representation)
            fh.write("\t".join(cols) + "\n")
