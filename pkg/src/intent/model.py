"""The prediction network: feature encoders, representation/projection
encoders with soft intention output, and per-timestep location predictors.

Three forward paths share one parameter set:

* single-window ops (`model_forward`) — the reference path,
* batched tape ops (`forward_batch`) — the training path,
* a fused kernel (`FrozenModel`) — the low-latency inference path.

Equivalence of the three is pinned by tests.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import ParamSet, Tensor
from .backend import worker_count
from .trajectory import (
    LabelingThresholds,
    ObservationFeatures,
    TrajectoryWindow,
    TransformParams,
    extract_observation_features,
    inverse_transform_points,
    transform_points,
)


@dataclass(frozen=True)
class ModelConfig:
    t_obs: int = 8
    t_pred: int = 12
    n_classes: int = 4
    embed_dim: int = 32
    hidden_dim: int = 64
    hard_mixture: bool = False          # decode with the argmax head only
    use_raw_coordinates: bool = False   # skip feature extraction, feed raw coords
    operate_in_transformed_frame: bool = False

    def __post_init__(self):
        if self.t_obs < 2 or self.t_pred < 1:
            raise ValueError("need t_obs >= 2 and t_pred >= 1")
        if self.hidden_dim % 4 != 0:
            raise ValueError("hidden_dim must be divisible by 4 (gate split)")
        if self.n_classes < 2:
            raise ValueError("need at least 2 intention classes")

    def to_lines(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            out.append(f"{f.name}={v}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_lines(cls, text: str) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for ln in text.splitlines():
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            if "=" not in ln:
                raise ValueError(f"bad config line: {ln!r}")
            key, _, val = ln.partition("=")
            key, val = key.strip(), val.strip()
            if key not in known:
                raise ValueError(f"unknown model config key '{key}'")
            if known[key] in (bool, "bool"):
                kwargs[key] = val.lower() in ("true", "1", "yes", "y")
            else:
                kwargs[key] = int(val)
        return cls(**kwargs)


@dataclass
class ModelOutput:
    representation: np.ndarray      # (hidden_dim,)
    projection: np.ndarray          # (n_classes,)
    soft_label: np.ndarray          # (n_classes,) probabilities
    hard_label: int
    predicted_trajectory: np.ndarray  # (t_pred, 2), world frame


# ---------------------------------------------------------------------------
# parameters


def _uniform(rng, fan_in: int, *shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def init_params(config: ModelConfig, seed: int) -> ParamSet:
    """Fan-in uniform initialization; creation order is fixed so a given
    seed always produces identical parameters."""
    rng = np.random.default_rng([seed, 0])
    ps = ParamSet()
    e, h, n, to, tp = (config.embed_dim, config.hidden_dim, config.n_classes,
                       config.t_obs, config.t_pred)

    if config.use_raw_coordinates:
        ps.add("enc.raw.w", _uniform(rng, 2 * to, 3 * e, 2 * to))
        ps.add("enc.raw.b", _uniform(rng, 2 * to, 3 * e))
    else:
        for part in ("vel", "rad", "ty"):
            ps.add(f"enc.{part}.w", _uniform(rng, to, e, to))
            ps.add(f"enc.{part}.b", _uniform(rng, to, e))
    ps.add("rep.w", _uniform(rng, 3 * e, h, 3 * e))
    ps.add("rep.b", _uniform(rng, 3 * e, h))
    ps.add("proj.w", _uniform(rng, h, n, h))
    ps.add("proj.b", _uniform(rng, h, n))

    for t in range(tp):
        p = f"pred{t:02d}"
        ps.add(f"{p}.loc.w", _uniform(rng, 2, e, 2))
        ps.add(f"{p}.loc.b", _uniform(rng, 2, e))
        ps.add(f"{p}.comb.w", _uniform(rng, h + e, h, h + e))
        ps.add(f"{p}.comb.b", _uniform(rng, h + e, h))
        ps.add(f"{p}.gin.w", _uniform(rng, h, 4 * h, h))
        ps.add(f"{p}.gin.b", _uniform(rng, h, 4 * h))
        ps.add(f"{p}.ghid.w", _uniform(rng, h, 4 * h, h))
        ps.add(f"{p}.ghid.b", _uniform(rng, h, 4 * h))
        for k in range(n):
            ps.add(f"{p}.head{k}.w", _uniform(rng, h, 2, h))
            ps.add(f"{p}.head{k}.b", _uniform(rng, h, 2))
    return ps


# ---------------------------------------------------------------------------
# single-window reference path


def encode_features(features: ObservationFeatures, params: ParamSet,
                    config: ModelConfig) -> Tensor:
    """Unified feature vector: per-feature encoders concatenated in
    (velocity, radian, transformed-y) order."""
    if features.velocities.shape[0] != config.t_obs:
        raise ValueError(
            f"features have length {features.velocities.shape[0]}, "
            f"model expects t_obs={config.t_obs}")
    parts = []
    for part, seq in (("vel", features.velocities), ("rad", features.radians),
                      ("ty", features.transformed_y)):
        parts.append(ad.tanh(ad.affine(Tensor(seq), params[f"enc.{part}.w"],
                                       params[f"enc.{part}.b"])))
    return ad.concat(parts)


def encode_raw_coordinates(obs_points: np.ndarray, params: ParamSet,
                           config: ModelConfig) -> Tensor:
    """Ablation input path: flattened observation coordinates through a
    single affine+tanh, replacing the feature encoders."""
    flat = np.asarray(obs_points, dtype=np.float64).reshape(-1)
    if flat.shape[0] != 2 * config.t_obs:
        raise ValueError("raw-coordinate input length mismatch")
    return ad.tanh(ad.affine(Tensor(flat), params["enc.raw.w"], params["enc.raw.b"]))


def representation_forward(feat: Tensor, params: ParamSet):
    """Base encoder and projection: returns (R_h, R_z, soft, hard)."""
    rh = ad.tanh(ad.affine(feat, params["rep.w"], params["rep.b"]))
    rz = ad.affine(rh, params["proj.w"], params["proj.b"])
    soft = ad.softmax(rz)
    hard = int(np.argmax(soft.data, axis=-1))
    return rh, rz, soft, hard


def location_predictor_forward(t: int, last_location, rh: Tensor, soft_label: Tensor,
                               params: ParamSet, config: ModelConfig) -> Tensor:
    """Predict the location for future step ``t`` (0-based within the
    horizon) from the last observed location, the representation, and the
    soft intention label.

    The gate block runs with zero hidden/cell carries, so the hidden
    weights contribute only their bias; the output is the intention-
    probability-weighted mixture of the class heads (or the argmax head
    alone under ``hard_mixture``).
    """
    if not 0 <= t < config.t_pred:
        raise ValueError(f"timestep {t} outside prediction horizon")
    p = f"pred{t:02d}"
    h = config.hidden_dim

    loc = Tensor(np.asarray(last_location, dtype=np.float64))
    le = ad.tanh(ad.affine(loc, params[f"{p}.loc.w"], params[f"{p}.loc.b"]))
    rc_in = ad.concat([rh, le])
    rc = ad.tanh(ad.affine(rc_in, params[f"{p}.comb.w"], params[f"{p}.comb.b"]))

    shape = rc.data.shape[:-1] + (h,)
    hidden0 = Tensor(np.zeros(shape))
    cell0 = Tensor(np.zeros(shape))
    gates = ad.add(
        ad.affine(rc, params[f"{p}.gin.w"], params[f"{p}.gin.b"]),
        ad.affine(hidden0, params[f"{p}.ghid.w"], params[f"{p}.ghid.b"]),
    )
    gate_i, gate_f, gate_c, _gate_o = ad.split4(gates)
    inner = ad.add(ad.mul(ad.sigmoid(gate_f), cell0),
                   ad.mul(ad.sigmoid(gate_i), ad.tanh(gate_c)))
    hvec = ad.mul(ad.sigmoid(gate_c), ad.tanh(inner))

    if config.hard_mixture:
        weights = Tensor(one_hot_rows(np.argmax(soft_label.data, axis=-1),
                                       config.n_classes))
    else:
        weights = soft_label
    out = None
    for k in range(config.n_classes):
        head = ad.affine(hvec, params[f"{p}.head{k}.w"], params[f"{p}.head{k}.b"])
        term = ad.mul(ad.slice_last(weights, k, k + 1), head)
        out = term if out is None else ad.add(out, term)
    return out


def one_hot_rows(idx, n: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    eye = np.eye(n)
    return eye[idx]


def model_forward(window: TrajectoryWindow, params: ParamSet,
                  config: ModelConfig) -> ModelOutput:
    """Full forward pass for one window; predictions come back in world
    coordinates regardless of the operating frame."""
    if window.t_obs != config.t_obs:
        raise ValueError(f"window has t_obs={window.t_obs}, model expects {config.t_obs}")
    features, tparams, _ = extract_observation_features(window, labeling=None)

    obs_pts = window.observation.points
    if config.operate_in_transformed_frame:
        frame_pts = transform_points(obs_pts, tparams)
    else:
        frame_pts = obs_pts
    last_loc = frame_pts[-1]

    if config.use_raw_coordinates:
        feat = encode_raw_coordinates(frame_pts, params, config)
    else:
        feat = encode_features(features, params, config)
    rh, rz, soft, hard = representation_forward(feat, params)

    pred = np.empty((config.t_pred, 2))
    for t in range(config.t_pred):
        loc = location_predictor_forward(t, last_loc, rh, soft, params, config)
        pred[t] = loc.data
    if config.operate_in_transformed_frame:
        pred = inverse_transform_points(pred, tparams)
    return ModelOutput(
        representation=rh.data.copy(),
        projection=rz.data.copy(),
        soft_label=soft.data.copy(),
        hard_label=hard,
        predicted_trajectory=pred,
    )


# ---------------------------------------------------------------------------
# batched training path


@dataclass
class PreparedWindows:
    """Stacked per-window model inputs (operating-frame where relevant)."""

    vel: np.ndarray                 # (B, t_obs)
    rad: np.ndarray                 # (B, t_obs)
    ty: np.ndarray                  # (B, t_obs)
    raw: Optional[np.ndarray]       # (B, 2*t_obs) when use_raw_coordinates
    last: np.ndarray                # (B, 2)
    target: Optional[np.ndarray]    # (B, t_pred, 2) when futures exist
    labels: Optional[np.ndarray]    # (B,) int64, -1 for unlabeled
    transforms: List[TransformParams]
    windows: List[TrajectoryWindow]

    def __len__(self):
        return self.last.shape[0]

    def subset(self, idx) -> "PreparedWindows":
        idx = np.asarray(idx, dtype=np.int64)
        return PreparedWindows(
            vel=self.vel[idx], rad=self.rad[idx], ty=self.ty[idx],
            raw=None if self.raw is None else self.raw[idx],
            last=self.last[idx],
            target=None if self.target is None else self.target[idx],
            labels=None if self.labels is None else self.labels[idx],
            transforms=[self.transforms[i] for i in idx],
            windows=[self.windows[i] for i in idx],
        )


def _prepare_one(window: TrajectoryWindow, config: ModelConfig,
                 thresholds: Optional[LabelingThresholds]):
    features, tparams, label = extract_observation_features(window, thresholds)
    obs_pts = window.observation.points
    if config.operate_in_transformed_frame:
        frame_obs = transform_points(obs_pts, tparams)
    else:
        frame_obs = obs_pts
    target = None
    if window.future is not None:
        fut = window.future.points
        target = transform_points(fut, tparams) \
            if config.operate_in_transformed_frame else fut
    raw = frame_obs.reshape(-1) if config.use_raw_coordinates else None
    return features, tparams, label, frame_obs[-1], target, raw


def prepare_windows(windows: Sequence[TrajectoryWindow], config: ModelConfig,
                    thresholds: Optional[LabelingThresholds] = None,
                    threads: Optional[int] = None) -> PreparedWindows:
    """Feature-extract a window list into stacked arrays.

    Passing ``thresholds`` switches on intention labeling (training mode;
    every window must then carry a future segment). Extraction is pure per
    window, so it fans out over a thread pool and is merged in input order.
    """
    if not windows:
        raise ValueError("no windows to prepare")
    for w in windows:
        if w.t_obs != config.t_obs:
            raise ValueError(f"window {w.window_id} has t_obs={w.t_obs}, "
                             f"expected {config.t_obs}")

    n_threads = threads if threads is not None else worker_count()
    n_threads = max(1, min(n_threads, len(windows)))
    work = lambda w: _prepare_one(w, config, thresholds)  # noqa: E731
    if n_threads > 1 and len(windows) > 64:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(work, windows))
    else:
        results = [work(w) for w in windows]

    b = len(windows)
    vel = np.stack([r[0].velocities for r in results])
    rad = np.stack([r[0].radians for r in results])
    ty = np.stack([r[0].transformed_y for r in results])
    last = np.stack([r[3] for r in results])
    transforms = [r[1] for r in results]
    labels = None
    if thresholds is not None:
        labels = np.array([int(r[2]) for r in results], dtype=np.int64)
    target = None
    if all(r[4] is not None for r in results):
        target = np.stack([r[4] for r in results])
    raw = np.stack([r[5] for r in results]) if config.use_raw_coordinates else None
    assert vel.shape == (b, config.t_obs)
    return PreparedWindows(vel=vel, rad=rad, ty=ty, raw=raw, last=last,
                           target=target, labels=labels,
                           transforms=transforms, windows=list(windows))


@dataclass
class BatchForward:
    rh: Tensor          # (B, hidden)
    rz: Tensor          # (B, n_classes)
    soft: Tensor        # (B, n_classes)
    hard: np.ndarray    # (B,) int64 predicted classes
    preds: List[Tensor]  # t_pred tensors of (B, 2), operating frame


def forward_batch(batch: PreparedWindows, params: ParamSet,
                  config: ModelConfig) -> BatchForward:
    """Batched forward over prepared windows (rows = windows)."""
    if config.use_raw_coordinates:
        feat = ad.tanh(ad.affine(Tensor(batch.raw), params["enc.raw.w"],
                                 params["enc.raw.b"]))
    else:
        parts = []
        for part, arr in (("vel", batch.vel), ("rad", batch.rad), ("ty", batch.ty)):
            parts.append(ad.tanh(ad.affine(Tensor(arr), params[f"enc.{part}.w"],
                                           params[f"enc.{part}.b"])))
        feat = ad.concat(parts)
    rh = ad.tanh(ad.affine(feat, params["rep.w"], params["rep.b"]))
    rz = ad.affine(rh, params["proj.w"], params["proj.b"])
    soft = ad.softmax(rz)
    hard = np.argmax(soft.data, axis=-1)

    b = len(batch)
    h = config.hidden_dim
    loc = Tensor(batch.last)
    hidden0 = Tensor(np.zeros((b, h)))
    cell0 = Tensor(np.zeros((b, h)))
    if config.hard_mixture:
        weights = Tensor(one_hot_rows(hard, config.n_classes))
    else:
        weights = soft

    preds: List[Tensor] = []
    for t in range(config.t_pred):
        p = f"pred{t:02d}"
        le = ad.tanh(ad.affine(loc, params[f"{p}.loc.w"], params[f"{p}.loc.b"]))
        rc = ad.tanh(ad.affine(ad.concat([rh, le]),
                               params[f"{p}.comb.w"], params[f"{p}.comb.b"]))
        gates = ad.add(
            ad.affine(rc, params[f"{p}.gin.w"], params[f"{p}.gin.b"]),
            ad.affine(hidden0, params[f"{p}.ghid.w"], params[f"{p}.ghid.b"]),
        )
        gate_i, gate_f, gate_c, _gate_o = ad.split4(gates)
        inner = ad.add(ad.mul(ad.sigmoid(gate_f), cell0),
                       ad.mul(ad.sigmoid(gate_i), ad.tanh(gate_c)))
        hvec = ad.mul(ad.sigmoid(gate_c), ad.tanh(inner))
        out = None
        for k in range(config.n_classes):
            head = ad.affine(hvec, params[f"{p}.head{k}.w"], params[f"{p}.head{k}.b"])
            term = ad.mul(ad.slice_last(weights, k, k + 1), head)
            out = term if out is None else ad.add(out, term)
        preds.append(out)
    return BatchForward(rh=rh, rz=rz, soft=soft, hard=hard, preds=preds)


# ---------------------------------------------------------------------------
# frozen fast-inference model


_DUMMY_MAT = np.zeros((1, 1))
_DUMMY_VEC = np.zeros(1)


class FrozenModel:
    """Read-only parameter pack driving the fused inference kernel.

    Per-timestep parameters are stacked contiguously along a leading t
    axis once, so each prediction is a single kernel call. Safe to share
    across threads.
    """

    def __init__(self, params: ParamSet, config: ModelConfig):
        self.config = config
        c = np.ascontiguousarray
        if config.use_raw_coordinates:
            self.w_raw = c(params["enc.raw.w"].data)
            self.b_raw = c(params["enc.raw.b"].data)
            self.w_vel = self.w_rad = self.w_ty = _DUMMY_MAT
            self.b_vel = self.b_rad = self.b_ty = _DUMMY_VEC
        else:
            self.w_vel = c(params["enc.vel.w"].data)
            self.b_vel = c(params["enc.vel.b"].data)
            self.w_rad = c(params["enc.rad.w"].data)
            self.b_rad = c(params["enc.rad.b"].data)
            self.w_ty = c(params["enc.ty.w"].data)
            self.b_ty = c(params["enc.ty.b"].data)
            self.w_raw, self.b_raw = _DUMMY_MAT, _DUMMY_VEC
        self.w_rep = c(params["rep.w"].data)
        self.b_rep = c(params["rep.b"].data)
        self.w_proj = c(params["proj.w"].data)
        self.b_proj = c(params["proj.b"].data)

        def stack(part):
            return c(np.stack([params[f"pred{t:02d}.{part}"].data
                               for t in range(config.t_pred)]))

        self.w_loc, self.b_loc = stack("loc.w"), stack("loc.b")
        self.w_comb, self.b_comb = stack("comb.w"), stack("comb.b")
        self.w_gin, self.b_gin = stack("gin.w"), stack("gin.b")
        self.b_ghid = stack("ghid.b")
        self.w_head = c(np.stack([
            np.stack([params[f"pred{t:02d}.head{k}.w"].data
                      for k in range(config.n_classes)])
            for t in range(config.t_pred)]))
        self.b_head = c(np.stack([
            np.stack([params[f"pred{t:02d}.head{k}.b"].data
                      for k in range(config.n_classes)])
            for t in range(config.t_pred)]))

    def forward_arrays(self, vel, rad, ty, raw, last):
        """Kernel call on operating-frame inputs; returns
        (pred (t_pred,2), soft, rh, rz)."""
        return kernels.fused_forward(
            vel, rad, ty,
            raw if raw is not None else _DUMMY_VEC,
            last,
            self.w_vel, self.b_vel, self.w_rad, self.b_rad,
            self.w_ty, self.b_ty, self.w_raw, self.b_raw,
            self.w_rep, self.b_rep, self.w_proj, self.b_proj,
            self.w_loc, self.b_loc, self.w_comb, self.b_comb,
            self.w_gin, self.b_gin, self.b_ghid,
            self.w_head, self.b_head,
            self.config.use_raw_coordinates, self.config.hard_mixture,
        )

    def run(self, window: TrajectoryWindow) -> ModelOutput:
        """Feature extraction plus fused forward; world-frame prediction."""
        cfg = self.config
        if window.t_obs != cfg.t_obs:
            raise ValueError(f"window has t_obs={window.t_obs}, model expects {cfg.t_obs}")
        obs = window.observation
        velocities = kernels.velocity_sequence(obs.points, obs.dt)
        radians = kernels.radian_sequence(obs.points)
        from .trajectory import compute_rotation_radian

        tparams = compute_rotation_radian(obs, len(obs))
        canon = kernels.transform_points(
            obs.points, tparams.phi, tparams.origin[0], tparams.origin[1],
            tparams.flip_branch)
        frame_obs = canon if cfg.operate_in_transformed_frame else obs.points
        raw = frame_obs.reshape(-1).copy() if cfg.use_raw_coordinates else None
        pred, soft, rh, rz = self.forward_arrays(
            velocities, radians, canon[:, 1].copy(),
            raw, frame_obs[-1].copy())
        if cfg.operate_in_transformed_frame:
            pred = kernels.inverse_points(
                pred, tparams.phi, tparams.origin[0], tparams.origin[1],
                tparams.flip_branch)
        return ModelOutput(
            representation=rh, projection=rz, soft_label=soft,
            hard_label=int(np.argmax(soft)), predicted_trajectory=pred,
        )

    def predict(self, window: TrajectoryWindow) -> np.ndarray:
        """World-frame predicted trajectory (t_pred, 2)."""
        return self.run(window).predicted_trajectory


# ---------------------------------------------------------------------------
# checkpoints: plain-text model-config header, blank line, parameter binary


def save_checkpoint(path, params: ParamSet, config: ModelConfig):
    with open(path, "wb") as fh:
        fh.write(config.to_lines().encode("utf-8"))
        fh.write(b"\n")
        fh.write(params.to_bytes())


def load_checkpoint(path):
    """Returns (params, config); rejects malformed or version-mismatched
    files."""
    from .autodiff import CheckpointError

    with open(path, "rb") as fh:
        buf = fh.read()
    sep = buf.find(b"\n\n")
    if sep < 0:
        raise CheckpointError("no header section in checkpoint")
    try:
        header = buf[:sep].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError("undecodable checkpoint header") from exc
    config = ModelConfig.from_lines(header)
    params, used = ParamSet.from_bytes(buf, offset=sep + 2)
    if sep + 2 + used != len(buf):
        raise CheckpointError("trailing bytes after parameter data")
    return params, config
