"""Loss functions, contrastive pair machinery, masking, augmentation,
learning-rate schedule, and the end-to-end training loop.

Total objective: ``alpha * classification + beta * contrastive +
prediction``. Windows that are unlabeled or whose soft label peaks below
``conf`` drop out of the two intention terms but always keep their
prediction term.
"""

import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, ParamSet, Tape, Tensor, adam_step, backward
from .model import (
    ModelConfig,
    PreparedWindows,
    forward_batch,
    init_params,
    one_hot_rows,
    prepare_windows,
)
from .trajectory import (
    Intention,
    LabelingThresholds,
    N_CLASSES,
    Trajectory,
    TrajectoryWindow,
)


class TrainingError(RuntimeError):
    """Training aborted (empty data or numeric failure in a batch)."""


@dataclass(frozen=True)
class TrainingConfig:
    alpha: float = 1.0            # classification weight
    beta: float = 1.0             # contrastive weight
    temperature: float = 0.1
    conf: float = 0.0             # soft-label confidence lower bound
    learning_rate: float = 1e-3
    decay_rate: float = 0.1       # fraction removed per decay
    epochs_per_decay: int = 20
    epochs: int = 60
    batch_size: int = 64
    n_contrastive: Optional[int] = None   # default: batch_size // 2
    seed: int = 0
    augment: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if not 0.0 <= self.conf <= 1.0:
            raise ValueError("conf must be in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.decay_rate < 1.0:
            raise ValueError("decay_rate must be in [0, 1)")

    @property
    def effective_n_contrastive(self) -> int:
        return self.n_contrastive if self.n_contrastive is not None \
            else max(1, self.batch_size // 2)


def _sorted_pair(a: int, b: int) -> Tuple[int, int]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class PairRelation:
    """Which intention-class pairs count as positive/negative for the
    contrastive term. Same-class pairs are always positive; the two sets
    must be disjoint."""

    positive: frozenset
    negative: frozenset

    def __post_init__(self):
        if self.positive & self.negative:
            raise ValueError("positive and negative pair sets overlap")
        for c in range(N_CLASSES):
            if (c, c) not in self.positive:
                raise ValueError(f"same-class pair ({c},{c}) must be positive")

    @classmethod
    def default(cls) -> "PairRelation":
        s, l, r, st = (int(Intention.STRAIGHT), int(Intention.LEFT),
                       int(Intention.RIGHT), int(Intention.STATIC))
        positive = {(c, c) for c in range(N_CLASSES)}
        positive |= {_sorted_pair(s, l), _sorted_pair(s, r)}
        negative = {_sorted_pair(l, r), _sorted_pair(st, s),
                    _sorted_pair(st, l), _sorted_pair(st, r)}
        return cls(positive=frozenset(positive), negative=frozenset(negative))

    def is_positive(self, a: int, b: int) -> bool:
        return _sorted_pair(a, b) in self.positive

    def is_negative(self, a: int, b: int) -> bool:
        return _sorted_pair(a, b) in self.negative


@dataclass(frozen=True)
class ContrastiveExample:
    """One positive and one negative pair, as indices into the batch the
    example was sampled from."""

    positive: Tuple[int, int]
    negative: Tuple[int, int]


@dataclass(frozen=True)
class LossBreakdown:
    classification: float
    contrastive: float
    prediction: float
    total: float


# ---------------------------------------------------------------------------
# loss terms


def classification_loss(soft_label, true_label):
    """Cross entropy of the soft label against a one-hot target; log input
    clamped at 1e-12. Returns a scalar tensor."""
    truth = np.asarray(true_label.data if isinstance(true_label, Tensor)
                       else true_label, dtype=np.float64)
    if not (np.all((truth == 0.0) | (truth == 1.0)) and np.sum(truth) == 1.0):
        raise ValueError("true_label must be one-hot")
    soft = soft_label if isinstance(soft_label, Tensor) else Tensor(soft_label)
    if soft.shape != truth.shape:
        raise ValueError("label length mismatch")
    return ad.neg(ad.sum_all(ad.mul(Tensor(truth), ad.log(soft, eps=1e-12))))


def _mean_classification_loss(soft_rows: Tensor, label_idx: np.ndarray):
    onehot = one_hot_rows(label_idx, soft_rows.shape[-1])
    total = ad.neg(ad.sum_all(ad.mul(Tensor(onehot), ad.log(soft_rows, eps=1e-12))))
    return ad.mul(total, 1.0 / len(label_idx))


def prediction_loss(predicted, actual):
    """Sum over the horizon of squared Euclidean displacement."""
    pred = predicted if isinstance(predicted, Tensor) else Tensor(predicted)
    act = np.asarray(actual.data if isinstance(actual, Tensor) else actual,
                     dtype=np.float64)
    if pred.shape != act.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {act.shape}")
    d = ad.sub(pred, Tensor(act))
    return ad.sum_all(ad.mul(d, d))


def contrastive_loss(projections, examples: Sequence[ContrastiveExample],
                     temperature: float):
    """Temperature-scaled two-way softmax over pair cosine similarities,
    averaged over examples; differentiable through the projections.

    Per example the loss is ``-log(exp(s_pos/T) / (exp(s_pos/T) +
    exp(s_neg/T)))`` which is computed in the stable form
    ``log(1 + exp((s_neg - s_pos)/T))``.
    """
    if not examples:
        raise ValueError("contrastive_loss needs at least one example")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    proj = projections if isinstance(projections, Tensor) else Tensor(projections)
    p1 = np.array([e.positive[0] for e in examples], dtype=np.int64)
    p2 = np.array([e.positive[1] for e in examples], dtype=np.int64)
    n1 = np.array([e.negative[0] for e in examples], dtype=np.int64)
    n2 = np.array([e.negative[1] for e in examples], dtype=np.int64)
    s_pos = ad.rows_cosine(ad.take_rows(proj, p1), ad.take_rows(proj, p2))
    s_neg = ad.rows_cosine(ad.take_rows(proj, n1), ad.take_rows(proj, n2))
    gap = ad.mul(ad.sub(s_neg, s_pos), 1.0 / temperature)
    return ad.mean_all(ad.log(ad.add(ad.exp(gap), 1.0)))


def total_loss(classification, contrastive, prediction, alpha: float, beta: float):
    """Weighted sum of the three terms; a missing term contributes 0."""
    total = prediction if isinstance(prediction, Tensor) else Tensor(prediction)
    if classification is not None:
        c = classification if isinstance(classification, Tensor) else Tensor(classification)
        total = ad.add(total, ad.mul(c, alpha))
    if contrastive is not None:
        c = contrastive if isinstance(contrastive, Tensor) else Tensor(contrastive)
        total = ad.add(total, ad.mul(c, beta))
    return total


# ---------------------------------------------------------------------------
# batch machinery


def sample_contrastive_examples(labels, relation: PairRelation, n: int,
                                rng: np.random.Generator) -> List[ContrastiveExample]:
    """Draw up to ``n`` examples, each one eligible positive pair plus one
    eligible negative pair, uniformly without replacement (pair members
    are distinct by construction). Returns [] when either side has no
    eligible pair."""
    labels = np.asarray(labels, dtype=np.int64)
    b = labels.shape[0]
    pos_pairs = []
    neg_pairs = []
    for i in range(b):
        for j in range(i + 1, b):
            if relation.is_positive(labels[i], labels[j]):
                pos_pairs.append((i, j))
            elif relation.is_negative(labels[i], labels[j]):
                neg_pairs.append((i, j))
    if not pos_pairs or not neg_pairs:
        return []
    m = min(n, len(pos_pairs), len(neg_pairs))
    pos_sel = rng.choice(len(pos_pairs), size=m, replace=False)
    neg_sel = rng.choice(len(neg_pairs), size=m, replace=False)
    return [ContrastiveExample(positive=pos_pairs[a], negative=neg_pairs[b_])
            for a, b_ in zip(pos_sel, neg_sel)]


def mask_batch(labels: np.ndarray, soft: np.ndarray, conf: float):
    """Index sets (classification, contrastive, prediction).

    Unlabeled windows and windows whose soft label peaks below ``conf``
    leave the two intention sets; every window stays in the prediction
    set."""
    labels = np.asarray(labels, dtype=np.int64)
    peak = np.max(np.asarray(soft), axis=-1)
    keep = (labels >= 0) & (peak >= conf)
    intent_idx = np.nonzero(keep)[0]
    pred_idx = np.arange(labels.shape[0])
    return intent_idx, intent_idx.copy(), pred_idx


def augment_trajectory(traj: Trajectory, rng: np.random.Generator) -> Trajectory:
    """Rigid transform: rotation uniform in [0, 2pi), translation uniform
    in [-10, 10] per axis."""
    theta = rng.uniform(0.0, 2.0 * np.pi)
    shift = rng.uniform(-10.0, 10.0, 2)
    c, s = np.cos(theta), np.sin(theta)
    x, y = traj.points[:, 0], traj.points[:, 1]
    pts = np.stack([c * x - s * y + shift[0], s * x + c * y + shift[1]], axis=1)
    return Trajectory(pts, traj.dt)


def augment_window(window: TrajectoryWindow, rng: np.random.Generator) -> TrajectoryWindow:
    """Apply one rigid transform to the whole window (observation and
    future move together)."""
    full = augment_trajectory(window.complete(), rng)
    t_obs = window.t_obs
    obs = Trajectory(full.points[:t_obs], full.dt)
    fut = None
    if window.future is not None:
        fut = Trajectory(full.points[t_obs:], full.dt)
    return replace(window, observation=obs, future=fut)


def lr_at_epoch(config: TrainingConfig, epoch: int) -> float:
    """Step decay: base rate shrunk by ``decay_rate`` every
    ``epochs_per_decay`` epochs."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    steps = epoch // config.epochs_per_decay
    return config.learning_rate * (1.0 - config.decay_rate) ** steps


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: ParamSet
    history: List[LossBreakdown]
    log_lines: List[str] = field(default_factory=list)
    total_seconds: float = 0.0


def _epoch_log_line(epoch: int, lr: float, bd: LossBreakdown, wall: float) -> str:
    return (f"{epoch}\t{lr:.10g}\t{bd.classification:.10g}\t{bd.contrastive:.10g}"
            f"\t{bd.prediction:.10g}\t{bd.total:.10g}\t{wall:.3f}")


def train(windows: Sequence[TrajectoryWindow], model_config: ModelConfig,
          training_config: TrainingConfig, thresholds: LabelingThresholds,
          relation: Optional[PairRelation] = None, log_path=None,
          threads: Optional[int] = None) -> TrainResult:
    """End-to-end training: seeded shuffling, masked intention losses,
    sampled contrastive examples, Adam with step-decayed learning rate.

    Zero-weight loss terms are skipped entirely, so an ``alpha=beta=0``
    run is bit-identical to pure regression. Any non-finite value aborts
    with the offending epoch/batch index.
    """
    if not windows:
        raise TrainingError("empty dataset")
    if any(w.future is None or w.t_pred != model_config.t_pred for w in windows):
        raise TrainingError(
            f"training windows must carry a future of length {model_config.t_pred}")
    cfg = training_config
    relation = relation if relation is not None else PairRelation.default()
    rng = np.random.default_rng([cfg.seed, 1])
    params = init_params(model_config, cfg.seed)
    n_con = cfg.effective_n_contrastive

    t_start = time.perf_counter()
    base = None
    if not cfg.augment:
        base = prepare_windows(windows, model_config, thresholds, threads=threads)

    history: List[LossBreakdown] = []
    log_lines: List[str] = []
    log_fh = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(cfg.epochs):
            ep_start = time.perf_counter()
            lr = lr_at_epoch(cfg, epoch)
            if cfg.augment:
                aug = [augment_window(w, rng) for w in windows]
                prepared = prepare_windows(aug, model_config, thresholds,
                                           threads=threads)
            else:
                prepared = base
            order = rng.permutation(len(prepared))

            sums = {"r": 0.0, "c": 0.0, "p": 0.0}
            counts = {"r": 0, "c": 0, "p": 0}
            for b_idx, start in enumerate(range(0, len(prepared), cfg.batch_size)):
                batch = prepared.subset(order[start:start + cfg.batch_size])
                try:
                    step_vals = _train_step(batch, params, model_config, cfg,
                                            relation, n_con, rng, lr)
                except NumericError as exc:
                    raise TrainingError(
                        f"numeric failure in epoch {epoch}, batch {b_idx}: {exc}"
                    ) from exc
                for key, (val, cnt) in step_vals.items():
                    sums[key] += val * cnt
                    counts[key] += cnt

            mean_r = sums["r"] / counts["r"] if counts["r"] else 0.0
            mean_c = sums["c"] / counts["c"] if counts["c"] else 0.0
            mean_p = sums["p"] / counts["p"] if counts["p"] else 0.0
            bd = LossBreakdown(
                classification=mean_r, contrastive=mean_c, prediction=mean_p,
                total=cfg.alpha * mean_r + cfg.beta * mean_c + mean_p,
            )
            history.append(bd)
            line = _epoch_log_line(epoch, lr, bd, time.perf_counter() - ep_start)
            log_lines.append(line)
            if log_fh is not None:
                log_fh.write(line + "\n")
                log_fh.flush()
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(params=params, history=history, log_lines=log_lines,
                       total_seconds=time.perf_counter() - t_start)


def _train_step(batch: PreparedWindows, params: ParamSet, model_config: ModelConfig,
                cfg: TrainingConfig, relation: PairRelation, n_con: int,
                rng: np.random.Generator, lr: float):
    """One forward/backward/Adam step; returns per-term (mean, weight)."""
    params.zero_grad()
    b = len(batch)
    with Tape() as tape:
        fwd = forward_batch(batch, params, model_config)

        loss_p = None
        for t, pred_t in enumerate(fwd.preds):
            d = ad.sub(pred_t, Tensor(batch.target[:, t, :]))
            sq = ad.sum_all(ad.mul(d, d))
            loss_p = sq if loss_p is None else ad.add(loss_p, sq)
        loss_p = ad.mul(loss_p, 1.0 / b)

        cls_idx, con_idx, _ = mask_batch(batch.labels, fwd.soft.data, cfg.conf)
        loss_r = None
        if cfg.alpha != 0.0 and cls_idx.size:
            loss_r = _mean_classification_loss(
                ad.take_rows(fwd.soft, cls_idx), batch.labels[cls_idx])
        loss_c = None
        n_examples = 0
        if cfg.beta != 0.0 and con_idx.size >= 2:
            local = sample_contrastive_examples(fwd.hard[con_idx], relation,
                                                n_con, rng)
            if local:
                remap = [ContrastiveExample(
                    positive=(con_idx[e.positive[0]], con_idx[e.positive[1]]),
                    negative=(con_idx[e.negative[0]], con_idx[e.negative[1]]))
                    for e in local]
                loss_c = contrastive_loss(fwd.rz, remap, cfg.temperature)
                n_examples = len(remap)

        total = total_loss(loss_r, loss_c, loss_p, cfg.alpha, cfg.beta)
        backward(tape, total)
    adam_step(params, lr)
    return {
        "r": (loss_r.item() if loss_r is not None else 0.0, int(cls_idx.size)),
        "c": (loss_c.item() if loss_c is not None else 0.0, n_examples),
        "p": (loss_p.item(), b),
    }
