"""Training loop, best-of-N selection and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import dsp
from ..dataset import MOVE, SampleSet
from ..errors import DataError, DivergenceError
from ..nn import OptimizerState, bce_loss, sgd_step
from ..seeds import derive_seed
from ..video import center_crop, random_crop
from .config import TrainConfig
from .zoo import Model, NaiveAverage, build_model

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_acc: float
    lr: float


@dataclass
class RunResult:
    run_index: int
    seed: int
    history: list[EpochRecord]
    best_valid_acc: float
    best_epoch: int
    diverged: bool
    weights: dict[str, np.ndarray] | None = None


@dataclass
class TrainResult:
    model: Model
    runs: list[RunResult]
    selected: int
    train_acc: float
    valid_acc: float

    @property
    def history(self) -> list[EpochRecord]:
        return self.runs[self.selected].history

    @property
    def epochs_ran(self) -> int:
        return len(self.history)


@dataclass
class Evaluation:
    accuracy: float
    probabilities: np.ndarray
    predictions: np.ndarray
    labels: np.ndarray = field(repr=False)


# -- batching ------------------------------------------------------------------

def eval_frames(model, frames: np.ndarray) -> np.ndarray:
    crop = model.config.crop_size
    return center_crop(frames, crop) if crop else frames


def make_batch(samples: SampleSet, idx: np.ndarray, cfg: TrainConfig | None,
               rng: np.random.Generator | None, crop: int | None = None):
    """Float64 ``(ecog, frames, labels)`` for the given rows.

    With ``cfg`` and ``rng`` the ECoG windows go through online augmentation
    and frames are randomly cropped; otherwise centred windows and crops.
    """
    if cfg is None or rng is None:
        ecog = samples.chunks(idx)
        frames = samples.frames[idx].astype(np.float64)
        if crop:
            frames = center_crop(frames, crop)
    else:
        ecog = np.stack([
            dsp.augment(samples.ecog[i], samples.margin, rng, cfg.augment_probability,
                        cfg.noise_sd, cfg.max_shift_ms, samples.fs, samples.window_len)
            for i in idx
        ]).astype(np.float64)
        frames = samples.frames[idx].astype(np.float64)
        if crop:
            frames = np.stack([random_crop(f, crop, rng) for f in frames])
    return ecog, frames, samples.labels[idx].astype(np.float64)


def predict_proba(model, samples: SampleSet, batch_size: int = 64) -> np.ndarray:
    crop = model.config.crop_size
    out = []
    for i in range(0, len(samples), batch_size):
        idx = np.arange(i, min(i + batch_size, len(samples)))
        ecog, frames, _ = make_batch(samples, idx, None, None, crop)
        out.append(model.predict_proba(ecog, frames, batch_size))
    return np.concatenate(out) if out else np.zeros(0)


def classify(p: np.ndarray) -> np.ndarray:
    """Probability to label; exactly 0.5 counts as rest."""
    return (np.asarray(p) > 0.5).astype(np.int8)


def evaluate(model, test_set: SampleSet) -> Evaluation:
    if len(test_set) == 0:
        raise DataError("cannot evaluate on an empty set")
    p = predict_proba(model, test_set)
    pred = classify(p)
    labels = test_set.labels.astype(np.int8)
    return Evaluation(float(np.mean(pred == labels)), p, pred, labels)


# -- training ------------------------------------------------------------------

def _run(config, train_set: SampleSet, valid_set: SampleSet, cfg: TrainConfig,
         run_index: int, seed: int) -> tuple[Model, RunResult]:
    model = build_model(config.model_copy(update={"seed": derive_seed(seed, "init")}))
    rng = np.random.default_rng(derive_seed(seed, "train"))
    state = OptimizerState(cfg.lr, cfg.momentum, cfg.decay)
    params = model.parameters()
    crop = config.crop_size
    history: list[EpochRecord] = []
    best_acc, best_epoch, best_weights, stale = -1.0, -1, model.snapshot(), 0
    n = len(train_set)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            ecog, frames, y = make_batch(train_set, idx, cfg, rng, crop)
            model.zero_grad()
            loss = bce_loss(model.forward(ecog, frames, train=True, rng=rng), y)
            if not np.isfinite(loss.item()):
                raise DivergenceError(f"loss became {loss.item()} in epoch {epoch}")
            loss.backward()
            sgd_step(params, None, state)
            losses.append(loss.item() * idx.size)
        if not all(np.all(np.isfinite(p.data)) for p in params.values()):
            raise DivergenceError(f"weights became non-finite in epoch {epoch}")
        acc = evaluate(model, valid_set).accuracy
        history.append(EpochRecord(epoch, float(np.sum(losses) / n), acc, state.learning_rate()))
        log.debug("run %d epoch %d loss %.4f valid %.4f", run_index, epoch, history[-1].train_loss, acc)
        if acc > best_acc:
            best_acc, best_epoch, best_weights, stale = acc, epoch, model.snapshot(), 0
            if cfg.stop_at_perfect and acc >= 1.0:
                break
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.restore(best_weights)
    return model, RunResult(run_index, seed, history, best_acc, best_epoch, False, best_weights)


def train(model, train_set: SampleSet, valid_set: SampleSet, cfg: TrainConfig) -> TrainResult:
    """Train ``cfg.runs`` fresh copies of ``model``'s architecture; keep the best on validation.

    Each run reinitialises weights from a seed derived from ``cfg.seed`` and
    the run index. A run whose loss or weights go non-finite is abandoned and
    scored 0. Ties in validation accuracy keep the earliest run.
    """
    if len(train_set) == 0 or len(valid_set) == 0:
        raise DataError("training and validation sets must be nonempty")
    if isinstance(model, NaiveAverage):
        return _train_naive(model, train_set, valid_set, cfg)
    config = model.config
    runs: list[RunResult] = []
    best_model, best = None, -1
    for r in range(cfg.runs):
        seed = derive_seed(cfg.seed, "run", r)
        try:
            m, res = _run(config, train_set, valid_set, cfg, r, seed)
        except DivergenceError as exc:
            log.warning("run %d diverged: %s", r, exc)
            runs.append(RunResult(r, seed, [], 0.0, -1, True))
            continue
        runs.append(res)
        if best < 0 or res.best_valid_acc > runs[best].best_valid_acc:
            best_model, best = m, r
    if best_model is None:
        raise DivergenceError(f"all {cfg.runs} runs diverged")
    return TrainResult(best_model, runs, best, evaluate(best_model, train_set).accuracy,
                       runs[best].best_valid_acc)


def _train_naive(model: NaiveAverage, train_set, valid_set, cfg: TrainConfig) -> TrainResult:
    parts = {}
    runs = []
    for key, part in model.parts.items():
        res = train(part, train_set, valid_set, cfg.model_copy(update={"seed": derive_seed(cfg.seed, key)}))
        parts[key] = res.model
        runs.extend(res.runs)
    combined = NaiveAverage(model.config, parts["ecog"], parts["video"])
    ev_valid = evaluate(combined, valid_set)
    ev_train = evaluate(combined, train_set)
    return TrainResult(combined, runs, 0, ev_train.accuracy, ev_valid.accuracy)


def accuracy(p, labels) -> float:
    return float(np.mean(classify(p) == (np.asarray(labels) == MOVE)))
