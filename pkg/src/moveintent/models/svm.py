"""Linear SVM on band-power features.

Training minimises ``lam * |w|^2 + mean(max(0, 1 - y (w.x + b)))`` by
full-batch subgradient descent from ``w = 0, b = 0`` with step
``eta0 / sqrt(t + 1)``, returning the iterate with the lowest objective.
Nothing is random, so a given input always yields the same model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .. import dsp
from ..dataset import MOVE, SampleSet
from ..errors import DataError, ShapeError

LAMBDA_GRID = tuple(10.0 ** k for k in range(-4, 2))


class SvmConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lam: float = Field(1e-2, ge=0)
    iterations: int = Field(1000, ge=1)
    eta0: float = Field(1.0, gt=0)
    log_power: bool = True
    bands: tuple[tuple[float, float], ...] = dsp.DEFAULT_BANDS


@dataclass
class SvmModel:
    w: np.ndarray
    b: float
    mean: np.ndarray
    scale: np.ndarray
    lam: float
    log_power: bool = True
    bands: tuple = dsp.DEFAULT_BANDS
    objective: float = float("nan")

    variant = "svm_spectral"

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.w.size:
            raise ShapeError(f"expected {self.w.size} features, got {features.shape[1]}")
        return ((features - self.mean) / self.scale) @ self.w + self.b

    def to_dict(self) -> dict:
        return {"variant": self.variant, "lam": self.lam, "b": self.b, "w": self.w.tolist(),
                "mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "log_power": self.log_power, "bands": [list(b) for b in self.bands],
                "objective": self.objective}

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        return cls(np.array(d["w"]), float(d["b"]), np.array(d["mean"]), np.array(d["scale"]),
                   float(d["lam"]), bool(d["log_power"]), tuple(tuple(b) for b in d["bands"]),
                   float(d["objective"]))

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path) -> "SvmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def spectral_features(samples: SampleSet, bands=dsp.DEFAULT_BANDS, log_power: bool = True) -> np.ndarray:
    """``N x (bands * channels)`` band powers of each centred 1-s window."""
    w0, n = samples.margin, samples.window_len
    out = np.empty((len(samples), len(bands) * samples.n_channels))
    for i in range(len(samples)):
        win = samples.ecog[i, :, w0:w0 + n]
        out[i] = dsp.stft_band_power(win, samples.fs, bands).vector
    return np.log10(out + 1e-12) if log_power else out


def _signed(labels) -> np.ndarray:
    labels = np.asarray(labels)
    return np.where(labels == MOVE, 1.0, -1.0)


def objective(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, lam: float) -> float:
    margins = y * (x @ w + b)
    return float(lam * w @ w + np.mean(np.maximum(0.0, 1.0 - margins)))


def svm_train(features: np.ndarray, labels, cfg: SvmConfig | None = None) -> SvmModel:
    """Fit a linear SVM; features are standardised with training-set statistics."""
    cfg = cfg or SvmConfig()
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != len(labels):
        raise ShapeError("features must be N x D with one label per row")
    y = _signed(labels)
    if np.unique(y).size < 2:
        raise DataError("svm_train needs samples from both classes")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    z = (x - mean) / scale
    w, b = np.zeros(z.shape[1]), 0.0
    best = (objective(w, b, z, y, cfg.lam), w.copy(), b)
    for t in range(cfg.iterations):
        active = y * (z @ w + b) < 1.0
        gw = 2.0 * cfg.lam * w - (y[active] @ z[active]) / y.size
        gb = -y[active].sum() / y.size
        step = cfg.eta0 / np.sqrt(t + 1.0)
        w = w - step * gw
        b = b - step * gb
        obj = objective(w, b, z, y, cfg.lam)
        if obj < best[0]:
            best = (obj, w.copy(), b)
    obj, w, b = best
    return SvmModel(w, float(b), mean, scale, cfg.lam, cfg.log_power, tuple(cfg.bands), obj)


def svm_predict(model: SvmModel, features) -> np.ndarray:
    """Labels (1 move, 0 rest); a decision value of exactly zero is rest."""
    return (model.decision_function(features) > 0).astype(np.int8)


def select_lambda(train_x, train_y, valid_x, valid_y, cfg: SvmConfig | None = None,
                  grid=LAMBDA_GRID) -> tuple[SvmModel, dict[float, float]]:
    """Train one SVM per ``lam`` and keep the best on validation accuracy.

    Ties go to the larger ``lam`` (the simpler model).
    """
    cfg = cfg or SvmConfig()
    scores: dict[float, float] = {}
    best_model, best_acc = None, -1.0
    for lam in sorted(grid):
        m = svm_train(train_x, train_y, cfg.model_copy(update={"lam": float(lam)}))
        acc = float(np.mean(svm_predict(m, valid_x) == np.asarray(valid_y)))
        scores[float(lam)] = acc
        if acc >= best_acc:
            best_model, best_acc = m, acc
    return best_model, scores
