"""Electrode ablation, filter visualisation and comparison reports."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import dsp
from .dataset import NEIGHBORHOOD_MS, SampleSet
from .errors import DataError
from .models.svm import SvmModel, spectral_features, svm_predict
from .models.train import evaluate
from .models.zoo import Model
from .nn import Tensor, activation, conv_forward, max_pool
from .nn.tensor import mean
from .session import Session, load_session

STAGES = ("pre", "post")


# -- scoring -------------------------------------------------------------------

def score(model, samples: SampleSet) -> float:
    """Test accuracy of a network or spectral SVM on ``samples``."""
    if isinstance(model, SvmModel):
        x = spectral_features(samples, model.bands, model.log_power)
        return float(np.mean(svm_predict(model, x) == samples.labels))
    return evaluate(model, samples).accuracy


# -- ablation ------------------------------------------------------------------

def _recording_mean(row: np.ndarray) -> float:
    # a constant channel keeps its exact value so ablating it is a no-op
    return float(row[0]) if np.all(row == row[0]) else float(row.mean())


def _sessions(samples: SampleSet):
    for sid in dict.fromkeys(samples.session_ids.tolist()):
        src = samples.sources.get(sid)
        if src is None:
            raise DataError(f"no source registered for session {sid!r}")
        yield sid, (src if isinstance(src, Session) else load_session(src))


def ablated_rows(samples: SampleSet, channels: Sequence[int], stage: str = "pre") -> dict[int, np.ndarray]:
    """Normalised buffers each channel would have if it were flat-lined.

    ``pre``: the raw channel becomes its mean over the whole recording and
    passes through the usual bandpass and neighbourhood normalisation.
    ``post``: the normalised channel becomes its mean over the test buffers.
    Returns ``{channel: N x T}`` float32 arrays aligned with ``samples``.
    """
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    channels = [int(c) for c in channels]
    for c in channels:
        if not 0 <= c < samples.n_channels:
            raise ValueError(f"unknown electrode {c}; recording has {samples.n_channels} channels")
    out = {c: np.empty((len(samples), samples.ecog.shape[2]), np.float32) for c in channels}
    if stage == "post":
        for c in channels:
            out[c][:] = np.float32(samples.ecog[:, c].astype(np.float64).mean())
        return out
    m = samples.margin
    tlen = samples.ecog.shape[2]
    nlen = int(round(NEIGHBORHOOD_MS * samples.fs / 1000.0))
    for sid, session in _sessions(samples):
        rows = np.flatnonzero(samples.session_ids == sid)
        rec = session.recording
        for c in channels:
            if c in rec.bad_channels:
                flat = np.zeros(rec.n_samples)
            else:
                const = np.full(rec.n_samples, _recording_mean(rec.samples[c]))
                flat = dsp.bandpass_array(const, rec.sample_rate_hz)
            for i in rows:
                ws, ns = int(samples.window_start[i]), int(samples.neigh_start[i])
                buf = dsp.normalize_window(flat[None, ws - m:ws - m + tlen], flat[None, ns:ns + nlen],
                                           samples.fs)
                out[c][i] = buf[0].astype(np.float32)
    return out


def _with_rows(samples: SampleSet, rows: dict[int, np.ndarray]) -> SampleSet:
    ecog = samples.ecog.copy()
    for c, arr in rows.items():
        ecog[:, c] = arr
    return samples.with_ecog(ecog)


def ablate_electrode(model, test_set: SampleSet, electrode_id: int, stage: str = "pre",
                     rows: dict[int, np.ndarray] | None = None) -> float:
    """Accuracy with one electrode replaced by its mean; the model is untouched."""
    if rows is None or electrode_id not in rows:
        rows = ablated_rows(test_set, [electrode_id], stage)
    return score(model, _with_rows(test_set, {electrode_id: rows[electrode_id]}))


def ablate_all(model, test_set: SampleSet, stage: str = "pre") -> float:
    rows = ablated_rows(test_set, range(test_set.n_channels), stage)
    return score(model, _with_rows(test_set, rows))


@dataclass
class AblationEntry:
    electrode_id: int
    row: int
    col: int
    original_acc: float
    ablated_acc: float

    @property
    def delta(self) -> float:
        return self.original_acc - self.ablated_acc


@dataclass
class AblationMap:
    original_accuracy: float
    entries: list[AblationEntry] = field(default_factory=list)
    grid: tuple[int, int] = (0, 0)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def deltas(self) -> np.ndarray:
        return np.array([e.delta for e in self.entries])

    @property
    def worst_case_delta(self) -> float:
        return float(self.deltas.max()) if self.entries else 0.0

    def delta_of(self, electrode_id: int) -> float:
        for e in self.entries:
            if e.electrode_id == electrode_id:
                return e.delta
        raise KeyError(electrode_id)

    def to_grid(self) -> np.ndarray:
        """Deltas laid out on the electrode grid; NaN where no grid electrode was scored."""
        rows, cols = self.grid
        g = np.full((rows, cols), np.nan)
        for e in self.entries:
            if e.row >= 0:
                g[e.row, e.col] = e.delta
        return g

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["electrode_id", "row", "col", "original_acc", "ablated_acc", "delta"])
        for e in self.entries:
            w.writerow([e.electrode_id, e.row, e.col, f"{e.original_acc:.6f}",
                        f"{e.ablated_acc:.6f}", f"{e.delta:.6f}"])
        return buf.getvalue()


def ablation_map(model, test_set: SampleSet, stage: str = "pre", jobs: int = 1,
                 electrodes: Sequence[int] | None = None) -> AblationMap:
    """Ablate every usable electrode in turn (bad channels are skipped)."""
    if electrodes is None:
        electrodes = [c for c in range(test_set.n_channels) if c not in test_set.bad_channels]
    electrodes = list(electrodes)
    original = score(model, test_set)
    rows = ablated_rows(test_set, electrodes, stage)

    def one(c: int) -> float:
        return ablate_electrode(model, test_set, c, stage, rows)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            accs = list(pool.map(one, electrodes))
    else:
        accs = [one(c) for c in electrodes]
    meta = test_set.channel_meta or [(-1, c) for c in range(test_set.n_channels)]
    entries = [AblationEntry(c, int(meta[c][0]), int(meta[c][1]), original, a)
               for c, a in zip(electrodes, accs)]
    return AblationMap(original, entries, tuple(test_set.grid))


# -- filter visualisation ----------------------------------------------------------

@dataclass
class VizResult:
    layer: str
    unit: int
    input: np.ndarray
    trace: list[float]
    dead: bool
    norm_bound: float


_TOWERS = ("ecog_conv", "video_conv", "early_conv", "grid_conv")


def _tower_of(model: Model, layer_id: str) -> tuple[str, int]:
    for prefix in _TOWERS:
        if layer_id.startswith(prefix) and layer_id[len(prefix):].isdigit():
            if layer_id in model.layers:
                return prefix, int(layer_id[len(prefix):])
    raise ValueError(f"{layer_id!r} is not a convolution layer of this {model.variant} model")


def _viz_input_shape(model: Model, prefix: str) -> tuple[int, ...]:
    cfg = model.config
    first = model.layers[f"{prefix}1"].hyper["in_channels"]
    if prefix == "ecog_conv":
        return (1, cfg.chunk_len, first)
    if prefix == "grid_conv":
        return (1, cfg.grid_rows, cfg.grid_cols, cfg.chunk_len, first)
    s = cfg.input_frame_size
    return (1, s, s, first)


def unit_activation(model: Model, layer_id: str, unit_id: int, x: np.ndarray, grad: bool = True):
    """Mean post-ReLU output of one unit for a channels-last input, and its input gradient."""
    prefix, depth = _tower_of(model, layer_id)
    t = Tensor(x, requires_grad=grad)
    h = t
    for i in range(1, depth + 1):
        h = activation(conv_forward(h, model.layers[f"{prefix}{i}"]), "relu")
        if i < depth and model.config.pool > 1:
            h = max_pool(h, model.config.pool)
    act = mean(h[..., unit_id])
    if not grad:
        return act.item(), None
    act.backward()
    return act.item(), (t.grad if t.grad is not None else np.zeros_like(x))


def visualize_unit(model: Model, layer_id: str, unit_id: int, steps: int = 256,
                   step_size: float | None = None, norm_bound: float | None = None,
                   seed: int = 0) -> VizResult:
    """Projected gradient ascent on the input to maximise one unit's mean activation.

    The input starts as seeded noise at half the norm bound (default: unit
    RMS). Each step moves along the normalised gradient and projects back
    onto the L2 ball; a step that lowers the activation is rejected and the
    step size halved. A unit with zero gradient at the start is flagged dead
    and its input returned unchanged.
    """
    prefix, _ = _tower_of(model, layer_id)
    n_units = model.layers[layer_id].hyper["filters"]
    if not 0 <= unit_id < n_units:
        raise ValueError(f"{layer_id} has {n_units} units, got unit {unit_id}")
    shape = _viz_input_shape(model, prefix)
    bound = float(np.sqrt(np.prod(shape))) if norm_bound is None else float(norm_bound)
    eta = 0.1 * bound if step_size is None else float(step_size)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    x *= 0.5 * bound / np.linalg.norm(x)
    act, g = unit_activation(model, layer_id, unit_id, x)
    trace = [act]
    gnorm = np.linalg.norm(g)
    dead = gnorm == 0.0
    if not dead:
        for _ in range(steps):
            cand = x + eta * g / gnorm
            cn = np.linalg.norm(cand)
            if cn > bound:
                cand *= bound / cn
            a_new, g_new = unit_activation(model, layer_id, unit_id, cand)
            if a_new >= act:
                x, act, g = cand, a_new, g_new
                trace.append(act)
                gnorm = np.linalg.norm(g)
                if gnorm == 0.0:
                    break
            else:
                eta *= 0.5
                if eta < 1e-12 * bound:
                    break
    return VizResult(layer_id, unit_id, _natural_layout(x[0], prefix), trace, bool(dead), bound)


def _natural_layout(x: np.ndarray, prefix: str) -> np.ndarray:
    if prefix == "ecog_conv":
        return x.T.copy()  # channels x time
    return np.moveaxis(x, -1, 0).copy()  # planes first


def dominant_frequency(x: np.ndarray, fs: float) -> float:
    """Frequency of the largest DFT magnitude (DC excluded), pooled over leading axes."""
    x = np.asarray(x, dtype=np.float64)
    freqs, power = dsp.power_spectrum(x, fs)
    total = power.reshape(-1, power.shape[-1]).sum(axis=0)
    total[0] = 0.0
    return float(freqs[int(np.argmax(total))])


# -- reports -------------------------------------------------------------------

CONDITION_ORDER = ("pred_b", "pred", "det")
CONDITION_LABELS = {"pred_b": "Pred-b", "pred": "Pred", "det": "Det"}


@dataclass
class Report:
    variants: list[str]
    conditions: list[str]
    grid: np.ndarray  # variants x conditions, NaN where missing
    csv: str
    text: str


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else f"{100.0 * v:.1f}"


def make_report(results: Sequence[dict]) -> Report:
    """Variant x condition accuracy grid with per-variant and per-condition averages.

    Accuracies are shown in percent. Repeated (variant, condition) entries,
    e.g. several seeds, are averaged.
    """
    if not results:
        raise DataError("no results to report")
    ids = {r.get("dataset_id") for r in results}
    if len(ids) > 1:
        raise DataError(f"results come from different datasets: {sorted(map(str, ids))}")
    variants = list(dict.fromkeys(r["variant"] for r in results))
    present = {r["condition"].replace("-", "_") for r in results}
    conditions = [c for c in CONDITION_ORDER if c in present]
    conditions += sorted(present - set(conditions))
    cells: dict[tuple[str, str], list[float]] = {}
    for r in results:
        cells.setdefault((r["variant"], r["condition"].replace("-", "_")), []).append(float(r["test_acc"]))
    grid = np.full((len(variants), len(conditions)), np.nan)
    for (v, c), accs in cells.items():
        grid[variants.index(v), conditions.index(c)] = float(np.mean(accs))
    row_avg = np.array([np.nanmean(r) if np.any(~np.isnan(r)) else np.nan for r in grid])
    col_avg = np.array([np.nanmean(c) if np.any(~np.isnan(c)) else np.nan for c in grid.T])
    overall = float(np.nanmean(grid))
    header = ["model"] + [CONDITION_LABELS.get(c, c) for c in conditions] + ["Average"]
    body = [[v] + [_fmt(x) for x in grid[i]] + [_fmt(row_avg[i])] for i, v in enumerate(variants)]
    footer = ["Average"] + [_fmt(x) for x in col_avg] + [_fmt(overall)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in [header, *body, footer]:
        w.writerow(row)
    widths = [max(len(row[i]) for row in [header, *body, footer]) for i in range(len(header))]
    lines = []
    for k, row in enumerate([header, *body, footer]):
        cells_txt = [row[0].ljust(widths[0])] + [s.rjust(wd) for s, wd in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells_txt).rstrip())
        if k == 0 or k == len(body):
            lines.append("  ".join("-" * wd for wd in widths))
    return Report(variants, conditions, grid, buf.getvalue(), "\n".join(lines) + "\n")


def pairwise_wins(a: Sequence[float], b: Sequence[float]) -> int:
    """Number of paired entries where ``a`` is strictly larger."""
    return int(sum(x > y for x, y in zip(a, b)))


def channel_groups(n_channels: int, motor: Sequence[int]) -> tuple[list[int], list[int]]:
    motor = sorted(set(int(c) for c in motor))
    rest = [c for c in range(n_channels) if c not in motor]
    return motor, rest

