"""Labelled samples: normalised, chunked neural windows with their video frames."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dsp
from .errors import DataError, PartialWriteError
from .events import (
    MovementEvent,
    TimingCondition,
    chunk_to_frame,
    get_condition,
    movement_mask,
)
from .session import Session, load_session
from .video import standardize

log = logging.getLogger(__name__)

MOVE, REST = 1, 0
MARGIN_MS = 100
NEIGHBORHOOD_MS = 3000
SEARCH_MS = 6000
SEARCH_STEP_MS = 100
CACHE_VERSION = 2


@dataclass
class LabeledSample:
    buffer: np.ndarray  # channels x (window + 2 * margin), normalised
    margin: int
    frames: np.ndarray  # 5 x H x W
    label: int
    condition: str
    event: MovementEvent
    day: int
    session_id: str

    @property
    def window(self) -> np.ndarray:
        n = self.buffer.shape[-1] - 2 * self.margin
        return self.buffer[:, self.margin:self.margin + n]

    @property
    def ecog_chunks(self) -> np.ndarray:
        return dsp.chunk_window(self.window)


@dataclass
class SampleSet:
    """Column-oriented store of labelled samples sharing one timing condition."""

    ecog: np.ndarray  # N x C x (W + 2m), float32
    frames: np.ndarray  # N x 5 x H x W, float32
    labels: np.ndarray  # N, int8
    days: np.ndarray
    t_ms: np.ndarray
    session_ids: np.ndarray
    window_start: np.ndarray  # sample index of the window in its session
    neigh_start: np.ndarray  # sample index of the normalisation neighbourhood
    condition: str
    margin: int
    fs: float
    channel_meta: list = field(default_factory=list)
    bad_channels: frozenset = frozenset()
    grid: tuple[int, int] = (0, 0)
    sources: dict = field(default_factory=dict)  # session_id -> Session or Path

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_channels(self) -> int:
        return int(self.ecog.shape[1])

    @property
    def window_len(self) -> int:
        return int(self.ecog.shape[2] - 2 * self.margin)

    @property
    def frame_size(self) -> int:
        return int(self.frames.shape[-1])

    def counts(self) -> dict[str, int]:
        return {"move": int(np.sum(self.labels == MOVE)), "rest": int(np.sum(self.labels == REST))}

    def __getitem__(self, i: int) -> LabeledSample:
        kind = "initiation" if self.labels[i] == MOVE else "rest"
        ev = MovementEvent(int(self.t_ms[i]), kind, "r_wrist" if kind == "initiation" else "all")
        return LabeledSample(self.ecog[i], self.margin, self.frames[i], int(self.labels[i]),
                             self.condition, ev, int(self.days[i]), str(self.session_ids[i]))

    def chunks(self, idx=None) -> np.ndarray:
        """Centred windows split into 5 chunks: ``n x 5 x C x W/5`` float64."""
        sel = self.ecog if idx is None else self.ecog[idx]
        w = sel[:, :, self.margin:self.margin + self.window_len].astype(np.float64)
        n, c, t = w.shape
        return w.reshape(n, c, 5, t // 5).transpose(0, 2, 1, 3)

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(
            self.ecog[idx], self.frames[idx], self.labels[idx], self.days[idx], self.t_ms[idx],
            self.session_ids[idx], self.window_start[idx], self.neigh_start[idx],
            self.condition, self.margin, self.fs, list(self.channel_meta), self.bad_channels,
            self.grid, dict(self.sources),
        )

    def with_labels(self, labels) -> "SampleSet":
        out = self.subset(np.arange(len(self)))
        out.labels = np.asarray(labels, dtype=np.int8)
        return out

    def with_ecog(self, ecog: np.ndarray) -> "SampleSet":
        out = self.subset(np.arange(len(self)))
        out.ecog = ecog
        return out

    def identity(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.ecog, self.frames, self.labels, self.t_ms, self.days):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(self.condition.encode())
        return h.hexdigest()[:16]

    def session(self, session_id: str) -> Session:
        src = self.sources.get(session_id)
        if src is None:
            raise DataError(f"no source registered for session {session_id!r}")
        if not isinstance(src, Session):
            src = load_session(Path(src))
            self.sources[session_id] = src
        return src


def concatenate(sets: Sequence[SampleSet]) -> SampleSet:
    sets = [s for s in sets if s is not None]
    if not sets:
        raise DataError("nothing to concatenate")
    first = sets[0]
    for s in sets[1:]:
        if s.condition != first.condition or s.ecog.shape[1:] != first.ecog.shape[1:]:
            raise DataError("sample sets differ in condition or geometry")
    sources = {}
    for s in sets:
        sources.update(s.sources)
    cat = lambda name: np.concatenate([getattr(s, name) for s in sets])  # noqa: E731
    bad = frozenset().union(*(s.bad_channels for s in sets))
    return SampleSet(cat("ecog"), cat("frames"), cat("labels"), cat("days"), cat("t_ms"),
                     cat("session_ids"), cat("window_start"), cat("neigh_start"),
                     first.condition, first.margin, first.fs, list(first.channel_meta), bad,
                     first.grid, sources)


def _movement_free(mask: np.ndarray, start_ms: float, end_ms: float, fps: float,
                   alignment: int) -> bool:
    f0 = int(np.floor(start_ms / 1000.0 * fps)) + alignment
    f1 = int(np.ceil(end_ms / 1000.0 * fps)) + alignment
    f0, f1 = max(f0, 0), min(f1 + 1, mask.size)
    return not mask[f0:f1].any()


def find_neighborhood(win_start_ms: float, win_end_ms: float, duration_ms: float,
                      mask: np.ndarray, fps: float, alignment: int,
                      length_ms: int = NEIGHBORHOOD_MS, search_ms: int = SEARCH_MS,
                      step_ms: int = SEARCH_STEP_MS) -> float | None:
    """Start time of the nearest movement-free span before, else after, the window."""
    for k in range(search_ms // step_ms + 1):
        end = win_start_ms - k * step_ms
        start = end - length_ms
        if start < 0:
            break
        if _movement_free(mask, start, end, fps, alignment):
            return start
    for k in range(search_ms // step_ms + 1):
        start = win_end_ms + k * step_ms
        if start + length_ms > duration_ms:
            break
        if _movement_free(mask, start, start + length_ms, fps, alignment):
            return start
    return None


def build_dataset(session: Session, events: Sequence[MovementEvent],
                  condition: TimingCondition | str, joint: str = "r_wrist",
                  margin_ms: int = MARGIN_MS) -> SampleSet:
    """Extract, normalise and chunk one window per event, with its five frames.

    Each frame is standardised to zero mean and unit variance. Windows whose
    buffer or neighbourhood falls outside the recording, or that have no
    movement-free neighbourhood, are skipped with a warning.
    """
    if isinstance(condition, str):
        condition = get_condition(condition)
    fs, fps, align = session.fs, session.fps, session.alignment
    rec = session.filtered()
    video = session.video()
    mask = movement_mask(session.pose, joint)
    n_total = rec.n_samples
    margin = int(round(margin_ms * fs / 1000.0))
    wlen = int(round(1000 * fs / 1000.0))
    nlen = int(round(NEIGHBORHOOD_MS * fs / 1000.0))

    rows = []
    for ev in events:
        ws_ms = ev.t_ms + condition.window_start_ms
        we_ms = ev.t_ms + condition.window_end_ms
        ws = int(round(ws_ms * fs / 1000.0))
        if ws - margin < 0 or ws + wlen + margin > n_total:
            log.warning("skipping %s at %d ms: window outside recording", ev.kind, ev.t_ms)
            continue
        ns_ms = find_neighborhood(ws_ms, we_ms, session.duration_ms, mask, fps, align)
        if ns_ms is None:
            log.warning("skipping %s at %d ms: no movement-free neighbourhood", ev.kind, ev.t_ms)
            continue
        ns = int(round(ns_ms * fs / 1000.0))
        try:
            fidx = [chunk_to_frame(ws_ms, i, fps, align, len(video)) for i in range(5)]
        except IndexError:
            log.warning("skipping %s at %d ms: frames outside video", ev.kind, ev.t_ms)
            continue
        buf = dsp.normalize_window(rec.samples[:, ws - margin:ws + wlen + margin],
                                   rec.samples[:, ns:ns + nlen], fs)
        rows.append((buf.astype(np.float32), standardize(video.frames(fidx)).astype(np.float32),
                     MOVE if ev.kind == "initiation" else REST, ev.t_ms, ws, ns))

    n = len(rows)
    c = rec.n_channels
    size = video.size
    return SampleSet(
        ecog=np.stack([r[0] for r in rows]) if n else np.zeros((0, c, wlen + 2 * margin), np.float32),
        frames=np.stack([r[1] for r in rows]) if n else np.zeros((0, 5, size, size), np.float32),
        labels=np.array([r[2] for r in rows], dtype=np.int8),
        days=np.full(n, session.day, dtype=np.int64),
        t_ms=np.array([r[3] for r in rows], dtype=np.int64),
        session_ids=np.array([session.session_id] * n, dtype=object),
        window_start=np.array([r[4] for r in rows], dtype=np.int64),
        neigh_start=np.array([r[5] for r in rows], dtype=np.int64),
        condition=condition.name,
        margin=margin,
        fs=fs,
        channel_meta=list(rec.channel_meta),
        bad_channels=rec.bad_channels,
        grid=session.grid,
        sources={session.session_id: session.path if session.path is not None else session},
    )


def _balance(idx: np.ndarray, labels: np.ndarray, rng: np.random.Generator,
             split: str) -> np.ndarray:
    move = idx[labels[idx] == MOVE]
    rest = idx[labels[idx] == REST]
    if move.size == 0 or rest.size == 0:
        missing = "move" if move.size == 0 else "rest"
        raise DataError(f"{split} split has no {missing} samples")
    n = min(move.size, rest.size)
    keep = np.concatenate([
        move if move.size == n else rng.choice(move, n, replace=False),
        rest if rest.size == n else rng.choice(rest, n, replace=False),
    ])
    return np.sort(keep)


def split_and_balance(samples: SampleSet, train_days, test_day: int,
                      rng_seed) -> tuple[SampleSet, SampleSet]:
    """Partition by recording day, then downsample the majority class in each split."""
    train_days = {int(d) for d in train_days}
    if int(test_day) in train_days:
        raise ValueError("test_day must not be one of the training days")
    rng = np.random.default_rng(rng_seed)
    train_idx = np.flatnonzero(np.isin(samples.days, sorted(train_days)))
    test_idx = np.flatnonzero(samples.days == int(test_day))
    train = _balance(train_idx, samples.labels, rng, "train")
    test = _balance(test_idx, samples.labels, rng, "test")
    return samples.subset(train), samples.subset(test)


def holdout(samples: SampleSet, fraction: float, rng_seed) -> tuple[SampleSet, SampleSet]:
    """Stratified random split into (remaining, held-out)."""
    rng = np.random.default_rng(rng_seed)
    held = []
    for lab in (MOVE, REST):
        idx = np.flatnonzero(samples.labels == lab)
        k = int(round(fraction * idx.size))
        held.append(rng.choice(idx, k, replace=False) if k else np.zeros(0, np.int64))
    held_idx = np.sort(np.concatenate(held))
    rest_idx = np.setdiff1d(np.arange(len(samples)), held_idx)
    return samples.subset(rest_idx), samples.subset(held_idx)


def select_events(events: Sequence[MovementEvent], rng_seed,
                  rest_ratio: float = 1.25) -> list[MovementEvent]:
    """All initiations plus a random subset of rests (bounds memory before extraction)."""
    rng = np.random.default_rng(rng_seed)
    inits = [e for e in events if e.kind == "initiation"]
    rests = [e for e in events if e.kind == "rest"]
    k = min(len(rests), int(np.ceil(rest_ratio * len(inits))) + 2)
    pick = np.sort(rng.choice(len(rests), k, replace=False)) if k else []
    return sorted(inits + [rests[i] for i in pick], key=lambda e: e.t_ms)


# -- cache -------------------------------------------------------------------------

_ARRAYS = ("ecog", "frames", "labels", "days", "t_ms", "window_start", "neigh_start")


def save_sampleset(samples: SampleSet, path: Path, meta: dict | None = None) -> None:
    """Write ``<path>.json`` header and ``<path>.bin`` little-endian array blob."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "cache_version": CACHE_VERSION,
        "condition": samples.condition,
        "margin": samples.margin,
        "fs": samples.fs,
        "grid": list(samples.grid),
        "channel_meta": [list(m) for m in samples.channel_meta],
        "bad_channels": sorted(samples.bad_channels),
        "session_ids": [str(s) for s in samples.session_ids],
        "sources": {k: str(v) for k, v in samples.sources.items() if not isinstance(v, Session)},
        "arrays": [],
        "meta": meta or {},
    }
    offset = 0
    bin_tmp = path.with_suffix(".bin.partial")
    with open(bin_tmp, "wb") as fh:
        for name in _ARRAYS:
            arr = np.ascontiguousarray(getattr(samples, name))
            dt = arr.dtype.newbyteorder("<")
            data = arr.astype(dt).tobytes()
            header["arrays"].append({"name": name, "dtype": dt.str, "shape": list(arr.shape),
                                     "offset": offset, "nbytes": len(data)})
            fh.write(data)
            offset += len(data)
    header["total_bytes"] = offset
    bin_tmp.replace(path.with_suffix(".bin"))
    json_tmp = path.with_suffix(".json.partial")
    with open(json_tmp, "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
    json_tmp.replace(path.with_suffix(".json"))


def load_sampleset(path: Path) -> SampleSet:
    path = Path(path)
    hpath, bpath = path.with_suffix(".json"), path.with_suffix(".bin")
    if not hpath.exists():
        if bpath.exists():
            raise PartialWriteError(f"{bpath} has no header; the cache write was interrupted")
        raise DataError(f"dataset cache {hpath} not found")
    with open(hpath) as fh:
        header = json.load(fh)
    if not bpath.exists() or bpath.stat().st_size != header["total_bytes"]:
        raise PartialWriteError(f"{bpath} is missing or truncated")
    blob = bpath.read_bytes()
    arrays = {}
    for spec in header["arrays"]:
        arr = np.frombuffer(blob, dtype=np.dtype(spec["dtype"]), count=int(np.prod(spec["shape"])),
                            offset=spec["offset"]).reshape(spec["shape"])
        arrays[spec["name"]] = arr.copy()
    return SampleSet(
        session_ids=np.array(header["session_ids"], dtype=object),
        condition=header["condition"],
        margin=int(header["margin"]),
        fs=float(header["fs"]),
        channel_meta=[tuple(m) for m in header["channel_meta"]],
        bad_channels=frozenset(header["bad_channels"]),
        grid=tuple(header["grid"]),
        sources={k: Path(v) for k, v in header["sources"].items()},
        **arrays,
    )
