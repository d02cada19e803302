"""Movement and rest events from pose tracks, and labelled dataset assembly."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import dsp

log = logging.getLogger(__name__)

JOINTS = ("head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist")
SMOOTH_WINDOW = 21
SMOOTH_ORDER = 3
MOVE_THRESHOLD_PX = 1.0
QUIET_THRESHOLD_PX = 0.5
ONSET_FRAMES = 5
PRE_QUIET_FRAMES = 10
REST_FRAMES = 30
REFRACTORY_MS = 1000
CONFIDENCE_THRESHOLD = 0.25


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class PoseTrack:
    """Per-frame pixel positions and confidences of the seven upper-body joints."""

    xy: np.ndarray  # frames x 7 x 2
    confidence: np.ndarray  # frames x 7
    frame_rate_hz: float = 30.0
    joints: tuple[str, ...] = JOINTS

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.xy.ndim != 3 or self.xy.shape[1:] != (len(JOINTS), 2):
            raise ValueError(f"xy must be frames x 7 x 2, got {self.xy.shape}")
        if self.confidence.shape != self.xy.shape[:2]:
            raise ValueError("confidence must be frames x 7")
        if np.any((self.confidence < 0) | (self.confidence > 1)):
            raise ValueError("confidence values must lie in [0, 1]")
        if tuple(self.joints) != JOINTS:
            raise ValueError(f"joints must be {JOINTS}")

    @property
    def n_frames(self) -> int:
        return self.xy.shape[0]

    def joint_index(self, joint: str) -> int:
        try:
            return self.joints.index(joint)
        except ValueError:
            raise ValueError(f"unknown joint {joint!r}") from None


@dataclass(frozen=True)
class MovementEvent:
    t_ms: int
    kind: str  # "initiation" | "rest"
    joint: str
    source: str = "auto"

    def __post_init__(self):
        if self.kind not in ("initiation", "rest"):
            raise ValueError(f"kind must be 'initiation' or 'rest', got {self.kind!r}")
        if self.source not in ("auto", "manual"):
            raise ValueError(f"source must be 'auto' or 'manual', got {self.source!r}")
        if self.t_ms < 0:
            raise ValueError("t_ms must be nonnegative")


@dataclass(frozen=True)
class TimingCondition:
    name: str
    window_start_ms: int
    window_end_ms: int

    def __post_init__(self):
        if self.window_end_ms - self.window_start_ms != 1000:
            raise ValueError("timing windows must span exactly 1000 ms")


CONDITIONS = {
    "det": TimingCondition("det", -500, 500),
    "pred": TimingCondition("pred", -1300, -300),
    "pred_b": TimingCondition("pred_b", -1800, -800),
}


def get_condition(name: str) -> TimingCondition:
    key = name.replace("-", "_")
    if key not in CONDITIONS:
        raise ValueError(f"unknown timing condition {name!r}; choose det, pred or pred-b")
    return CONDITIONS[key]


# -- frame/time conversions ------------------------------------------------------

def frame_to_ms(frame: int, fps: float, alignment: int = 0) -> int:
    return round_half_up((frame - alignment) / fps * 1000.0)


def ms_to_frame(t_ms: float, fps: float, alignment: int = 0) -> int:
    return round_half_up(t_ms / 1000.0 * fps) + alignment


def chunk_to_frame(window_start_ms: float, chunk_index: int, fps: float = 30.0,
                   alignment: int = 0, n_frames: int | None = None,
                   chunk_ms: int = 200) -> int:
    """Video frame at the middle of a chunk of the window."""
    if not 0 <= chunk_index < 5:
        raise ValueError(f"chunk_index must be in 0..4, got {chunk_index}")
    mid_ms = window_start_ms + chunk_ms * chunk_index + chunk_ms // 2
    frame = ms_to_frame(mid_ms, fps, alignment)
    if frame < 0 or (n_frames is not None and frame >= n_frames):
        raise IndexError(f"frame {frame} for t={mid_ms} ms is outside the video")
    return frame


# -- pose processing ----------------------------------------------------------

def smooth_pose(track: PoseTrack, window: int = SMOOTH_WINDOW,
                poly_order: int = SMOOTH_ORDER) -> PoseTrack:
    if track.n_frames < window:
        raise ValueError(f"track has {track.n_frames} frames, smoothing needs {window}")
    xy = np.empty_like(track.xy)
    for j in range(track.xy.shape[1]):
        for k in range(2):
            xy[:, j, k] = dsp.savgol(track.xy[:, j, k], window, poly_order)
    return PoseTrack(xy, track.confidence.copy(), track.frame_rate_hz, track.joints)


def wrist_displacement(track: PoseTrack, joint: str = "r_wrist") -> np.ndarray:
    """Euclidean pixel distance travelled by ``joint`` since the previous frame."""
    pos = track.xy[:, track.joint_index(joint), :]
    d = np.zeros(track.n_frames)
    d[1:] = np.hypot(*np.diff(pos, axis=0).T)
    return d


def _all_displacements(track: PoseTrack) -> np.ndarray:
    d = np.zeros(track.xy.shape[:2])
    d[1:] = np.hypot(track.xy[1:, :, 0] - track.xy[:-1, :, 0],
                     track.xy[1:, :, 1] - track.xy[:-1, :, 1])
    return d


def _window_means(d: np.ndarray, width: int) -> np.ndarray:
    """``out[i] = mean(d[i:i+width])`` along axis 0 for every full window."""
    c = np.concatenate([np.zeros((1,) + d.shape[1:]), np.cumsum(d, axis=0)])
    return (c[width:] - c[:-width]) / width


def _refractory(frames: Iterable[int], fps: float, alignment: int,
                refractory_ms: int = REFRACTORY_MS) -> list[int]:
    kept: list[int] = []
    last = None
    for f in frames:
        t = frame_to_ms(f, fps, alignment)
        if last is None or t - last >= refractory_ms:
            kept.append(f)
            last = t
    return kept


def detect_initiations(track: PoseTrack, joint: str = "r_wrist",
                       alignment: int = 0) -> list[MovementEvent]:
    """Initiations: next 5 frames average > 1 px/frame after 10 frames averaging < 0.5.

    ``track`` is expected to be smoothed already.
    """
    d = wrist_displacement(track, joint)
    return _initiations_from_displacement(d, track.frame_rate_hz, joint, alignment)


def _initiations_from_displacement(d: np.ndarray, fps: float, joint: str,
                                   alignment: int) -> list[MovementEvent]:
    n = d.size
    if n < PRE_QUIET_FRAMES + ONSET_FRAMES:
        return []
    ahead = _window_means(d, ONSET_FRAMES)  # ahead[f] = mean d[f..f+4]
    behind = _window_means(d, PRE_QUIET_FRAMES)  # behind[f-10] = mean d[f-10..f-1]
    frames = np.arange(PRE_QUIET_FRAMES, n - ONSET_FRAMES + 1)
    hit = (ahead[frames] > MOVE_THRESHOLD_PX) & (behind[frames - PRE_QUIET_FRAMES] < QUIET_THRESHOLD_PX)
    kept = _refractory(frames[hit], fps, alignment)
    return [MovementEvent(frame_to_ms(f, fps, alignment), "initiation", joint)
            for f in kept if frame_to_ms(f, fps, alignment) >= 0]


def detect_rest(track: PoseTrack, alignment: int = 0) -> list[MovementEvent]:
    """Rest: every joint averages < 0.5 px/frame over 30 frames before and after."""
    d = _all_displacements(track)
    n = d.shape[0]
    if n < 2 * REST_FRAMES:
        return []
    means = _window_means(d, REST_FRAMES)  # means[i] = mean d[i..i+29]
    frames = np.arange(REST_FRAMES, n - REST_FRAMES + 1)
    quiet = np.all(means[frames - REST_FRAMES] < QUIET_THRESHOLD_PX, axis=1) & np.all(
        means[frames] < QUIET_THRESHOLD_PX, axis=1
    )
    kept = _refractory(frames[quiet], track.frame_rate_hz, alignment)
    return [MovementEvent(frame_to_ms(f, track.frame_rate_hz, alignment), "rest", "all")
            for f in kept if frame_to_ms(f, track.frame_rate_hz, alignment) >= 0]


def apply_confidence_gate(track: PoseTrack, events: Sequence[MovementEvent],
                          threshold: float = CONFIDENCE_THRESHOLD,
                          alignment: int = 0) -> list[MovementEvent]:
    """Drop events whose defining frames include a confidence at or below ``threshold``.

    Initiations are defined by frames ``f-10 .. f+4`` of their joint, rests by
    frames ``f-30 .. f+29`` of all joints.
    """
    kept = []
    fps = track.frame_rate_hz
    for ev in events:
        f = ms_to_frame(ev.t_ms, fps, alignment)
        if ev.kind == "initiation":
            lo, hi = f - PRE_QUIET_FRAMES, f + ONSET_FRAMES
            cols = [track.joint_index(ev.joint)]
        else:
            lo, hi = f - REST_FRAMES, f + REST_FRAMES
            cols = list(range(len(track.joints)))
        if lo < 0 or hi > track.n_frames:
            continue
        if np.all(track.confidence[lo:hi][:, cols] > threshold):
            kept.append(ev)
    return kept


def extract_events(track: PoseTrack, joint: str = "r_wrist", alignment: int = 0,
                   threshold: float = CONFIDENCE_THRESHOLD,
                   rest_exclusion_ms: int = 2000) -> list[MovementEvent]:
    """Smooth, detect, gate, and drop rests near initiations; sorted by time."""
    smooth = smooth_pose(track)
    inits = apply_confidence_gate(track, detect_initiations(smooth, joint, alignment),
                                  threshold, alignment)
    rests = apply_confidence_gate(track, detect_rest(smooth, alignment), threshold, alignment)
    times = np.array([e.t_ms for e in inits])
    if times.size:
        rests = [r for r in rests if np.min(np.abs(times - r.t_ms)) >= rest_exclusion_ms]
    return sorted(inits + rests, key=lambda e: (e.t_ms, e.kind))


def movement_mask(track: PoseTrack, joint: str = "r_wrist") -> np.ndarray:
    """Per-frame flag: smoothed ``joint`` moves at least the quiescence threshold."""
    return wrist_displacement(smooth_pose(track), joint) >= QUIET_THRESHOLD_PX


# -- file formats ------------------------------------------------------------------

def write_pose_csv(path: Path, track: PoseTrack) -> None:
    header = ["frame"] + [f"{j}_{c}" for j in JOINTS for c in ("x", "y", "c")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for f in range(track.n_frames):
            row = [str(f)]
            for j in range(len(JOINTS)):
                row += [repr(float(track.xy[f, j, 0])), repr(float(track.xy[f, j, 1])),
                        repr(float(track.confidence[f, j]))]
            w.writerow(row)


def read_pose_csv(path: Path, frame_rate_hz: float = 30.0) -> PoseTrack:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["frame"] + [f"{j}_{c}" for j in JOINTS for c in ("x", "y", "c")]
        if header != expected:
            raise ValueError(f"{path}: unexpected pose.csv header")
        rows = np.array([[float(v) for v in row[1:]] for row in reader], dtype=np.float64)
    rows = rows.reshape(-1, len(JOINTS), 3)
    return PoseTrack(rows[:, :, :2], rows[:, :, 2], frame_rate_hz)


def event_to_dict(ev: MovementEvent, **extra) -> dict:
    return {"t_ms": int(ev.t_ms), "kind": ev.kind, "joint": ev.joint, "source": ev.source, **extra}


def write_events_jsonl(path: Path, events: Iterable[MovementEvent], **extra) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(event_to_dict(ev, **extra)) + "\n")


def read_events_jsonl(path: Path) -> list[MovementEvent]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(MovementEvent(int(rec["t_ms"]), rec["kind"], rec["joint"],
                                     rec.get("source", "auto")))
    return out


def agreement(auto: Sequence[MovementEvent], reference: Sequence[MovementEvent],
              tolerance_ms: float = 67.0, kind: str = "initiation") -> dict:
    """Match auto events to reference events of ``kind`` one-to-one within a tolerance."""
    a = sorted(e.t_ms for e in auto if e.kind == kind)
    r = sorted(e.t_ms for e in reference if e.kind == kind)
    used = set()
    matched = 0
    for t in r:
        best = None
        for i, s in enumerate(a):
            if i in used or abs(s - t) > tolerance_ms:
                continue
            if best is None or abs(s - t) < abs(a[best] - t):
                best = i
        if best is not None:
            used.add(best)
            matched += 1
    return {
        "kind": kind,
        "tolerance_ms": tolerance_ms,
        "n_auto": len(a),
        "n_reference": len(r),
        "matched": matched,
        "recall": matched / len(r) if r else 1.0,
        "precision": matched / len(a) if a else 1.0,
        "false_alarms": len(a) - matched,
        "misses": len(r) - matched,
    }
