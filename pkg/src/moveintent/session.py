"""Session directories: manifest, binary recording, pose track, truth events."""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import dsp
from .errors import DataError, PartialWriteError
from .events import MovementEvent, PoseTrack, read_events_jsonl, read_pose_csv, write_pose_csv
from .video import SkeletonVideo

FORMAT_VERSION = 1
ECOG_FILE = "ecog.f32"
POSE_FILE = "pose.csv"
TRUTH_FILE = "truth.jsonl"
MANIFEST_FILE = "manifest.json"


@dataclass
class Session:
    manifest: dict[str, Any]
    recording: dsp.EcogRecording
    pose: PoseTrack
    truth: list[MovementEvent] = field(default_factory=list)
    path: Path | None = None
    _filtered: dsp.EcogRecording | None = field(default=None, repr=False)

    @property
    def session_id(self) -> str:
        return self.manifest["session_id"]

    @property
    def day(self) -> int:
        return int(self.manifest["day"])

    @property
    def fs(self) -> float:
        return float(self.manifest["fs"])

    @property
    def fps(self) -> float:
        return float(self.manifest["fps"])

    @property
    def alignment(self) -> int:
        return int(self.manifest.get("alignment_frame", 0))

    @property
    def grid(self) -> tuple[int, int]:
        g = self.manifest["grid"]
        return int(g["rows"]), int(g["cols"])

    @property
    def duration_ms(self) -> float:
        return self.recording.n_samples / self.fs * 1000.0

    def filtered(self, low_hz: float = 10.0, high_hz: float = 200.0) -> dsp.EcogRecording:
        """Bandpassed recording with bad channels flattened to zero (cached)."""
        if self._filtered is None:
            rec = dsp.bandpass(self.recording, low_hz, high_hz)
            for ch in rec.bad_channels:
                rec.samples[ch] = 0.0
            self._filtered = rec
        return self._filtered

    def drop_cache(self) -> None:
        self._filtered = None

    def video(self) -> SkeletonVideo:
        v = self.manifest.get("video", {})
        return SkeletonVideo(self.pose.xy, size=int(v.get("size", 32)),
                             noise_sd=float(v.get("noise_sd", 0.0)), seed=int(v.get("seed", 0)))


def channel_layout(n_channels: int, rows: int, cols: int) -> list[tuple[int, int]]:
    """Grid positions row-major for the first ``rows * cols`` channels, strip after."""
    if rows * cols > n_channels:
        raise ValueError(f"grid {rows}x{cols} needs at least {rows * cols} channels")
    meta = [(i // cols, i % cols) for i in range(rows * cols)]
    meta += [(-1, i) for i in range(n_channels - rows * cols)]
    return meta


def save_session(session: Session, directory: Path) -> Path:
    """Write a session directory atomically (staged in ``<dir>.partial``)."""
    directory = Path(directory)
    stage = directory.with_name(directory.name + ".partial")
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    data = np.ascontiguousarray(session.recording.samples.T).astype("<f4")
    data.tofile(stage / ECOG_FILE)
    write_pose_csv(stage / POSE_FILE, session.pose)
    with open(stage / TRUTH_FILE, "w") as fh:
        for ev in session.truth:
            fh.write(json.dumps({"t_ms": int(ev.t_ms), "kind": ev.kind, "joint": ev.joint,
                                 "source": ev.source, "scheduled": True}) + "\n")
    manifest = dict(session.manifest)
    manifest["format_version"] = FORMAT_VERSION
    manifest["n_samples"] = session.recording.n_samples
    manifest["n_frames"] = session.pose.n_frames
    manifest["bad_channels"] = sorted(session.recording.bad_channels)
    manifest["ecog_bytes"] = int(data.nbytes)
    with open(stage / MANIFEST_FILE, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if directory.exists():
        shutil.rmtree(directory)
    os.replace(stage, directory)
    session.manifest = manifest
    session.path = directory
    return directory


def load_session(directory: Path) -> Session:
    directory = Path(directory)
    if directory.with_name(directory.name + ".partial").exists() and not directory.exists():
        raise PartialWriteError(f"{directory}: only a partial staging directory exists")
    if not directory.is_dir():
        raise DataError(f"session directory {directory} does not exist")
    mpath = directory / MANIFEST_FILE
    if not mpath.exists():
        if (directory / ECOG_FILE).exists():
            raise PartialWriteError(f"{directory}: data present but manifest missing")
        raise DataError(f"{directory}: no {MANIFEST_FILE}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    n_ch, n_s = int(manifest["n_channels"]), int(manifest["n_samples"])
    epath = directory / ECOG_FILE
    if not epath.exists() or epath.stat().st_size != n_ch * n_s * 4:
        raise PartialWriteError(
            f"{epath}: expected {n_ch * n_s * 4} bytes, found "
            f"{epath.stat().st_size if epath.exists() else 'no file'}"
        )
    raw = np.fromfile(epath, dtype="<f4").reshape(n_s, n_ch)
    rows, cols = int(manifest["grid"]["rows"]), int(manifest["grid"]["cols"])
    rec = dsp.EcogRecording(raw.T.astype(np.float64), float(manifest["fs"]),
                            channel_layout(n_ch, rows, cols),
                            frozenset(manifest.get("bad_channels", [])))
    pose = read_pose_csv(directory / POSE_FILE, float(manifest["fps"]))
    if pose.n_frames != int(manifest["n_frames"]):
        raise PartialWriteError(f"{directory / POSE_FILE}: frame count does not match manifest")
    truth = read_events_jsonl(directory / TRUTH_FILE) if (directory / TRUTH_FILE).exists() else []
    return Session(manifest, rec, pose, truth, directory)
