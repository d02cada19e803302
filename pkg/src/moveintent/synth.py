"""Synthetic sessions with known movement initiations.

Pose tracks are built so the detection rules recover every scheduled
initiation. Recordings carry 1/f background noise on every channel plus, on
the motor channels, a high-gamma burst and a beta-band attenuation that
start ``lead_ms`` before each initiation. At full envelope the burst RMS is
``snr * weight * gamma_gain`` times the background RMS. With
``signature_prob`` below 1 some initiations carry no neural signature.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import dsp
from .events import JOINTS, MovementEvent, PoseTrack, frame_to_ms
from .session import FORMAT_VERSION, Session, channel_layout, save_session

# pixel coordinates of the resting posture in a 640x480 frame
HOME_POSE = np.array([
    [320.0, 110.0],  # head
    [255.0, 190.0],  # l_shoulder
    [385.0, 190.0],  # r_shoulder
    [225.0, 285.0],  # l_elbow
    [415.0, 285.0],  # r_elbow
    [250.0, 370.0],  # l_wrist
    [390.0, 370.0],  # r_wrist
])

ONSET_FRAMES = 6
RAMP_END = 14
OUT_FRAMES = 24
HOLD_FRAMES = 2


class SynthSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    session_id: str = "synth"
    day: int = 1
    n_channels: int = Field(64, gt=0)
    grid_rows: int = Field(8, ge=0)
    grid_cols: int = Field(8, ge=0)
    fs: float = Field(1000.0, gt=0)
    fps: float = Field(30.0, gt=0)
    duration_s: float | None = None
    n_events: int = Field(100, ge=0)
    motor_channels: list[int] | None = None
    motor_weights: list[float] | None = None
    gamma_band: tuple[float, float] = (70.0, 100.0)
    gamma_gain: float = Field(1.0, ge=0)
    beta_band: tuple[float, float] = (10.0, 30.0)
    beta_attenuation: float = Field(0.5, ge=0, le=1)
    lead_ms: float = Field(1500.0, ge=0)
    dur_ms: float = Field(2000.0, gt=0)
    snr: float = Field(2.0, ge=0)
    signature_prob: float = Field(1.0, ge=0, le=1)
    background_uv: float = Field(50.0, gt=0)
    min_spacing_s: float = Field(7.5, ge=5.0)
    spacing_jitter_s: float = Field(2.0, ge=0)
    lead_in_s: float = Field(6.0, ge=0)
    tail_s: float = Field(6.0, ge=0)
    jitter_px: float = Field(0.1, ge=0)
    onset_speed: tuple[float, float] = (1.6, 1.8)
    peak_speed: tuple[float, float] = (4.0, 6.0)
    joint: str = "r_wrist"
    conf_dropouts: list[tuple[int, int, str]] = Field(default_factory=list)
    video_size: int = Field(32, gt=0)
    video_noise_sd: float = Field(0.3, ge=0)
    alignment_frame: int = 0
    bad_channels: list[int] = Field(default_factory=list)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.joint not in JOINTS:
            raise ValueError(f"unknown joint {self.joint!r}")
        motor = self.resolved_motor_channels()
        if any(not 0 <= c < self.n_channels for c in motor):
            raise ValueError("motor_channels must be a subset of the channels")
        if self.motor_weights is not None and len(self.motor_weights) != len(motor):
            raise ValueError("motor_weights needs one weight per motor channel")
        if self.grid_rows * self.grid_cols > self.n_channels:
            raise ValueError("grid is larger than the channel count")
        return self

    def resolved_motor_channels(self) -> list[int]:
        if self.motor_channels is not None:
            return list(self.motor_channels)
        rows, cols = max(self.grid_rows, 1), max(self.grid_cols, 1)
        if self.grid_rows * self.grid_cols == 0:
            return list(range(min(8, self.n_channels)))
        # a 2x4 patch in the upper-middle of the grid, clipped to its size
        r0, c0 = rows // 4, max(cols // 2 - 2, 0)
        chans = [r * cols + c for r in range(r0, min(r0 + 2, rows))
                 for c in range(c0, min(c0 + 4, cols))]
        return chans

    def resolved_duration_s(self) -> float:
        if self.duration_s is not None:
            return self.duration_s
        mean_gap = self.min_spacing_s + self.spacing_jitter_s
        return self.lead_in_s + self.n_events * mean_gap + self.tail_s


# -- scheduling and pose ---------------------------------------------------------

def schedule_events(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Event times in ms, spaced at least ``min_spacing_s`` apart."""
    duration = spec.resolved_duration_s()
    if spec.n_events == 0:
        return np.zeros(0, dtype=np.int64)
    span = duration - spec.lead_in_s - spec.tail_s
    needed = (spec.n_events - 1) * spec.min_spacing_s
    if span < needed:
        raise ValueError(
            f"{spec.n_events} events need {needed + spec.lead_in_s + spec.tail_s:.1f} s "
            f"but duration is {duration:.1f} s"
        )
    slack = span - needed
    # distribute slack by sorted uniforms so gaps stay >= min spacing
    extra = np.sort(rng.uniform(0, slack, spec.n_events))
    t_s = spec.lead_in_s + np.arange(spec.n_events) * spec.min_spacing_s + extra
    # snap to frame times so scheduled frames are exact
    frames = np.round(t_s * spec.fps).astype(np.int64)
    return np.array([frame_to_ms(f, spec.fps) for f in frames], dtype=np.int64)


def _speed_profile(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    v0 = rng.uniform(*spec.onset_speed)
    v1 = rng.uniform(*spec.peak_speed)
    vel = np.full(OUT_FRAMES, v1)
    vel[:ONSET_FRAMES] = v0
    vel[ONSET_FRAMES:RAMP_END] = np.linspace(v0, v1, RAMP_END - ONSET_FRAMES + 2)[1:-1]
    return vel


def generate_pose(spec: SynthSpec) -> tuple[PoseTrack, list[MovementEvent]]:
    rng = np.random.default_rng([spec.seed, 1])
    n_frames = int(round(spec.resolved_duration_s() * spec.fps))
    times = schedule_events(spec, np.random.default_rng([spec.seed, 0]))
    j = JOINTS.index(spec.joint)
    offset = np.zeros((n_frames, 2))
    for t in times:
        f0 = int(round(t / 1000.0 * spec.fps)) + spec.alignment_frame
        vel = _speed_profile(rng, spec)
        ang = rng.uniform(0.0, 2.0 * np.pi)
        path = np.concatenate([np.cumsum(vel), np.full(HOLD_FRAMES, vel.sum()),
                               vel.sum() - np.cumsum(vel[::-1])])
        end = min(f0 + path.size, n_frames)
        seg = path[:end - f0]
        offset[f0:end, 0] += seg * np.cos(ang)
        offset[f0:end, 1] += seg * np.sin(ang)
    xy = np.broadcast_to(HOME_POSE, (n_frames, len(JOINTS), 2)).copy()
    xy[:, j, :] += offset
    xy += rng.normal(0.0, spec.jitter_px, xy.shape)
    conf = np.ones((n_frames, len(JOINTS)))
    for start, length, joint in spec.conf_dropouts:
        conf[start:start + length, JOINTS.index(joint)] = 0.1
    truth = [MovementEvent(int(t), "initiation", spec.joint, "auto") for t in times]
    return PoseTrack(xy, conf, spec.fps), truth


# -- recording ---------------------------------------------------------------------

def _band_mask(freqs: np.ndarray, band) -> np.ndarray:
    return (freqs >= band[0]) & (freqs <= band[1])


def _envelope(n: int, fs: float, times_ms, lead_ms: float, dur_ms: float,
              ramp_ms: float = 50.0) -> np.ndarray:
    env = np.zeros(n)
    length = int(round(dur_ms * fs / 1000.0))
    ramp = max(int(round(ramp_ms * fs / 1000.0)), 1)
    shape = np.ones(length)
    taper = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    shape[:ramp] = taper
    shape[-ramp:] = taper[::-1]
    for t in times_ms:
        s = int(round((t - lead_ms) * fs / 1000.0))
        lo, hi = max(s, 0), min(s + length, n)
        if hi > lo:
            env[lo:hi] = np.maximum(env[lo:hi], shape[lo - s:hi - s])
    return env


def generate_ecog(spec: SynthSpec, event_times_ms) -> dsp.EcogRecording:
    n = int(round(spec.resolved_duration_s() * spec.fs))
    freqs = np.fft.rfftfreq(n, 1.0 / spec.fs)
    pink = 1.0 / np.sqrt(np.maximum(freqs, 1.0))
    pink[0] = 0.0
    gmask = _band_mask(freqs, spec.gamma_band)
    bmask = _band_mask(freqs, spec.beta_band)
    motor = spec.resolved_motor_channels()
    weights = spec.motor_weights or [1.0] * len(motor)
    gains = dict(zip(motor, weights))
    times = list(event_times_ms)
    if spec.signature_prob < 1.0:
        keep = np.random.default_rng([spec.seed, 3]).random(len(times)) < spec.signature_prob
        times = [t for t, k in zip(times, keep) if k]
    env = _envelope(n, spec.fs, times, spec.lead_ms, spec.dur_ms) if motor else None
    out = np.empty((spec.n_channels, n), dtype=np.float32)
    for ch in range(spec.n_channels):
        rng = np.random.default_rng([spec.seed, 2, ch])
        spec_bg = np.fft.rfft(rng.standard_normal(n)) * pink
        x = np.fft.irfft(spec_bg, n)
        scale = spec.background_uv / x.std()
        x *= scale
        w = gains.get(ch, 0.0)
        if w > 0 and spec.snr > 0:
            carrier = np.fft.irfft(np.fft.rfft(rng.standard_normal(n)) * gmask, n)
            carrier /= carrier.std()
            x += spec.snr * w * spec.gamma_gain * spec.background_uv * env * carrier
            depth = min(spec.beta_attenuation * w * spec.snr / (1.0 + spec.snr), 1.0)
            beta_bg = np.fft.irfft(spec_bg * bmask, n) * scale
            x -= depth * env * beta_bg
        out[ch] = x
    return dsp.EcogRecording(out.astype(np.float64), spec.fs,
                             channel_layout(spec.n_channels, spec.grid_rows, spec.grid_cols),
                             frozenset(spec.bad_channels))


def generate_session(spec: SynthSpec, directory: Path | None = None) -> Session:
    """Generate a full session; write it to ``directory`` when given."""
    pose, truth = generate_pose(spec)
    rec = generate_ecog(spec, [e.t_ms for e in truth])
    manifest = {
        "session_id": spec.session_id,
        "fs": spec.fs,
        "fps": spec.fps,
        "n_channels": spec.n_channels,
        "grid": {"rows": spec.grid_rows, "cols": spec.grid_cols},
        "alignment_frame": spec.alignment_frame,
        "day": spec.day,
        "format_version": FORMAT_VERSION,
        "video": {"size": spec.video_size, "noise_sd": spec.video_noise_sd, "seed": spec.seed},
        "synth": {"seed": spec.seed, "snr": spec.snr, "signature_prob": spec.signature_prob,
                  "joint": spec.joint, "motor_channels": spec.resolved_motor_channels()},
    }
    session = Session(manifest, rec, pose, truth)
    if directory is not None:
        save_session(session, Path(directory))
    return session
