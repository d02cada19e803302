import numpy as np
import pytest

from moveintent.nn import Tensor


def numeric_grad(f, arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + eps
        hi = f()
        arr[i] = orig - eps
        lo = f()
        arr[i] = orig
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def weighted_sum(y: Tensor, w: np.ndarray) -> Tensor:
    return (y * Tensor(w)).sum()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_samples(n=40, channels=4, fs=100.0, frame_size=8, separable=True, seed=0,
                 day=2, grid=(2, 2)):
    """Small SampleSet: 1-s windows at ``fs`` with a 100 ms margin.

    Move samples carry a 20 Hz burst on channel 0 and a bright frame patch.
    """
    from moveintent.dataset import SampleSet

    rng = np.random.default_rng(seed)
    margin = int(round(0.1 * fs))
    wlen = int(round(fs))
    labels = np.arange(n) % 2
    t = np.arange(wlen + 2 * margin) / fs
    ecog = rng.normal(size=(n, channels, wlen + 2 * margin))
    frames = rng.normal(0, 0.1, size=(n, 5, frame_size, frame_size))
    if separable:
        ecog[labels == 1, 0] += 3 * np.sin(2 * np.pi * 20 * t)
        frames[labels == 1, :, :frame_size // 2, :frame_size // 2] += 1.0
    return SampleSet(
        ecog=ecog.astype(np.float32), frames=frames.astype(np.float32),
        labels=labels.astype(np.int8), days=np.full(n, day), t_ms=np.arange(n) * 5000 + 10000,
        session_ids=np.array(["s"] * n, dtype=object),
        window_start=(np.arange(n) * 5000 + 9500) * int(fs) // 1000,
        neigh_start=np.zeros(n, dtype=np.int64), condition="det", margin=margin, fs=fs,
        channel_meta=[(i // grid[1], i % grid[1]) for i in range(channels)], grid=grid,
    )


SMALL = dict(ecog_filters=(4, 4, 8), ecog_kernels=(3, 3, 3), video_filters=(2, 2, 4, 4),
             fc_units=8, lstm_units=4, conv3d_filters=(2, 2, 2),
             conv3d_kernels=((2, 2, 3), (2, 2, 3), (2, 2, 3)), conv3d_min_grid=(2, 2))
