"""Skeleton frame rendering and frame crop/resize transforms."""

from __future__ import annotations

import numpy as np

SOURCE_SIZE = (640, 480)


class SkeletonVideo:
    """Renders each pose frame as gaussian dots on a blank square image.

    Pixel noise is drawn from a generator keyed by ``(seed, frame)`` so any
    frame can be rendered independently and reproducibly.
    """

    def __init__(self, xy: np.ndarray, size: int = 32, noise_sd: float = 0.0, seed: int = 0,
                 dot_sigma: float = 0.8, source_size=SOURCE_SIZE):
        self.xy = np.asarray(xy, dtype=np.float64)
        self.size = int(size)
        self.noise_sd = float(noise_sd)
        self.seed = int(seed)
        self.dot_sigma = dot_sigma
        self.scale = np.array([self.size / source_size[0], self.size / source_size[1]])
        self._grid = np.arange(self.size) + 0.5

    def __len__(self) -> int:
        return self.xy.shape[0]

    def __getitem__(self, frame: int) -> np.ndarray:
        if not 0 <= frame < len(self):
            raise IndexError(f"frame {frame} outside video of {len(self)} frames")
        pts = self.xy[frame] * self.scale
        gx = np.exp(-0.5 * ((self._grid[None, :] - pts[:, :1]) / self.dot_sigma) ** 2)
        gy = np.exp(-0.5 * ((self._grid[None, :] - pts[:, 1:]) / self.dot_sigma) ** 2)
        img = np.einsum("jr,jc->rc", gy, gx)
        if self.noise_sd > 0:
            rng = np.random.default_rng([self.seed, int(frame)])
            img = img + rng.normal(0.0, self.noise_sd, img.shape)
        return img

    def frames(self, indices) -> np.ndarray:
        return np.stack([self[int(i)] for i in indices])


def center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[-2:]
    if size > min(h, w):
        raise ValueError(f"crop {size} exceeds image {h}x{w}")
    top, left = (h - size) // 2, (w - size) // 2
    return img[..., top:top + size, left:left + size]


def random_crop(img: np.ndarray, size: int, rng) -> np.ndarray:
    h, w = img.shape[-2:]
    if size > min(h, w):
        raise ValueError(f"crop {size} exceeds image {h}x{w}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[..., top:top + size, left:left + size]


def resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of the last two axes (pixel-centre aligned)."""
    h, w = img.shape[-2:]
    ys = np.clip((np.arange(height) + 0.5) * h / height - 0.5, 0, h - 1)
    xs = np.clip((np.arange(width) + 0.5) * w / width - 0.5, 0, w - 1)
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    wy, wx = (ys - y0)[:, None], (xs - x0)[None, :]
    a = img[..., y0[:, None], x0[None, :]]
    b = img[..., y0[:, None], x1[None, :]]
    c = img[..., y1[:, None], x0[None, :]]
    d = img[..., y1[:, None], x1[None, :]]
    return (a * (1 - wx) + b * wx) * (1 - wy) + (c * (1 - wx) + d * wx) * wy


def standardize(img: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance over the last two axes; flat images are only centred."""
    img = np.asarray(img, dtype=np.float64)
    mu = img.mean(axis=(-2, -1), keepdims=True)
    sd = img.std(axis=(-2, -1), keepdims=True)
    return (img - mu) / np.where(sd > 0, sd, 1.0)
