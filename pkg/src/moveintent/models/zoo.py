"""Model variants built from the nn engine.

Inputs are batched as ``ecog: (B, 5, C, L)`` chunk sequences and
``frames: (B, 5, H, W)`` with one video frame per chunk. Convolution towers
work channels-last internally.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import ConfigError, ShapeError
from ..nn import (
    LayerParams,
    Tensor,
    activation,
    concat,
    conv_forward,
    conv_params,
    dense_forward,
    dense_params,
    dropout,
    lstm_forward,
    lstm_params,
    max_pool,
    no_grad,
)
from ..nn.tensor import sigmoid, transpose
from .config import ModelConfig


def _pooled(n: int, pool: int) -> int:
    return n // pool if n >= pool else n


def early_fusion_channels(n_channels: int, chunk_len: int, size: int) -> int:
    """Image channels needed to tile one ECoG chunk onto ``size x size`` planes."""
    return -(-n_channels * chunk_len // (size * size))


def tile_chunks(ecog: np.ndarray, size: int) -> np.ndarray:
    """Reshape ``(N, C, L)`` chunks into ``(N, k, size, size)`` zero-padded planes."""
    n = ecog.shape[0]
    flat = ecog.reshape(n, -1)
    k = early_fusion_channels(ecog.shape[1], ecog.shape[2], size)
    padded = np.zeros((n, k * size * size))
    padded[:, :flat.shape[1]] = flat
    return padded.reshape(n, k, size, size)


class Model:
    """A trained or freshly initialised network for one variant.

    ``layers`` is ordered; that order defines the checkpoint layout.
    """

    def __init__(self, config: ModelConfig, layers: "OrderedDict[str, LayerParams]"):
        self.config = config
        self.layers = layers

    @property
    def variant(self) -> str:
        return self.config.variant

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, layer in self.layers.items():
            if layer.weights is not None:
                out[f"{name}.weights"] = layer.weights
            if layer.biases is not None:
                out[f"{name}.biases"] = layer.biases
        return out

    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers.values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in self.parameters().items():
            v.data = snap[k].copy()

    # -- towers ---------------------------------------------------------
    def _conv_stack(self, x: Tensor, prefix: str, n: int, acts: dict | None = None) -> Tensor:
        for i in range(1, n + 1):
            name = f"{prefix}{i}"
            x = activation(conv_forward(x, self.layers[name]), "relu")
            if acts is not None:
                acts[name] = x
            if self.config.pool > 1:
                x = max_pool(x, self.config.pool)
        return x

    def _ecog_tower(self, ecog: Tensor, acts=None) -> Tensor:
        b, t, c, length = ecog.shape
        x = transpose(ecog.reshape(b * t, c, length), (0, 2, 1))
        x = self._conv_stack(x, "ecog_conv", 3, acts)
        return x.reshape(b, t, -1)

    def _video_tower(self, frames: Tensor, prefix="video_conv", acts=None) -> Tensor:
        b, t = frames.shape[:2]
        # channels-last: (B*T, H, W, planes)
        x = frames.reshape(b * t, *frames.shape[2:]) if frames.ndim == 5 else \
            frames.reshape(b * t, *frames.shape[2:], 1)
        x = self._conv_stack(x, prefix, 4, acts)
        return x.reshape(b, t, -1)

    def _grid_tower(self, ecog: Tensor, acts=None) -> Tensor:
        cfg = self.config
        b, t, c, length = ecog.shape
        rows, cols = cfg.grid_rows, cfg.grid_cols
        x = ecog[:, :, :rows * cols, :].reshape(b * t, rows, cols, length, 1)
        x = self._conv_stack(x, "grid_conv", len(cfg.conv3d_filters), acts)
        return x.reshape(b, t, -1)

    def _head(self, feats: Tensor, train: bool, rng, acts=None) -> Tensor:
        """FC + dropout per timestep, LSTM over time, sigmoid output."""
        h = activation(dense_forward(feats, self.layers["fc_merge"]), "relu")
        if acts is not None:
            acts["fc_merge"] = h
        h = dropout(h, self.config.dropout, "train" if train else "eval", rng)
        h = lstm_forward(h, self.layers["lstm"])
        return dense_forward(h, self.layers["fc_out"])

    def _flat_head(self, feats: Tensor, train: bool, rng, acts=None) -> Tensor:
        b = feats.shape[0]
        h = activation(dense_forward(feats.reshape(b, -1), self.layers["fc_merge"]), "relu")
        if acts is not None:
            acts["fc_merge"] = h
        h = dropout(h, self.config.dropout, "train" if train else "eval", rng)
        return dense_forward(h, self.layers["fc_out"])

    # -- forward ------------------------------------------------------------
    def logits(self, ecog, frames, train: bool = False, rng=None, acts: dict | None = None) -> Tensor:
        cfg = self.config
        ecog = ecog if isinstance(ecog, Tensor) else Tensor(ecog)
        frames = frames if isinstance(frames, Tensor) else Tensor(frames)
        b = ecog.shape[0]
        want = (cfg.n_chunks, cfg.n_channels, cfg.chunk_len)
        if ecog.ndim != 4 or ecog.shape[1:] != want:
            raise ShapeError(f"ecog batch must be (B, {want[0]}, {want[1]}, {want[2]}), got {ecog.shape}")
        size = cfg.input_frame_size
        if frames.shape != (b, cfg.n_chunks, size, size):
            raise ShapeError(f"frames batch must be (B, {cfg.n_chunks}, {size}, {size}), got {frames.shape}")
        v = cfg.variant
        if v == "late_fusion":
            feats = concat([self._ecog_tower(ecog, acts), self._video_tower(frames, acts=acts)], axis=-1)
            out = self._head(feats, train, rng, acts)
        elif v == "ecog_only":
            out = self._head(self._ecog_tower(ecog, acts), train, rng, acts)
        elif v == "video_only":
            out = self._head(self._video_tower(frames, acts=acts), train, rng, acts)
        elif v == "early_fusion":
            planes = tile_chunks(ecog.data.reshape(b * cfg.n_chunks, cfg.n_channels, cfg.chunk_len), size)
            planes = Tensor(planes.transpose(0, 2, 3, 1).reshape(b, cfg.n_chunks, size, size, -1))
            stacked = concat([frames.reshape(b, cfg.n_chunks, size, size, 1), planes], axis=-1)
            out = self._head(self._video_tower(stacked, "early_conv", acts), train, rng, acts)
        elif v == "lstm_only":
            seq = ecog.reshape(b, cfg.n_chunks, -1)
            out = dense_forward(lstm_forward(seq, self.layers["lstm"]), self.layers["fc_out"])
        elif v == "conv1d_nolstm":
            out = self._flat_head(self._ecog_tower(ecog, acts), train, rng, acts)
        elif v == "conv3d_nolstm":
            out = self._flat_head(self._grid_tower(ecog, acts), train, rng, acts)
        else:
            raise ConfigError(f"variant {v!r} has no network forward pass")
        return out.reshape(b)

    def forward(self, ecog, frames, train: bool = False, rng=None) -> Tensor:
        """Probability of movement for each sample in the batch."""
        return sigmoid(self.logits(ecog, frames, train, rng))

    def predict_proba(self, ecog: np.ndarray, frames: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = []
        with no_grad():
            for i in range(0, ecog.shape[0], batch_size):
                out.append(self.forward(ecog[i:i + batch_size], frames[i:i + batch_size]).data)
        return np.concatenate(out) if out else np.zeros(0)


class NaiveAverage:
    """Mean of the sigmoid outputs of separately trained ECoG-only and video-only models."""

    variant = "naive_average"

    def __init__(self, config: ModelConfig, ecog: Model, video: Model):
        self.config = config
        self.parts = {"ecog": ecog, "video": video}

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for key, part in self.parts.items():
            out.update({f"{key}/{k}": v for k, v in part.parameters().items()})
        return out

    def n_params(self) -> int:
        return sum(p.n_params() for p in self.parts.values())

    def forward(self, ecog, frames, train: bool = False, rng=None) -> Tensor:
        pe = self.parts["ecog"].forward(ecog, frames, train, rng)
        pv = self.parts["video"].forward(ecog, frames, train, rng)
        return (pe + pv) * 0.5

    def predict_proba(self, ecog, frames, batch_size: int = 64) -> np.ndarray:
        return naive_average(self.parts["ecog"].predict_proba(ecog, frames, batch_size),
                             self.parts["video"].predict_proba(ecog, frames, batch_size))


def naive_average(p_ecog, p_video):
    return (np.asarray(p_ecog, dtype=np.float64) + np.asarray(p_video, dtype=np.float64)) / 2.0


def build_model(config: ModelConfig):
    """Initialise a model for ``config.variant`` with Glorot weights from ``config.seed``."""
    v = config.variant
    if v == "svm_spectral":
        raise ConfigError("svm_spectral is trained with models.svm, not built as a network")
    if v == "naive_average":
        e = build_model(config.model_copy(update={"variant": "ecog_only"}))
        vid = build_model(config.model_copy(update={"variant": "video_only", "seed": config.seed + 1}))
        return NaiveAverage(config, e, vid)
    if v == "conv3d_nolstm":
        min_r, min_c = config.conv3d_min_grid
        if config.grid_rows < min_r or config.grid_cols < min_c:
            raise ConfigError(
                f"conv3d needs an electrode grid of at least {min_r}x{min_c}; "
                f"got {config.grid_rows}x{config.grid_cols}"
            )
        if config.grid_rows * config.grid_cols > config.n_channels:
            raise ConfigError("grid is larger than the channel count")

    rng = np.random.default_rng(config.seed)
    layers: OrderedDict[str, LayerParams] = OrderedDict()
    pool = config.pool
    size = config.input_frame_size

    def add_ecog_tower() -> int:
        c, length = config.n_channels, config.chunk_len
        for i, (f, k) in enumerate(zip(config.ecog_filters, config.ecog_kernels), start=1):
            layers[f"ecog_conv{i}"] = conv_params("conv1d", c, f, k, rng)
            length = length - k + 1
            if length < 1:
                raise ConfigError("ECoG kernels are longer than the chunk")
            length = _pooled(length, pool) if pool > 1 else length
            c = f
        return c * length

    def add_video_tower(prefix: str, in_ch: int) -> int:
        c, s = in_ch, size
        for i, f in enumerate(config.video_filters, start=1):
            layers[f"{prefix}{i}"] = conv_params("conv2d", c, f, config.video_kernel, rng, padding="same")
            s = _pooled(s, pool) if pool > 1 else s
            c = f
        return c * s * s

    def add_grid_tower() -> int:
        c = 1
        dims = [config.grid_rows, config.grid_cols, config.chunk_len]
        for i, (f, k) in enumerate(zip(config.conv3d_filters, config.conv3d_kernels), start=1):
            layers[f"grid_conv{i}"] = conv_params("conv3d", c, f, tuple(k), rng, padding="same")
            dims = [_pooled(d, pool) if pool > 1 else d for d in dims]
            c = f
        return c * int(np.prod(dims))

    def add_head(n_in: int) -> None:
        layers["fc_merge"] = dense_params(n_in, config.fc_units, rng)
        layers["lstm"] = lstm_params(config.fc_units, config.lstm_units, rng, config.forget_bias)
        layers["fc_out"] = dense_params(config.lstm_units, 1, rng)

    if v == "late_fusion":
        add_head(add_ecog_tower() + add_video_tower("video_conv", 1))
    elif v == "ecog_only":
        add_head(add_ecog_tower())
    elif v == "video_only":
        add_head(add_video_tower("video_conv", 1))
    elif v == "early_fusion":
        k = early_fusion_channels(config.n_channels, config.chunk_len, size)
        add_head(add_video_tower("early_conv", 1 + k))
    elif v == "lstm_only":
        layers["lstm"] = lstm_params(config.n_channels * config.chunk_len, config.lstm_units, rng,
                                     config.forget_bias)
        layers["fc_out"] = dense_params(config.lstm_units, 1, rng)
    elif v in ("conv1d_nolstm", "conv3d_nolstm"):
        per_chunk = add_ecog_tower() if v == "conv1d_nolstm" else add_grid_tower()
        layers["fc_merge"] = dense_params(per_chunk * config.n_chunks, config.fc_units, rng)
        layers["fc_out"] = dense_params(config.fc_units, 1, rng)
    else:  # pragma: no cover - guarded by the Literal type
        raise ConfigError(f"unknown variant {v!r}")
    return Model(config, layers)


def config_for(samples, variant: str, seed: int = 0, **overrides) -> ModelConfig:
    """ModelConfig whose input geometry matches a SampleSet."""
    rows, cols = samples.grid
    return ModelConfig(
        variant=variant,
        n_channels=samples.n_channels,
        chunk_len=samples.window_len // 5,
        frame_size=samples.frame_size,
        grid_rows=rows,
        grid_cols=cols,
        seed=seed,
        **overrides,
    )
