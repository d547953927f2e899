"""Coupling-block normalizing flow for multivariate time series.

The model maps a (T, S) recording to a latent of the same shape through a
chain of affine coupling blocks. Each block permutes the signal axis with a
fixed random permutation, splits the signals in half, and lets two
convolutional internal networks predict elementwise scale/translation
coefficients for the opposite half:

    y2 = x2 * exp(clamp(s1)) + t1    with [s1, t1] = g1(x1)
    y1 = x1 * exp(clamp(s2)) + t2    with [s2, t2] = g2(y2)

The scale coefficients pass through a soft clamp (2a/pi)*atan(s/a) so the
effective log-scales stay inside (-a, a), which keeps both directions of the
bijection and the optimization stable. The log-determinant of the Jacobian
is simply the sum of all clamped scale coefficients.

The internal networks are stacks of 1-D convolutions over time (ReLU in
between), so temporal structure is used while the signal axis keeps its
role. The last layer is zero-initialized: a fresh model is an exact identity
up to the signal permutations, with log-determinant 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import serialize
from . import tensor as tt
from .tensor import Tensor


@dataclass
class FlowConfig:
    n_blocks: int = 4
    hidden_ratio: int = 2
    kernel_sizes: tuple[int, ...] = (13, 1, 1)
    dilations: tuple[int, ...] = (2, 1, 1)
    clamp_alpha: float = 3.0
    dtype: str = "float32"

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        self.dilations = tuple(int(d) for d in self.dilations)
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if len(self.kernel_sizes) != len(self.dilations):
            raise ValueError("kernel_sizes and dilations must have equal length")
        if any(k < 1 for k in self.kernel_sizes) or any(d < 1 for d in self.dilations):
            raise ValueError("kernel sizes and dilations must be positive")
        if self.clamp_alpha <= 0:
            raise ValueError("clamp_alpha must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def receptive_field(self) -> int:
        return 1 + sum((k - 1) * d for k, d in zip(self.kernel_sizes, self.dilations))


def soft_clamp(s: Tensor, alpha: float) -> Tensor:
    """Bounded reparameterization (2*alpha/pi) * atan(s/alpha), image (-alpha, alpha)."""
    if alpha <= 0:
        raise ValueError(f"soft_clamp: alpha must be positive, got {alpha}")
    return tt.scale(tt.arctan(tt.scale(s, 1.0 / alpha)), 2.0 * alpha / math.pi)


class InternalNet:
    """Conv stack mapping (B, S/2, T) to scale/translation pairs of the same
    time length: channels S/2 -> r*(S/2) -> ... -> 2*(S/2)."""

    def __init__(self, in_channels: int, config: FlowConfig, rng: np.random.Generator):
        dtype = np.dtype(config.dtype)
        hidden = config.hidden_ratio * in_channels
        out_channels = 2 * in_channels
        widths = [in_channels] + [hidden] * (len(config.kernel_sizes) - 1) + [out_channels]
        self.out_channels = out_channels
        self.dilations = config.dilations
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        n_layers = len(config.kernel_sizes)
        for i, k in enumerate(config.kernel_sizes):
            c_in, c_out = widths[i], widths[i + 1]
            if i == n_layers - 1:
                w = np.zeros((c_out, c_in, k), dtype=dtype)  # identity at init
            else:
                he = math.sqrt(2.0 / (c_in * k))
                w = rng.normal(0.0, he, size=(c_out, c_in, k)).astype(dtype)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True))

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = x
        last = len(self.weights) - 1
        for i, (w, b, dil) in enumerate(zip(self.weights, self.biases, self.dilations)):
            h = tt.conv1d(h, w, b, dilation=dil)
            if i < last:
                h = tt.relu(h)
        half = self.out_channels // 2
        return (tt.slice_channels(h, 0, half),
                tt.slice_channels(h, half, self.out_channels))

    def parameters(self) -> list[Tensor]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params


class CouplingBlock:
    """One permutation + two affine coupling half-steps on (B, S, T) input."""

    def __init__(self, n_signals: int, config: FlowConfig, rng: np.random.Generator):
        self.n_signals = n_signals
        self.alpha = config.clamp_alpha
        self.permutation = rng.permutation(n_signals)
        self.inverse_permutation = np.argsort(self.permutation)
        self.g1 = InternalNet(n_signals // 2, config, rng)
        self.g2 = InternalNet(n_signals // 2, config, rng)

    def forward(self, h: Tensor) -> tuple[Tensor, Tensor]:
        half = self.n_signals // 2
        hp = tt.permute_channels(h, self.permutation)
        x1 = tt.slice_channels(hp, 0, half)
        x2 = tt.slice_channels(hp, half, self.n_signals)
        s1, t1 = self.g1.forward(x1)
        s1 = soft_clamp(s1, self.alpha)
        y2 = tt.add(tt.mul(x2, tt.exp(s1)), t1)
        s2, t2 = self.g2.forward(y2)
        s2 = soft_clamp(s2, self.alpha)
        y1 = tt.add(tt.mul(x1, tt.exp(s2)), t2)
        y = tt.concat_channels(y1, y2)
        logdet = tt.add(tt.sum_all(s1), tt.sum_all(s2))
        return y, logdet

    def inverse(self, y: Tensor) -> Tensor:
        half = self.n_signals // 2
        y1 = tt.slice_channels(y, 0, half)
        y2 = tt.slice_channels(y, half, self.n_signals)
        s2, t2 = self.g2.forward(y2)
        s2 = soft_clamp(s2, self.alpha)
        x1 = tt.mul(tt.sub(y1, t2), tt.exp(tt.scale(s2, -1.0)))
        s1, t1 = self.g1.forward(x1)
        s1 = soft_clamp(s1, self.alpha)
        x2 = tt.mul(tt.sub(y2, t1), tt.exp(tt.scale(s1, -1.0)))
        hp = tt.concat_channels(x1, x2)
        return tt.permute_channels(hp, self.inverse_permutation)

    def parameters(self) -> list[Tensor]:
        return self.g1.parameters() + self.g2.parameters()


class MVTFlowModel:
    """Chain of coupling blocks; a bijection on (T, S) with tractable
    Jacobian log-determinant.

    Construction is fully deterministic given (input_shape, config, seed):
    per-block permutations and He-initialized weights come from one seeded
    generator, final layers start at zero.
    """

    def __init__(self, input_shape: tuple[int, int], config: FlowConfig | None = None,
                 seed: int = 0):
        config = config if config is not None else FlowConfig()
        t_len, n_signals = int(input_shape[0]), int(input_shape[1])
        if n_signals % 2 != 0:
            raise ValueError(
                f"the coupling split needs an even signal count, got S={n_signals}; "
                "pad with a dummy signal (the preprocessor does this automatically)")
        if t_len < 1:
            raise ValueError(f"input length must be positive, got T={t_len}")
        self.input_shape = (t_len, n_signals)
        self.config = config
        self.seed = int(seed)
        self.dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(self.seed)
        self.blocks = [CouplingBlock(n_signals, config, rng)
                       for _ in range(config.n_blocks)]

    # -- forward / inverse ---------------------------------------------------

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Map time-major x of shape (T, S) or (B, T, S) to (z, logdet)."""
        self._check_input(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = tt.reshape(x, (1,) + x.shape)
        h = tt.swap_time_channels(x)
        logdet: Tensor | None = None
        for block in self.blocks:
            h, ld = block.forward(h)
            logdet = ld if logdet is None else tt.add(logdet, ld)
        z = tt.swap_time_channels(h)
        if squeeze:
            z = tt.reshape(z, z.shape[1:])
        return z, logdet

    def inverse(self, z: Tensor) -> Tensor:
        """Invert forward(); mainly a correctness handle for tests."""
        self._check_input(z)
        squeeze = z.ndim == 2
        if squeeze:
            z = tt.reshape(z, (1,) + z.shape)
        h = tt.swap_time_channels(z)
        for block in reversed(self.blocks):
            h = block.inverse(h)
        x = tt.swap_time_channels(h)
        if squeeze:
            x = tt.reshape(x, x.shape[1:])
        return x

    def _check_input(self, x: Tensor) -> None:
        if x.ndim not in (2, 3) or tuple(x.shape[-2:]) != self.input_shape:
            raise ValueError(f"input shape {tuple(x.shape)} does not match model "
                             f"(T, S)={self.input_shape}")
        if x.dtype != self.dtype:
            raise ValueError(f"input dtype {x.dtype} does not match model {self.dtype}")

    # -- parameter access ----------------------------------------------------

    def parameters(self) -> list[Tensor]:
        params = []
        for block in self.blocks:
            params.extend(block.parameters())
        return params

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def named_parameters(self) -> dict[str, Tensor]:
        names = {}
        for bi, block in enumerate(self.blocks):
            for net_name, net in (("g1", block.g1), ("g2", block.g2)):
                for li, (w, b) in enumerate(zip(net.weights, net.biases)):
                    names[f"block{bi}.{net_name}.conv{li}.weight"] = w
                    names[f"block{bi}.{net_name}.conv{li}.bias"] = b
        return names

    @property
    def permutations(self) -> list[np.ndarray]:
        return [block.permutation for block in self.blocks]


def save_model(model: MVTFlowModel, path, extra_meta: dict | None = None,
               extra_arrays: dict | None = None) -> None:
    """Write the model to the shared container format; weight blobs are raw
    little-endian floats in named_parameters() order, permutations live in
    the header. load_model(save_model(m)) reproduces scores bit-exactly."""
    cfg = model.config
    meta = {
        "input_shape": list(model.input_shape),
        "n_blocks": cfg.n_blocks,
        "hidden_ratio": cfg.hidden_ratio,
        "kernel_sizes": list(cfg.kernel_sizes),
        "dilations": list(cfg.dilations),
        "clamp_alpha": cfg.clamp_alpha,
        "dtype": cfg.dtype,
        "seed": model.seed,
        "permutations": [p.tolist() for p in model.permutations],
    }
    if extra_meta:
        meta.update(extra_meta)
    arrays = {name: p.data for name, p in model.named_parameters().items()}
    if extra_arrays:
        arrays.update(extra_arrays)
    serialize.save_container(path, "mvt-flow", meta, arrays)


def load_model(path) -> tuple[MVTFlowModel, dict]:
    """Rebuild a model from a container file; returns (model, header_meta)."""
    kind, meta, arrays = serialize.load_container(path)
    if kind != "mvt-flow":
        raise ValueError(f"{path}: container holds a {kind!r} model, not mvt-flow")
    cfg = FlowConfig(
        n_blocks=meta["n_blocks"],
        hidden_ratio=meta["hidden_ratio"],
        kernel_sizes=tuple(meta["kernel_sizes"]),
        dilations=tuple(meta["dilations"]),
        clamp_alpha=meta["clamp_alpha"],
        dtype=meta["dtype"],
    )
    model = MVTFlowModel(tuple(meta["input_shape"]), cfg, seed=meta["seed"])
    for block, perm in zip(model.blocks, meta["permutations"]):
        block.permutation = np.asarray(perm, dtype=np.int64)
        block.inverse_permutation = np.argsort(block.permutation)
    params = model.named_parameters()
    missing = set(params) - set(arrays)
    if missing:
        raise ValueError(f"{path}: container is missing weights {sorted(missing)}")
    for name, p in params.items():
        arr = arrays[name]
        if arr.shape != p.data.shape:
            raise ValueError(f"{path}: {name} has shape {arr.shape}, "
                             f"expected {p.data.shape}")
        p.data = arr.astype(model.dtype, copy=False)
    return model, meta
