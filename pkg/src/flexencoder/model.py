"""The FlexEncoder network: a symmetric denoising autoencoder over rating rows.

Rows are processed in batches, so a layer computes ``f(A @ W.T + b)`` for an
input block ``A`` of shape (batch, in) and a weight ``W`` of shape (out, in).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal

import numpy as np

from .errors import ConfigError, EmptyMaskError, ShapeError
from .kernels import act_backward, act_forward, masked_sq_sum
from .nn import Activation, RngStream, dropout_mask, noise_mask

if TYPE_CHECKING:
    from .config import ModelConfig
    from .optim import Optimizer

RATING_MIN = 1.0
RATING_MAX = 5.0
RATING_STEP = 0.5

Mode = Literal["train", "eval"]


@dataclass
class Layer:
    W: np.ndarray | None
    b: np.ndarray
    act: Activation | None
    tied_to: int | None = None

    @property
    def out_dim(self) -> int:
        return self.b.shape[0]


class FlexModel:
    """Encoder ``n -> h1 -> ... -> hk`` mirrored by a decoder ``hk -> ... -> n``.

    Every hidden layer uses the same activation; the final decoder layer is
    linear. With ``tied=True`` a decoder layer owns only its bias and reads the
    transpose of the mirror encoder weight, so the two can never drift apart.
    """

    def __init__(
        self,
        n: int,
        hidden: tuple[int, ...] | list[int],
        activation: Activation | None = Activation.SELU,
        *,
        tied: bool = False,
        drop_p: float = 0.0,
        noise_p: float = 0.0,
        rng: RngStream | None = None,
        dtype=np.float32,
    ):
        hidden = tuple(int(h) for h in hidden)
        if not hidden:
            raise ConfigError("hidden_layers: at least one hidden layer is required")
        if len(hidden) > 5:
            raise ConfigError(f"hidden_layers: at most 5 encoder layers, got {len(hidden)}")
        if n < 1 or any(h < 1 for h in hidden):
            raise ConfigError(f"layer sizes must be >= 1, got n={n}, hidden={list(hidden)}")
        for name, p in (("drop_p", drop_p), ("noise_p", noise_p)):
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"{name}: must lie in [0, 1), got {p}")
        self.n = int(n)
        self.hidden = hidden
        self.activation = activation
        self.tied = bool(tied)
        self.drop_p = float(drop_p)
        self.noise_p = float(noise_p)
        self.dtype = np.dtype(dtype)
        rng = rng if rng is not None else RngStream(0)

        dims = self.dims
        k = len(hidden)
        self.encoder: list[Layer] = []
        for i in range(k):
            W = _init_weight(rng, dims[i + 1], dims[i], self.dtype)
            self.encoder.append(Layer(W, np.zeros(dims[i + 1], self.dtype), activation))
        self.decoder: list[Layer] = []
        for j in range(k):
            # decoder layer j mirrors encoder layer k-1-j
            mirror = k - 1 - j
            in_dim, out_dim = dims[mirror + 1], dims[mirror]
            act = activation if j < k - 1 else None
            if self.tied:
                W = None
                tied_to = mirror
            else:
                W = _init_weight(rng, out_dim, in_dim, self.dtype)
                tied_to = None
            self.decoder.append(Layer(W, np.zeros(out_dim, self.dtype), act, tied_to))

    @property
    def dims(self) -> list[int]:
        return [self.n, *self.hidden]

    @property
    def bottleneck(self) -> int:
        return len(self.hidden)

    def layers(self) -> list[Layer]:
        return self.encoder + self.decoder

    def weight(self, layer: Layer) -> np.ndarray:
        if layer.tied_to is not None:
            return self.encoder[layer.tied_to].W.T
        return layer.W

    def layer_dims(self) -> list[tuple[int, int]]:
        """(in, out) for every layer, encoder first."""
        out = []
        for layer in self.layers():
            W = self.weight(layer)
            out.append((W.shape[1], W.shape[0]))
        return out

    def parameters(self) -> dict[str, np.ndarray]:
        """Free parameters by name. Tied decoder weights are not listed."""
        params: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.encoder):
            params[f"encoder.{i}.W"] = layer.W
            params[f"encoder.{i}.b"] = layer.b
        for j, layer in enumerate(self.decoder):
            if layer.W is not None:
                params[f"decoder.{j}.W"] = layer.W
            params[f"decoder.{j}.b"] = layer.b
        return params

    def astype(self, dtype) -> "FlexModel":
        clone = object.__new__(FlexModel)
        clone.__dict__.update(self.__dict__)
        clone.dtype = np.dtype(dtype)
        clone.encoder = [
            Layer(l.W.astype(dtype), l.b.astype(dtype), l.act, l.tied_to) for l in self.encoder
        ]
        clone.decoder = [
            Layer(None if l.W is None else l.W.astype(dtype), l.b.astype(dtype), l.act, l.tied_to)
            for l in self.decoder
        ]
        return clone

    def __repr__(self) -> str:
        arrow = "->".join(str(d) for d in self.dims + self.dims[-2::-1])
        act = self.activation.value if self.activation else "LINEAR"
        return f"FlexModel({arrow}, {act}, tied={self.tied})"


def _init_weight(rng: RngStream, out_dim: int, in_dim: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform((out_dim, in_dim), -bound, bound).astype(dtype)


def build_model(config: "ModelConfig", n: int, rng: RngStream | None = None, dtype=np.float32) -> FlexModel:
    if rng is None:
        rng = RngStream(config.seed).child(0)
    return FlexModel(
        n,
        config.hidden_layers,
        config.activation,
        tied=config.decoder_constraint,
        drop_p=config.drop_prob,
        noise_p=config.noise_prob,
        rng=rng,
        dtype=dtype,
    )


@dataclass
class RowBatch:
    """Dense rows for one step.

    ``mask`` marks entries that count toward the loss. Input entries where the
    mask is zero are treated as missing and never reach the network.
    ``offsets`` holds per-row means when rows are mean-normalized.
    """

    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    offsets: np.ndarray | None = None
    rows: np.ndarray | None = None

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass
class LossReport:
    mmse: float
    observed_count: float
    rmse: float = field(init=False)

    def __post_init__(self):
        self.rmse = float(np.sqrt(self.mmse))


@dataclass
class ForwardTrace:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    q: np.ndarray
    noise: np.ndarray | None = None
    drop: np.ndarray | None = None


def forward(
    model: FlexModel,
    batch: RowBatch | np.ndarray,
    mode: Mode = "eval",
    rng: RngStream | None = None,
    *,
    noise: np.ndarray | None = None,
    drop: np.ndarray | None = None,
) -> ForwardTrace:
    """Run the network on a batch.

    In train mode the input is corrupted by zeroing entries with probability
    ``noise_p`` and the bottleneck output goes through inverted dropout.
    Explicit ``noise``/``drop`` masks override the random ones.
    """
    if isinstance(batch, RowBatch):
        x = batch.x
        if batch.mask is not None:
            x = np.where(batch.mask != 0, x, 0).astype(model.dtype, copy=False)
    else:
        x = np.asarray(batch)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.n:
        raise ShapeError(f"batch width {x.shape[1]} does not match model input width {model.n}")
    x = x.astype(model.dtype, copy=False)

    if mode == "train":
        if noise is None and model.noise_p > 0:
            noise = noise_mask(_need(rng), model.noise_p, x.shape, model.dtype)
        if drop is None and model.drop_p > 0:
            drop = dropout_mask(_need(rng), model.drop_p, (x.shape[0], model.hidden[-1]), model.dtype)
    elif mode != "eval":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    else:
        noise = drop = None

    a = x * noise if noise is not None else x
    inputs, pre = [], []
    k = model.bottleneck
    for idx, layer in enumerate(model.layers()):
        inputs.append(a)
        z = a @ model.weight(layer).T
        z += layer.b
        pre.append(z)
        a = act_forward(layer.act, z) if layer.act is not None else z
        if idx == k - 1 and drop is not None:
            a = a * drop
    return ForwardTrace(inputs, pre, a, noise, drop)


def _need(rng: RngStream | None) -> RngStream:
    if rng is None:
        raise ValueError("train-mode forward with corruption needs an RngStream")
    return rng


def masked_mse(y: np.ndarray, q: np.ndarray, mask: np.ndarray) -> LossReport:
    """Masked mean squared error over the whole batch.

    The denominator is the total number of masked-in entries in the batch.
    """
    if y.shape != q.shape or mask.shape != y.shape:
        raise ShapeError(f"shape mismatch: y {y.shape}, q {q.shape}, mask {mask.shape}")
    sq, count = masked_sq_sum(y, q, mask)
    if count <= 0:
        raise EmptyMaskError("batch has no observed entries")
    return LossReport(sq / count, count)


def backward(model: FlexModel, trace: ForwardTrace, batch: RowBatch) -> dict[str, np.ndarray]:
    """Gradients of ``masked_mse(batch.y, trace.q, batch.mask)`` for every free parameter."""
    y, mask, q = batch.y, batch.mask, trace.q
    if y.shape != q.shape or mask.shape != q.shape:
        raise ShapeError(f"shape mismatch: y {y.shape}, q {q.shape}, mask {mask.shape}")
    count = float(mask.sum(dtype=np.float64))
    if count <= 0:
        raise EmptyMaskError("batch has no observed entries")
    delta = (q - y) * mask
    delta *= q.dtype.type(2.0 / count)

    grads: dict[str, np.ndarray] = {}
    layers = model.layers()
    k = model.bottleneck
    n_enc = len(model.encoder)
    for idx in range(len(layers) - 1, -1, -1):
        layer = layers[idx]
        z = trace.pre[idx]
        # delta holds dL/d(output of layer idx)
        if idx == k - 1 and trace.drop is not None:
            delta = delta * trace.drop
        if layer.act is not None:
            act_backward(layer.act, z, delta)
        a = trace.inputs[idx]
        if layer.tied_to is not None:
            # decoder uses W_enc.T, so its contribution lands transposed on the encoder;
            # a.T @ delta gives that orientation directly, without a strided copy
            dW = a.T @ delta
        else:
            dW = delta.T @ a
        db = delta.sum(axis=0)
        W = model.weight(layer)
        if idx > 0:
            delta = delta @ W
        if idx < n_enc:
            name = f"encoder.{idx}"
            if f"{name}.W" in grads:
                grads[f"{name}.W"] += dW
            else:
                grads[f"{name}.W"] = dW
        else:
            j = idx - n_enc
            name = f"decoder.{j}"
            if layer.tied_to is not None:
                key = f"encoder.{layer.tied_to}.W"
                if key in grads:
                    grads[key] += dW
                else:
                    grads[key] = dW
            else:
                grads[f"{name}.W"] = dW
        grads[f"{name}.b"] = db
    return grads


def round_to_grid(v):
    """Snap to the nearest half step (ties away from zero), clamped to [1, 5]."""
    arr = np.asarray(v)
    twice = arr * 2.0
    snapped = np.sign(twice) * np.floor(np.abs(twice) + 0.5) / 2.0
    out = np.clip(snapped, RATING_MIN, RATING_MAX)
    if np.ndim(v) == 0:
        return float(out)
    return out.astype(arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float64, copy=False)


def train_step(model: FlexModel, batch: RowBatch, opt: "Optimizer", rng: RngStream) -> tuple[LossReport, ForwardTrace]:
    trace = forward(model, batch, "train", rng)
    report = masked_mse(batch.y, trace.q, batch.mask)
    grads = backward(model, trace, batch)
    opt.step(model.parameters(), grads)
    return report, trace


def refeed_targets(q: np.ndarray, rounding: bool, offsets: np.ndarray | None = None) -> np.ndarray:
    target = np.array(q, copy=True)
    if rounding:
        if offsets is not None:
            off = offsets[:, None].astype(target.dtype)
            target = round_to_grid(target + off) - off
        else:
            target = round_to_grid(target)
    return target


def dense_refeed(
    model: FlexModel,
    trace: ForwardTrace,
    batch: RowBatch,
    k: int,
    rounding: bool,
    opt: "Optimizer",
    rng: RngStream,
) -> LossReport | None:
    """Treat the network's own output as fully observed rows for ``k`` extra updates.

    Returns the loss of the last re-fed pass, or None when ``k`` is 0.
    With mean-normalized rows, rounding happens in rating space.
    """
    report = None
    q = trace.q
    for _ in range(k):
        target = refeed_targets(q, rounding, batch.offsets)
        ones = np.ones_like(target)
        refed = RowBatch(target, target, ones, batch.offsets, batch.rows)
        report, tr = train_step(model, refed, opt, rng)
        q = tr.q
    return report
