"""Small fully-convolutional network that restores sky regions directly.

Architecture: a 3->16 stem convolution, three feature-extraction units of
three 16->16 convolutions each (all 3x3, PReLU), four parallel fusion
branches with 1x1 / 3x3 / 5x5 / 7x7 kernels (16 maps each, PReLU) applied
to the last unit's output, channel concatenation to 64 maps, and a linear
1x1 head back to RGB. Every convolution is stride 1 with zero same-padding
so the output keeps the input size.

Forward, analytic gradients, SGD training, and tiled inference are all
implemented on plain numpy arrays (images channels-last, internals
channels-first).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CHECKPOINT_MAGIC = b"DHZN1"

STEM_CHANNELS = 16
BRANCH_KERNELS = (1, 3, 5, 7)
UNIT_COUNT = 3
UNIT_DEPTH = 3
CONCAT_CHANNELS = STEM_CHANNELS * len(BRANCH_KERNELS)
DEFAULT_PRELU_SLOPE = 0.25

# stem + 9 unit convs widen the receptive field by 1 each, the widest
# fusion branch by 3; tiled inference needs overlap >= this
RECEPTIVE_RADIUS = UNIT_COUNT * UNIT_DEPTH + 1 + (max(BRANCH_KERNELS) - 1) // 2


class NumericError(ArithmeticError):
    """Raised when a non-finite value shows up in activations or losses."""


class CheckpointError(ValueError):
    """Raised for malformed checkpoint files."""


@dataclass
class ConvLayer:
    """One convolution: weights (f, f, in, out), per-output bias, and
    optional per-output PReLU slopes (None = linear layer)."""

    weights: np.ndarray
    bias: np.ndarray
    prelu_slopes: np.ndarray | None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 4 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weights must be (f, f, in, out), got {w.shape}")
        if w.shape[0] % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {w.shape[0]}")
        b = np.asarray(self.bias, dtype=np.float64)
        if b.shape != (w.shape[3],):
            raise ValueError(f"bias shape {b.shape} does not match {w.shape[3]} outputs")
        self.weights = w
        self.bias = b
        if self.prelu_slopes is not None:
            a = np.asarray(self.prelu_slopes, dtype=np.float64)
            if a.shape != (w.shape[3],):
                raise ValueError(
                    f"prelu_slopes shape {a.shape} does not match {w.shape[3]} outputs"
                )
            if not np.isfinite(a).all():
                raise ValueError("prelu_slopes must be finite")
            self.prelu_slopes = a

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[3]


@dataclass
class NetworkSpec:
    """The full parameter set; construction validates the architecture."""

    stem: ConvLayer
    units: tuple[tuple[ConvLayer, ...], ...]
    fusion_branches: tuple[ConvLayer, ...]
    head: ConvLayer

    def __post_init__(self):
        self.units = tuple(tuple(u) for u in self.units)
        self.fusion_branches = tuple(self.fusion_branches)
        _expect(self.stem, 3, 3, STEM_CHANNELS, True, "stem")
        if len(self.units) != UNIT_COUNT or any(len(u) != UNIT_DEPTH for u in self.units):
            raise ValueError(
                f"expected {UNIT_COUNT} units of {UNIT_DEPTH} layers, got "
                f"{[len(u) for u in self.units]}"
            )
        for ui, unit in enumerate(self.units, 1):
            for ci, layer in enumerate(unit, 1):
                _expect(layer, 3, STEM_CHANNELS, STEM_CHANNELS, True, f"unit{ui}.conv{ci}")
        kernels = tuple(layer.kernel_size for layer in self.fusion_branches)
        if kernels != BRANCH_KERNELS:
            raise ValueError(f"fusion branch kernels must be {BRANCH_KERNELS}, got {kernels}")
        for layer in self.fusion_branches:
            _expect(layer, layer.kernel_size, STEM_CHANNELS, STEM_CHANNELS, True,
                    f"fusion.k{layer.kernel_size}")
        _expect(self.head, 1, CONCAT_CHANNELS, 3, False, "head")


def _expect(layer: ConvLayer, f: int, cin: int, cout: int, prelu_: bool, name: str):
    if (layer.kernel_size, layer.in_channels, layer.out_channels) != (f, cin, cout):
        raise ValueError(
            f"{name} must be {f}x{f} {cin}->{cout}, got "
            f"{layer.kernel_size}x{layer.kernel_size} "
            f"{layer.in_channels}->{layer.out_channels}"
        )
    if (layer.prelu_slopes is not None) != prelu_:
        kind = "PReLU" if prelu_ else "linear"
        raise ValueError(f"{name} must be {kind}")


def iter_layers(net: NetworkSpec):
    """Yield (name, layer) in declaration order."""
    yield "stem", net.stem
    for ui, unit in enumerate(net.units, 1):
        for ci, layer in enumerate(unit, 1):
            yield f"unit{ui}.conv{ci}", layer
    for layer in net.fusion_branches:
        yield f"fusion.k{layer.kernel_size}", layer
    yield "head", net.head


def parameter_count(net: NetworkSpec) -> int:
    total = 0
    for _, layer in iter_layers(net):
        total += layer.weights.size + layer.bias.size
        if layer.prelu_slopes is not None:
            total += layer.prelu_slopes.size
    return total


def init_network(seed: int = 0) -> NetworkSpec:
    """Noisy channel-cycling passthrough initialization.

    Every convolution gets fan-in-scaled Gaussian noise at a quarter of
    the usual He magnitude plus a unit center tap that cycles through the
    input channels, so the untrained network is close to an identity map
    and training only has to learn the residual correction. (A pure
    fan-in Gaussian start leaves this depth too far from any useful
    optimum to train at practical step sizes.) Biases start at zero and
    PReLU slopes at 0.25.
    """
    rng = np.random.default_rng(seed)

    def make(f, cin, cout, slopes=True):
        std = 0.25 * np.sqrt(2.0 / (f * f * cin))
        weights = rng.standard_normal((f, f, cin, cout)) * std
        center = (f - 1) // 2
        for o in range(cout):
            weights[center, center, o % cin, o] += 1.0
        return ConvLayer(
            weights=weights,
            bias=np.zeros(cout),
            prelu_slopes=np.full(cout, DEFAULT_PRELU_SLOPE) if slopes else None,
        )

    return NetworkSpec(
        stem=make(3, 3, STEM_CHANNELS),
        units=tuple(
            tuple(make(3, STEM_CHANNELS, STEM_CHANNELS) for _ in range(UNIT_DEPTH))
            for _ in range(UNIT_COUNT)
        ),
        fusion_branches=tuple(make(k, STEM_CHANNELS, STEM_CHANNELS) for k in BRANCH_KERNELS),
        head=make(1, CONCAT_CHANNELS, 3, slopes=False),
    )


# ---------------------------------------------------------------------------
# channels-first primitives
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, f: int) -> np.ndarray:
    """(C, H, W) -> (C * f * f, H * W) patch matrix for same-padding."""
    c, h, w = x.shape
    p = (f - 1) // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (f, f), axis=(1, 2))  # (C, H, W, f, f)
    return win.transpose(0, 3, 4, 1, 2).reshape(c * f * f, h * w)


def _kernel_matrix(layer: ConvLayer, dtype=np.float64) -> np.ndarray:
    # rows ordered (out), columns ordered (in, fy, fx) to match _im2col
    return np.ascontiguousarray(
        layer.weights.transpose(3, 2, 0, 1).reshape(layer.out_channels, -1), dtype=dtype
    )


def _conv_chw(
    x: np.ndarray,
    layer: ConvLayer,
    w2: np.ndarray | None = None,
    cols_out: list | None = None,
) -> np.ndarray:
    c, h, w = x.shape
    if c != layer.in_channels:
        raise ValueError(
            f"input has {c} channels, layer expects {layer.in_channels}"
        )
    if w2 is None:
        w2 = _kernel_matrix(layer, x.dtype)
    f = layer.kernel_size
    cols = x.reshape(c, h * w) if f == 1 else _im2col(x, f)
    if cols_out is not None:
        cols_out.append(cols)
    out = w2 @ cols
    out += layer.bias.astype(x.dtype)[:, None]
    return out.reshape(layer.out_channels, h, w)


def _prelu_chw(x: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, slopes.astype(x.dtype)[:, None, None] * x)


def conv2d(input_tensor: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Stride-1 same-padded cross-correlation with per-channel bias.

    ``input_tensor`` is (H, W, C_in); the result is (H, W, C_out) with the
    spatial size preserved. No activation is applied.
    """
    x = np.asarray(input_tensor, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"input must be (H, W, C), got {x.shape}")
    out = _conv_chw(x.transpose(2, 0, 1), layer)
    return out.transpose(1, 2, 0)


def prelu(x: np.ndarray, slopes: Sequence[float]) -> np.ndarray:
    """Parametric rectifier ``max(x, 0) + a * min(0, x)`` per channel
    (channels on the last axis)."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(slopes, dtype=np.float64)
    if x.ndim != 3 or a.shape != (x.shape[2],):
        raise ValueError(
            f"need (H, W, C) input and C slopes, got {x.shape} and {a.shape}"
        )
    return np.maximum(x, 0.0) + a * np.minimum(x, 0.0)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _forward_chw(net: NetworkSpec, x: np.ndarray, trace: dict | None = None) -> np.ndarray:
    trunk = [net.stem] + [layer for unit in net.units for layer in unit]
    h = x
    if trace is not None:
        trace["trunk_in"] = []
        trace["trunk_pre"] = []
        trace["trunk_cols"] = []
        trace["branch_cols"] = []
        trace["head_cols"] = []
    for layer in trunk:
        if trace is not None:
            trace["trunk_in"].append(h)
        z = _conv_chw(h, layer, cols_out=None if trace is None else trace["trunk_cols"])
        if trace is not None:
            trace["trunk_pre"].append(z)
        h = _prelu_chw(z, layer.prelu_slopes)
    branch_outs = []
    if trace is not None:
        trace["trunk_out"] = h
        trace["branch_pre"] = []
    for layer in net.fusion_branches:
        z = _conv_chw(h, layer, cols_out=None if trace is None else trace["branch_cols"])
        if trace is not None:
            trace["branch_pre"].append(z)
        branch_outs.append(_prelu_chw(z, layer.prelu_slopes))
    cat = np.concatenate(branch_outs, axis=0)
    if trace is not None:
        trace["concat"] = cat
    return _conv_chw(cat, net.head, cols_out=None if trace is None else trace["head_cols"])


def _locate_nonfinite(net: NetworkSpec, x: np.ndarray) -> str:
    trunk_names = ["stem"] + [
        f"unit{ui}.conv{ci}"
        for ui in range(1, UNIT_COUNT + 1)
        for ci in range(1, UNIT_DEPTH + 1)
    ]
    h = x
    for name, layer in zip(trunk_names, [net.stem] + [l for u in net.units for l in u]):
        h = _prelu_chw(_conv_chw(h, layer), layer.prelu_slopes)
        if not np.isfinite(h).all():
            return name
    for layer in net.fusion_branches:
        z = _prelu_chw(_conv_chw(h, layer), layer.prelu_slopes)
        if not np.isfinite(z).all():
            return f"fusion.k{layer.kernel_size}"
    return "head"


def forward(net: NetworkSpec, hazy: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Run the network on an (H, W, 3) image; output has the same shape.

    The result is clamped to [0, 1] unless ``clamp=False`` (training and
    gradient checks work on the raw linear head output).
    """
    x = np.asarray(hazy, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"input must be (H, W, 3), got {x.shape}")
    out = _forward_chw(net, x.transpose(2, 0, 1))
    if not np.isfinite(out).all():
        raise NumericError(
            f"non-finite activation first appears after layer "
            f"{_locate_nonfinite(net, x.transpose(2, 0, 1))}"
        )
    out = out.transpose(1, 2, 0)
    return np.clip(out, 0.0, 1.0) if clamp else out


def _conv_backward(
    x: np.ndarray,
    layer: ConvLayer,
    grad_out: np.ndarray,
    cols: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a same-padded conv: (d_input, d_weights, d_bias)."""
    c, h, w = x.shape
    f = layer.kernel_size
    gy = grad_out.reshape(layer.out_channels, h * w)
    if cols is None:
        cols = x.reshape(c, h * w) if f == 1 else _im2col(x, f)
    dw2 = gy @ cols.T  # (out, in * f * f)
    dw = dw2.reshape(layer.out_channels, c, f, f).transpose(2, 3, 1, 0)
    db = gy.sum(axis=1)
    w2 = _kernel_matrix(layer, x.dtype)
    dcols = w2.T @ gy  # (in * f * f, H * W)
    if f == 1:
        return dcols.reshape(c, h, w), dw, db
    p = (f - 1) // 2
    dxp = np.zeros((c, h + 2 * p, w + 2 * p))
    dcols = dcols.reshape(c, f, f, h, w)
    for ci in range(c):
        for fy in range(f):
            for fx in range(f):
                dxp[ci, fy : fy + h, fx : fx + w] += dcols[ci, fy, fx]
    return dxp[:, p : p + h, p : p + w], dw, db


def _prelu_backward(
    pre: np.ndarray, slopes: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    dpre = grad_out * np.where(pre > 0, 1.0, slopes[:, None, None])
    dslopes = (grad_out * np.minimum(pre, 0.0)).sum(axis=(1, 2))
    return dpre, dslopes


def backward(net: NetworkSpec, hazy: np.ndarray, grad_out: np.ndarray) -> NetworkSpec:
    """Analytic parameter gradients for the raw (unclamped) forward pass.

    ``grad_out`` is the loss gradient at the head output, shaped like the
    (H, W, 3) output. Returns a NetworkSpec-shaped container whose arrays
    are the gradients of the corresponding parameters.
    """
    x = np.asarray(hazy, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"input must be (H, W, 3), got {x.shape}")
    if g.shape != x.shape:
        raise ValueError(f"grad_out shape {g.shape} does not match input {x.shape}")
    trace: dict = {}
    _forward_chw(net, x.transpose(2, 0, 1), trace)

    gcat, dw_head, db_head = _conv_backward(
        trace["concat"], net.head, g.transpose(2, 0, 1), cols=trace["head_cols"][0]
    )
    head_grad = ConvLayer(dw_head, db_head, None)

    gtrunk = np.zeros_like(trace["trunk_out"])
    branch_grads = []
    for bi, layer in enumerate(net.fusion_branches):
        gslice = gcat[bi * STEM_CHANNELS : (bi + 1) * STEM_CHANNELS]
        dpre, dslopes = _prelu_backward(trace["branch_pre"][bi], layer.prelu_slopes, gslice)
        dx, dw, db = _conv_backward(
            trace["trunk_out"], layer, dpre, cols=trace["branch_cols"][bi]
        )
        gtrunk += dx
        branch_grads.append(ConvLayer(dw, db, dslopes))

    trunk = [net.stem] + [layer for unit in net.units for layer in unit]
    trunk_grads: list[ConvLayer] = [None] * len(trunk)  # type: ignore[list-item]
    g_up = gtrunk
    for i in range(len(trunk) - 1, -1, -1):
        layer = trunk[i]
        dpre, dslopes = _prelu_backward(trace["trunk_pre"][i], layer.prelu_slopes, g_up)
        g_up, dw, db = _conv_backward(
            trace["trunk_in"][i], layer, dpre, cols=trace["trunk_cols"][i]
        )
        trunk_grads[i] = ConvLayer(dw, db, dslopes)

    return NetworkSpec(
        stem=trunk_grads[0],
        units=tuple(
            tuple(trunk_grads[1 + u * UNIT_DEPTH + i] for i in range(UNIT_DEPTH))
            for u in range(UNIT_COUNT)
        ),
        fusion_branches=tuple(branch_grads),
        head=head_grad,
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float
    epochs: int
    momentum: float = 0.9
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def mse_loss(output: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to the output."""
    diff = output - target
    return float((diff * diff).mean()), 2.0 * diff / diff.size


def _clone(net: NetworkSpec) -> NetworkSpec:
    def cl(layer: ConvLayer) -> ConvLayer:
        return ConvLayer(
            layer.weights.copy(),
            layer.bias.copy(),
            None if layer.prelu_slopes is None else layer.prelu_slopes.copy(),
        )

    return NetworkSpec(
        stem=cl(net.stem),
        units=tuple(tuple(cl(l) for l in unit) for unit in net.units),
        fusion_branches=tuple(cl(l) for l in net.fusion_branches),
        head=cl(net.head),
    )


def _param_arrays(net: NetworkSpec) -> list[np.ndarray]:
    arrays = []
    for _, layer in iter_layers(net):
        arrays.append(layer.weights)
        arrays.append(layer.bias)
        if layer.prelu_slopes is not None:
            arrays.append(layer.prelu_slopes)
    return arrays


def train(
    net: NetworkSpec,
    dataset: Sequence[tuple[np.ndarray, np.ndarray]],
    config: TrainConfig,
    groups: Sequence[int] | None = None,
) -> tuple[NetworkSpec, list[dict]]:
    """Minibatch SGD with momentum on MSE between forward(hazy) and clear.

    The dataset is split 6:1 into train/validation by a seeded permutation
    (fewer than 7 pairs train on everything). ``groups`` assigns each pair
    a group id; all pairs of one group land on the same side of the split,
    which keeps augmented variants of one base image out of the validation
    set. Returns the trained network and a per-epoch history of
    train/validation losses. Deterministic for a fixed seed.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    if groups is not None and len(groups) != len(dataset):
        raise ValueError(f"got {len(groups)} group ids for {len(dataset)} pairs")
    shape = np.asarray(dataset[0][0]).shape
    for hazy, clear in dataset:
        if np.asarray(hazy).shape != shape or np.asarray(clear).shape != shape:
            raise ValueError("all patches must share one shape")
    pairs = [
        (np.asarray(h, dtype=np.float64), np.asarray(c, dtype=np.float64))
        for h, c in dataset
    ]
    rng = np.random.default_rng(config.seed)
    if groups is None:
        groups = list(range(len(pairs)))
    members: dict[int, list[int]] = {}
    for i, g in enumerate(groups):
        members.setdefault(int(g), []).append(i)
    group_ids = list(members)
    group_order = [group_ids[i] for i in rng.permutation(len(group_ids))]
    n_val = len(pairs) // 7
    val_list: list[int] = []
    while group_order and len(val_list) < n_val and len(group_order) > 1:
        val_list.extend(members[group_order.pop()])
    train_idx = np.array(sorted(i for g in group_order for i in members[g]))
    val_idx = np.array(sorted(val_list), dtype=int)

    net = _clone(net)
    params = _param_arrays(net)
    velocity = [np.zeros_like(p) for p in params]
    history: list[dict] = []

    def batch_grad(indices) -> tuple[float, list[np.ndarray]]:
        total = 0.0
        grads = [np.zeros_like(p) for p in params]
        for i in indices:
            hazy, clear = pairs[i]
            out = forward(net, hazy, clamp=False)
            loss, dout = mse_loss(out, clear)
            total += loss
            g = backward(net, hazy, dout)
            for slot, arr in enumerate(_param_arrays(g)):
                grads[slot] += arr
        inv = 1.0 / len(indices)
        return total * inv, [g * inv for g in grads]

    for epoch in range(config.epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = batch_grad(batch)
            if not np.isfinite(loss):
                raise NumericError(f"training loss is non-finite at epoch {epoch}")
            epoch_loss += loss
            n_batches += 1
            for p, v, g in zip(params, velocity, grads):
                v *= config.momentum
                v -= config.lr * g
                p += v
        val_loss = None
        if len(val_idx):
            val_loss = float(
                np.mean(
                    [
                        mse_loss(forward(net, pairs[i][0], clamp=False), pairs[i][1])[0]
                        for i in val_idx
                    ]
                )
            )
            if not np.isfinite(val_loss):
                raise NumericError(f"validation loss is non-finite at epoch {epoch}")
        history.append(
            {"epoch": epoch, "train_mse": epoch_loss / max(n_batches, 1), "val_mse": val_loss}
        )
    return net, history


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def _cast_net(net: NetworkSpec, dtype) -> NetworkSpec:
    if dtype == np.float64:
        return net

    def cast(layer: ConvLayer) -> ConvLayer:
        return ConvLayer(
            layer.weights.astype(dtype).astype(np.float64),
            layer.bias.astype(dtype).astype(np.float64),
            None
            if layer.prelu_slopes is None
            else layer.prelu_slopes.astype(dtype).astype(np.float64),
        )

    return NetworkSpec(
        stem=cast(net.stem),
        units=tuple(tuple(cast(l) for l in unit) for unit in net.units),
        fusion_branches=tuple(cast(l) for l in net.fusion_branches),
        head=cast(net.head),
    )


def _window_starts(length: int, tile: int, step: int) -> list[int]:
    if length <= tile:
        return [0]
    starts = [0]
    while starts[-1] + tile < length:
        starts.append(min(starts[-1] + step, length - tile))
    return starts


def _forward_tiled(net: NetworkSpec, x: np.ndarray, tile: int, overlap: int) -> np.ndarray:
    """Full-image forward by overlap-and-average tiling.

    Each window is at most ``tile`` on a side; a margin of ``overlap``
    pixels next to internal window edges is discarded (the zero padding
    there is wrong), and the remaining cores overlap by ``overlap`` pixels
    where contributions are averaged. With overlap >= the receptive-field
    radius the result matches the untiled forward to floating point.
    """
    if overlap < RECEPTIVE_RADIUS:
        raise ValueError(
            f"overlap must be >= receptive radius {RECEPTIVE_RADIUS}, got {overlap}"
        )
    step = tile - 3 * overlap
    if step < 1:
        raise ValueError(f"tile {tile} too small for overlap {overlap}")
    _, h, w = x.shape
    out = np.zeros((3, h, w))
    weight = np.zeros((h, w))
    for ys in _window_starts(h, tile, step):
        ye = min(ys + tile, h)
        cy0 = ys + overlap if ys > 0 else 0
        cy1 = ye - overlap if ye < h else h
        for xs in _window_starts(w, tile, step):
            xe = min(xs + tile, w)
            cx0 = xs + overlap if xs > 0 else 0
            cx1 = xe - overlap if xe < w else w
            y = _forward_chw(net, np.ascontiguousarray(x[:, ys:ye, xs:xe]))
            out[:, cy0:cy1, cx0:cx1] += y[:, cy0 - ys : cy1 - ys, cx0 - xs : cx1 - xs]
            weight[cy0:cy1, cx0:cx1] += 1.0
    return out / weight


def infer_sky(
    net: NetworkSpec,
    img: np.ndarray,
    sky_mask: np.ndarray,
    tile: int = 256,
    overlap: int = 16,
    dtype=np.float64,
) -> np.ndarray:
    """Restore the sky: run the network on the full frame and replace only
    the masked pixels in a copy of the input.

    Images larger than ``tile`` on a side are processed in overlapping
    windows whose averaged cores reproduce the untiled result. An empty
    mask returns the input unchanged. ``dtype=np.float32`` trades a little
    precision for speed on large frames.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got {img.shape}")
    mask = np.asarray(sky_mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    if not mask.any():
        return img.copy()
    run_net = _cast_net(net, dtype)
    x = img.transpose(2, 0, 1).astype(dtype).astype(np.float64)
    h, w = img.shape[:2]
    if h <= tile and w <= tile:
        raw = _forward_chw(run_net, x)
    else:
        raw = _forward_tiled(run_net, x, tile, overlap)
    if not np.isfinite(raw).all():
        raise NumericError(
            f"non-finite activation first appears after layer "
            f"{_locate_nonfinite(run_net, x)}"
        )
    restored = np.clip(raw.transpose(1, 2, 0), 0.0, 1.0)
    out = img.copy()
    out[mask] = restored[mask]
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(net: NetworkSpec, path) -> None:
    """Write the parameters: magic, then per layer in declaration order a
    ``<4i`` header (kernel, in, out, has_prelu) followed by weights, bias,
    and slopes as little-endian float32."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for _, layer in iter_layers(net):
            fh.write(
                struct.pack(
                    "<4i",
                    layer.kernel_size,
                    layer.in_channels,
                    layer.out_channels,
                    0 if layer.prelu_slopes is None else 1,
                )
            )
            fh.write(layer.weights.astype("<f4").tobytes())
            fh.write(layer.bias.astype("<f4").tobytes())
            if layer.prelu_slopes is not None:
                fh.write(layer.prelu_slopes.astype("<f4").tobytes())


def load_checkpoint(path) -> NetworkSpec:
    """Read a checkpoint back; rejects a wrong magic, truncation, trailing
    bytes, or an architecture mismatch."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(
            f"bad checkpoint magic {data[: len(CHECKPOINT_MAGIC)]!r}, "
            f"expected {CHECKPOINT_MAGIC!r}"
        )
    pos = len(CHECKPOINT_MAGIC)
    layers: list[ConvLayer] = []
    expected = 1 + UNIT_COUNT * UNIT_DEPTH + len(BRANCH_KERNELS) + 1
    for index in range(expected):
        if len(data) - pos < 16:
            raise CheckpointError(f"checkpoint truncated in layer {index} header")
        f, cin, cout, has_prelu = struct.unpack_from("<4i", data, pos)
        pos += 16
        if f < 1 or f % 2 == 0 or cin < 1 or cout < 1 or has_prelu not in (0, 1):
            raise CheckpointError(
                f"invalid layer {index} header (kernel {f}, {cin}->{cout}, prelu {has_prelu})"
            )
        count = f * f * cin * cout + cout + (cout if has_prelu else 0)
        need = count * 4
        if len(data) - pos < need:
            raise CheckpointError(
                f"checkpoint truncated in layer {index}: need {need} bytes, "
                f"have {len(data) - pos}"
            )
        values = np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float64)
        pos += need
        w_end = f * f * cin * cout
        layers.append(
            ConvLayer(
                weights=values[:w_end].reshape(f, f, cin, cout),
                bias=values[w_end : w_end + cout],
                prelu_slopes=values[w_end + cout :] if has_prelu else None,
            )
        )
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after last layer")
    try:
        return NetworkSpec(
            stem=layers[0],
            units=tuple(
                tuple(layers[1 + u * UNIT_DEPTH + i] for i in range(UNIT_DEPTH))
                for u in range(UNIT_COUNT)
            ),
            fusion_branches=tuple(
                layers[1 + UNIT_COUNT * UNIT_DEPTH + i] for i in range(len(BRANCH_KERNELS))
            ),
            head=layers[-1],
        )
    except ValueError as exc:
        raise CheckpointError(f"checkpoint architecture mismatch: {exc}") from exc
