"""Minimal deterministic conv-net core: tensors, layers, losses, Adam.

Tensors are plain numpy arrays of shape (batch, channels, height, width),
C-ordered, float32 by default (float64 is accepted so verification code can
run gradient checks above float32 round-off).  The network is a DnCNN-style
residual stack: conv(k x k)+ReLU repeated, a final conv without activation,
and a skip connection so the output is ``input - residual``.

All operations are pure functions evaluated single-threaded in a fixed
order, so forward/backward are bitwise reproducible on one machine.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ShapeError

#: Canonical dtype of network parameters and activations.
DTYPE = np.float32


def check_tensor4(x, name="tensor"):
    """Validate the (batch, channels, height, width) tensor convention."""
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ShapeError(f"{name}: expected a 4-d array, got "
                         f"{getattr(x, 'shape', type(x))}")
    if x.dtype not in (np.float32, np.float64):
        raise ShapeError(f"{name}: expected float32/float64, got {x.dtype}")


def _require_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")


@dataclass(frozen=True)
class Arch:
    """Architecture descriptor: depth conv layers of `width` channels."""

    depth: int = 7
    width: int = 32
    kernel: int = 3
    channels: int = 1

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ShapeError("arch depth and width must be >= 1")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ShapeError("kernel size must be odd")
        if self.channels not in (1, 3):
            raise ShapeError("channels must be 1 or 3")

    def describe(self) -> str:
        return (f"residual-conv depth={self.depth} width={self.width} "
                f"kernel={self.kernel} channels={self.channels}")

    @classmethod
    def parse(cls, text: str) -> "Arch":
        m = re.fullmatch(
            r"residual-conv depth=(\d+) width=(\d+) kernel=(\d+) channels=(\d+)",
            text.strip())
        if m is None:
            raise ShapeError(f"unrecognized arch descriptor: {text!r}")
        return cls(*(int(g) for g in m.groups()))


@dataclass
class ConvLayer:
    """One convolution: weights (out_ch, in_ch, k, k) and bias (out_ch,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError(f"conv weights must be (out, in, k, k), "
                             f"got {self.weights.shape}")
        if self.weights.shape[2] % 2 == 0:
            raise ShapeError("kernel size must be odd for symmetric padding")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("bias length must equal out_ch")

    @property
    def out_ch(self):
        return self.weights.shape[0]

    @property
    def in_ch(self):
        return self.weights.shape[1]

    @property
    def k(self):
        return self.weights.shape[2]

    def copy(self) -> "ConvLayer":
        return ConvLayer(self.weights.copy(), self.bias.copy())


@dataclass
class NetworkParams:
    """Ordered conv layers plus the arch they instantiate."""

    layers: list
    arch: Arch

    def __post_init__(self):
        if len(self.layers) != self.arch.depth:
            raise ShapeError("layer count does not match arch depth")
        if self.layers[0].in_ch != self.arch.channels:
            raise ShapeError("first layer in_ch must equal image channels")
        if self.layers[-1].out_ch != self.arch.channels:
            raise ShapeError("last layer out_ch must equal image channels")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_ch != nxt.in_ch:
                raise ShapeError("adjacent layers are channel-incompatible")

    def copy(self) -> "NetworkParams":
        return NetworkParams([l.copy() for l in self.layers], self.arch)

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(
            [ConvLayer(l.weights.astype(dtype), l.bias.astype(dtype))
             for l in self.layers], self.arch)


@dataclass
class ParamGrads:
    """Per-layer gradients, shape-congruent with NetworkParams."""

    dw: list
    db: list


def params_equal(a: NetworkParams, b: NetworkParams) -> bool:
    """Bitwise parameter equality."""
    if a.arch != b.arch:
        return False
    return all(np.array_equal(la.weights, lb.weights)
               and np.array_equal(la.bias, lb.bias)
               for la, lb in zip(a.layers, b.layers))


def init_params(arch: Arch, stream) -> NetworkParams:
    """He fan-in initialization; the final layer starts at exact zero.

    A zero final layer makes the fresh network the identity denoiser, so
    training starts from "output = input".
    """
    widths = [arch.channels] + [arch.width] * (arch.depth - 1) + [arch.channels]
    if arch.depth == 1:
        widths = [arch.channels, arch.channels]
    layers = []
    for i in range(arch.depth):
        in_ch, out_ch = widths[i], widths[i + 1]
        shape = (out_ch, in_ch, arch.kernel, arch.kernel)
        if i == arch.depth - 1:
            w = np.zeros(shape, dtype=DTYPE)
        else:
            std = float(np.sqrt(2.0 / (in_ch * arch.kernel * arch.kernel)))
            w = stream.normal(shape, sigma=std).astype(DTYPE)
        layers.append(ConvLayer(w, np.zeros(out_ch, dtype=DTYPE)))
    return NetworkParams(layers, arch)


def interp_params(a: NetworkParams, b: NetworkParams, eps: float) -> NetworkParams:
    """Reptile outer step: a + eps*(b - a), exact at eps == 0 and eps == 1."""
    if a.arch != b.arch:
        raise ShapeError("cannot interpolate params of different archs")
    if eps == 0.0:
        return a.copy()
    if eps == 1.0:
        return b.copy()
    eps = float(eps)
    layers = [ConvLayer(la.weights + eps * (lb.weights - la.weights),
                        la.bias + eps * (lb.bias - la.bias))
              for la, lb in zip(a.layers, b.layers)]
    return NetworkParams(layers, a.arch)


# ---------------------------------------------------------------------------
# convolution


def _corr_same(x, w):
    """'Same' zero-padded cross-correlation of x (B,C,H,W) with w (O,C,k,k)."""
    k = w.shape[2]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B,C,H,W,k,k)
    out = np.tensordot(win, w, axes=((1, 4, 5), (1, 2, 3)))  # (B,H,W,O)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_forward(x, layer: ConvLayer):
    """Zero-padded 'same' convolution; output spatial dims equal input's."""
    check_tensor4(x, "conv input")
    if x.shape[1] != layer.in_ch:
        raise ShapeError(f"conv input has {x.shape[1]} channels, "
                         f"layer expects {layer.in_ch}")
    w = layer.weights if x.dtype == layer.weights.dtype \
        else layer.weights.astype(x.dtype)
    b = layer.bias if x.dtype == layer.bias.dtype else layer.bias.astype(x.dtype)
    out = _corr_same(x, w)
    out += b[None, :, None, None]
    _require_finite(out, "conv output")
    return out


def _weight_grad(x, dz, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B,C,H,W,k,k)
    return np.tensordot(dz, win, axes=((0, 2, 3), (0, 2, 3)))  # (O,C,k,k)


def _input_grad(dz, w):
    # full correlation with the flipped, channel-transposed kernel
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return _corr_same(dz, wt)


# ---------------------------------------------------------------------------
# residual network forward/backward


@dataclass
class ForwardTape:
    """Activation record from network_forward, consumed by network_backward."""

    params: NetworkParams
    inputs: list            # input tensor of each conv layer
    masks: list             # ReLU masks (None for the final layer)
    xhat: np.ndarray

    def __post_init__(self):
        self._token = id(self.params)


def network_forward(params: NetworkParams, y):
    """Residual denoiser: xhat = y - R(y) with R the conv/ReLU stack."""
    check_tensor4(y, "network input")
    if y.shape[1] != params.arch.channels:
        raise ShapeError(f"input has {y.shape[1]} channels, arch expects "
                         f"{params.arch.channels}")
    h = y
    inputs, masks = [], []
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        inputs.append(h)
        h = conv2d_forward(h, layer)
        if i < last:
            mask = h > 0
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
    xhat = y - h
    _require_finite(xhat, "network output")
    return xhat, ForwardTape(params, inputs, masks, xhat)


def network_infer(params: NetworkParams, y):
    """Forward pass without keeping the tape."""
    xhat, _ = network_forward(params, y)
    return xhat


def network_backward(tape: ForwardTape, loss_grad):
    """Parameter gradients given d(loss)/d(xhat).

    The residual skip contributes the sign flip: xhat = y - R(y) means the
    stack sees -loss_grad.
    """
    check_tensor4(loss_grad, "loss gradient")
    if loss_grad.shape != tape.xhat.shape:
        raise ShapeError(f"loss grad shape {loss_grad.shape} does not match "
                         f"forward output {tape.xhat.shape}")
    layers = tape.params.layers
    dw = [None] * len(layers)
    db = [None] * len(layers)
    dh = -loss_grad
    for i in range(len(layers) - 1, -1, -1):
        if tape.masks[i] is not None:
            dh = dh * tape.masks[i]
        dw[i] = _weight_grad(tape.inputs[i], dh, layers[i].k)
        db[i] = dh.sum(axis=(0, 2, 3))
        if i > 0:
            dh = _input_grad(dh, layers[i].weights.astype(dh.dtype))
    grads = ParamGrads(dw, db)
    for g in dw + db:
        _require_finite(g, "parameter gradient")
    return grads


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred, target):
    """Mean squared error and its gradient wrt pred."""
    if pred.shape != target.shape:
        raise ShapeError(f"loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    value = float(np.mean(diff.astype(np.float64) ** 2))
    grad = diff * (2.0 / diff.size)
    return value, grad


def l1_loss(pred, target):
    """Mean absolute error; subgradient 0 at exact ties."""
    if pred.shape != target.shape:
        raise ShapeError(f"loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    value = float(np.mean(np.abs(diff.astype(np.float64))))
    grad = np.sign(diff) * (1.0 / diff.size)
    return value, grad


LOSSES = {"mse": mse_loss, "l1": l1_loss}


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Adam moment accumulators plus hyperparameters."""

    m_w: list
    v_w: list
    m_b: list
    v_b: list
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8

    @classmethod
    def init(cls, params: NetworkParams, lr=1e-4, beta1=0.9, beta2=0.999,
             eps_stab=1e-8) -> "AdamState":
        return cls(
            m_w=[np.zeros_like(l.weights) for l in params.layers],
            v_w=[np.zeros_like(l.weights) for l in params.layers],
            m_b=[np.zeros_like(l.bias) for l in params.layers],
            v_b=[np.zeros_like(l.bias) for l in params.layers],
            lr=lr, beta1=beta1, beta2=beta2, eps_stab=eps_stab)


def _adam_update(p, g, m, v, t, lr, b1, b2, eps):
    m2 = b1 * m + (1.0 - b1) * g
    v2 = b2 * v + (1.0 - b2) * (g * g)
    m_hat = m2 / (1.0 - b1 ** t)
    v_hat = v2 / (1.0 - b2 ** t)
    return p - lr * m_hat / (np.sqrt(v_hat) + eps), m2, v2


def adam_step(params: NetworkParams, grads: ParamGrads, state: AdamState):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    n = len(params.layers)
    if len(grads.dw) != n or len(grads.db) != n:
        raise ShapeError("gradient layer count does not match params")
    for i, layer in enumerate(params.layers):
        if grads.dw[i].shape != layer.weights.shape \
                or grads.db[i].shape != layer.bias.shape:
            raise ShapeError(f"gradient shape mismatch at layer {i}")
        if not (np.all(np.isfinite(grads.dw[i]))
                and np.all(np.isfinite(grads.db[i]))):
            raise NumericError(f"non-finite gradient at layer {i}; "
                               "refusing Adam update")
    t = state.t + 1
    layers, m_w, v_w, m_b, v_b = [], [], [], [], []
    for i, layer in enumerate(params.layers):
        w, mw, vw = _adam_update(layer.weights, grads.dw[i], state.m_w[i],
                                 state.v_w[i], t, state.lr, state.beta1,
                                 state.beta2, state.eps_stab)
        b, mb, vb = _adam_update(layer.bias, grads.db[i], state.m_b[i],
                                 state.v_b[i], t, state.lr, state.beta1,
                                 state.beta2, state.eps_stab)
        layers.append(ConvLayer(w, b))
        m_w.append(mw)
        v_w.append(vw)
        m_b.append(mb)
        v_b.append(vb)
    new_state = AdamState(m_w, v_w, m_b, v_b, t, state.lr, state.beta1,
                          state.beta2, state.eps_stab)
    return NetworkParams(layers, params.arch), new_state
