###########################################################################
# Minimal neural network engine
#
# Tensors with accumulated gradients and the fixed layer set of the
# enhancement models (Conv1d, Dense, TDNN, BLSTM), with exact backward
# passes, L1/L2 losses, Adam and a finite-difference gradient check.
# Layer inputs and outputs are 2d arrays, features x time.
###########################################################################

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from aamse.errors import InvalidInput, NumericalError, ShapeError

logger = logging.getLogger(__name__)

# global variables
# -----------------------------------------------------------
LEAKY_SLOPE = 0.01
CLIP_NORM = 5.0

# gradient magnitudes below count as this in relative errors
GRAD_FLOOR = 1e-4

TDNN_CONTEXT = (-2, -1, 0, 1, 2)
DENSE_CONTEXT = (0,)

CHECKPOINT_MAGIC = b"AAMSECKPT"
CHECKPOINT_VERSION = 1

LAYER_KINDS = ("conv1d", "dense", "tdnn", "blstm")
# -----------------------------------------------------------


class Tensor:

    '''
    Parameter array with a gradient slot of identical shape,
    gradients accumulate until zero_grad() is called.
    '''

    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name=""):

        self.value = np.asarray(value, dtype=float)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor({self.name!r}, shape={self.shape})"


# --- activations ---------------------------------------------


def _leaky_relu(z):
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def _leaky_relu_grad(z, y, dy):
    return np.where(z > 0, dy, LEAKY_SLOPE * dy)


def _identity(z):
    return z


def _identity_grad(z, y, dy):
    return dy


def _tanh_grad(z, y, dy):
    return dy * (1 - y ** 2)


# name -> (function, backward from (pre-activation, output, output gradient))
ACTIVATIONS = {
    "linear": (_identity, _identity_grad),
    "leaky_relu": (_leaky_relu, _leaky_relu_grad),
    "tanh": (np.tanh, _tanh_grad),
}


@dataclass(frozen=True)
class LayerSpec:

    '''
    Descriptor of one layer. *size* is the number of output
    filters for conv1d and the output size otherwise, *kernel*
    is only used by conv1d and *context* only by dense/tdnn.
    An activation of None is resolved by the model builder.
    '''

    kind: str
    size: int
    kernel: int = None
    activation: str = None
    context: tuple = None

    def __post_init__(self):

        if self.kind not in LAYER_KINDS:
            raise InvalidInput(f"Unknown layer kind {self.kind!r}, choose from {LAYER_KINDS}")
        if int(self.size) < 1:
            raise InvalidInput(f"{self.kind}: output size must be >= 1, got {self.size}")
        if self.kind == "conv1d":
            if self.kernel is None or int(self.kernel) < 1:
                raise InvalidInput(f"conv1d: kernel must be >= 1, got {self.kernel}")
        if self.activation is not None and self.activation not in ACTIVATIONS:
            raise InvalidInput(
                f"Unknown activation {self.activation!r}, choose from {list(ACTIVATIONS)}"
            )
        if self.context is not None:
            object.__setattr__(self, "context", tuple(int(c) for c in self.context))

    def token(self):

        '''
        Text form used in model spec files, e.g. conv1d:128:55
        '''

        if self.kind == "conv1d":
            tok = f"conv1d:{self.size}:{self.kernel}"
        else:
            tok = f"{self.kind}:{self.size}"
        if self.activation is not None:
            tok += f"@{self.activation}"
        return tok

    def to_dict(self):
        return {
            "kind": self.kind,
            "size": self.size,
            "kernel": self.kernel,
            "activation": self.activation,
            "context": list(self.context) if self.context is not None else None,
        }

    @classmethod
    def from_dict(cls, d):
        ctx = d.get("context")
        return cls(
            d["kind"],
            d["size"],
            d.get("kernel"),
            d.get("activation"),
            tuple(ctx) if ctx is not None else None,
        )


def init_uniform(rng, shape, fan_in):

    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ============ Layers =======================================


class Layer:

    '''
    Base class, subclasses implement _forward and _backward
    on the pre-activation. The forward cache holds the last
    input only, so a layer serves one sequence at a time.
    '''

    def __init__(self, in_dim, out_dim, activation="linear"):

        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self._z = None
        self._y = None

    def params(self):
        return []

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def _check_input(self, x):

        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] != self.in_dim:
            raise ShapeError(
                f"{self!r} expects {self.in_dim} x T input, got shape {x.shape}"
            )
        if x.shape[1] < 1:
            raise ShapeError(f"{self!r} got an empty sequence")
        return x

    def forward(self, x):

        x = self._check_input(x)
        z = self._forward(x)
        y = ACTIVATIONS[self.activation][0](z)
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"Non-finite output in {self!r}")
        self._z, self._y = z, y
        return y

    def backward(self, dy):

        if self._y is None:
            raise RuntimeError("backward() called before forward()")
        dy = np.asarray(dy, dtype=float)
        if dy.shape != self._y.shape:
            raise ShapeError(f"{self!r}: gradient shape {dy.shape} != output {self._y.shape}")

        dz = ACTIVATIONS[self.activation][1](self._z, self._y, dy)
        dx = self._backward(dz)
        if not np.all(np.isfinite(dx)):
            raise NumericalError(f"Non-finite gradient in {self!r}")
        return dx

    def __call__(self, x):
        return self.forward(x)


class Conv1d(Layer):

    """
    Same-length cross-correlation over time. Odd kernels pad
    symmetrically, even kernels pad (k-1)//2 on the left and
    the rest on the right.

    W has shape filters x in_channels x kernel
    """

    def __init__(self, in_dim, filters, kernel, activation="linear", rng=None):

        super().__init__(in_dim, filters, activation)
        rng = rng if rng is not None else np.random.default_rng()

        self.kernel = kernel
        self.pad_left = (kernel - 1) // 2
        self.pad_right = kernel - 1 - self.pad_left

        fan_in = in_dim * kernel
        self.W = Tensor(init_uniform(rng, (filters, in_dim, kernel), fan_in), "W")
        self.b = Tensor(np.zeros(filters), "b")
        self._xpad = None

    def params(self):
        return [self.W, self.b]

    def _forward(self, x):

        T = x.shape[1]
        xpad = np.pad(x, ((0, 0), (self.pad_left, self.pad_right)))
        W = self.W.value

        z = np.zeros((self.out_dim, T))
        for j in range(self.kernel):
            z += W[:, :, j] @ xpad[:, j : j + T]
        z += self.b.value[:, None]

        self._xpad = xpad
        return z

    def _backward(self, dz):

        T = dz.shape[1]
        xpad = self._xpad
        W = self.W.value

        dxpad = np.zeros_like(xpad)
        for j in range(self.kernel):
            self.W.grad[:, :, j] += dz @ xpad[:, j : j + T].T
            dxpad[:, j : j + T] += W[:, :, j].T @ dz
        self.b.grad += dz.sum(axis=1)

        return dxpad[:, self.pad_left : self.pad_left + T]

    def __repr__(self):
        return f"Conv1d({self.in_dim}->{self.out_dim}, k={self.kernel}, {self.activation})"


def splice_indices(n_frames, context):

    '''
    Frame indices t + offset, clamped to the sequence edges,
    shape len(context) x n_frames
    '''

    idx = np.arange(n_frames)[None, :] + np.asarray(context)[:, None]
    return np.clip(idx, 0, n_frames - 1)


class SplicedAffine(Layer):

    '''
    Shared affine map applied to every frame of a spliced
    input. The spliced vector of frame t stacks x[:, t + o]
    for all offsets o, offset-major.
    '''

    def __init__(self, in_dim, out_dim, context, activation="linear", rng=None):

        context = tuple(sorted(int(c) for c in context))
        if not context:
            raise InvalidInput("Empty context offsets")
        if 0 not in context:
            raise InvalidInput(f"Context offsets {context} must include 0")

        super().__init__(in_dim, out_dim, activation)
        rng = rng if rng is not None else np.random.default_rng()

        self.context = context
        fan_in = len(context) * in_dim
        self.W = Tensor(init_uniform(rng, (out_dim, fan_in), fan_in), "W")
        self.b = Tensor(np.zeros(out_dim), "b")
        self._spliced = None
        self._idx = None
        self._vector = False

    def params(self):
        return [self.W, self.b]

    def forward(self, x):

        # a single feature vector is treated as a one frame sequence
        x = np.asarray(x, dtype=float)
        self._vector = x.ndim == 1
        if self._vector:
            return super().forward(x[:, None])[:, 0]
        return super().forward(x)

    def backward(self, dy):

        if self._vector:
            return super().backward(np.asarray(dy, dtype=float)[:, None])[:, 0]
        return super().backward(dy)

    def _forward(self, x):

        n_frames = x.shape[1]
        idx = splice_indices(n_frames, self.context)
        # in_dim x K x F -> (K * in_dim) x F
        spliced = x[:, idx].transpose(1, 0, 2).reshape(-1, n_frames)

        self._idx, self._spliced = idx, spliced
        return self.W.value @ spliced + self.b.value[:, None]

    def _backward(self, dz):

        self.W.grad += dz @ self._spliced.T
        self.b.grad += dz.sum(axis=1)

        n_frames = dz.shape[1]
        dspliced = (self.W.value.T @ dz).reshape(len(self.context), self.in_dim, n_frames)

        dx = np.zeros((self.in_dim, n_frames))
        for k in range(len(self.context)):
            np.add.at(dx.T, self._idx[k], dspliced[k].T)
        return dx


class Dense(SplicedAffine):

    def __init__(self, in_dim, out_dim, activation="linear", rng=None, context=DENSE_CONTEXT):
        super().__init__(in_dim, out_dim, context, activation, rng)

    def __repr__(self):
        return f"Dense({self.in_dim}->{self.out_dim}, ctx={self.context}, {self.activation})"


class TDNN(SplicedAffine):

    def __init__(self, in_dim, out_dim, activation="linear", rng=None, context=TDNN_CONTEXT):
        super().__init__(in_dim, out_dim, context, activation, rng)

    def __repr__(self):
        return f"TDNN({self.in_dim}->{self.out_dim}, ctx={self.context}, {self.activation})"


class LSTMDirection:

    '''
    One direction of a bidirectional LSTM, gate order i, f, o, g.

    W : 4H x D input weights
    U : 4H x H recurrent weights
    b : 4H bias, forget gate initialized to +1
    '''

    def __init__(self, in_dim, hidden, rng, suffix=""):

        self.hidden = hidden
        fan_in = in_dim + hidden
        self.W = Tensor(init_uniform(rng, (4 * hidden, in_dim), fan_in), "W" + suffix)
        self.U = Tensor(init_uniform(rng, (4 * hidden, hidden), fan_in), "U" + suffix)
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0
        self.b = Tensor(b, "b" + suffix)
        self._cache = None

    def params(self):
        return [self.W, self.U, self.b]

    def forward(self, x):

        H = self.hidden
        n_frames = x.shape[1]
        pre = self.W.value @ x + self.b.value[:, None]
        U = self.U.value

        hs = np.zeros((H, n_frames + 1))  # column 0 is the initial state
        cs = np.zeros((H, n_frames + 1))
        gates = np.zeros((4 * H, n_frames))

        for t in range(n_frames):
            a = pre[:, t] + U @ hs[:, t]
            g = np.empty_like(a)
            g[: 3 * H] = expit(a[: 3 * H])
            g[3 * H :] = np.tanh(a[3 * H :])
            i, f, o, cand = g[:H], g[H : 2 * H], g[2 * H : 3 * H], g[3 * H :]

            cs[:, t + 1] = f * cs[:, t] + i * cand
            hs[:, t + 1] = o * np.tanh(cs[:, t + 1])
            gates[:, t] = g

        self._cache = (x, hs, cs, gates)
        return hs[:, 1:]

    def backward(self, dh_out):

        '''
        Backpropagation through time over the whole sequence
        '''

        x, hs, cs, gates = self._cache
        H = self.hidden
        n_frames = x.shape[1]
        U = self.U.value

        da_all = np.zeros((4 * H, n_frames))
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)

        for t in reversed(range(n_frames)):
            i, f, o, cand = np.split(gates[:, t], 4)
            tc = np.tanh(cs[:, t + 1])

            dh = dh_out[:, t] + dh_next
            dc = dh * o * (1 - tc ** 2) + dc_next

            da = np.concatenate(
                [
                    dc * cand * i * (1 - i),
                    dc * cs[:, t] * f * (1 - f),
                    dh * tc * o * (1 - o),
                    dc * i * (1 - cand ** 2),
                ]
            )
            da_all[:, t] = da
            self.U.grad += np.outer(da, hs[:, t])

            dh_next = U.T @ da
            dc_next = dc * f

        self.W.grad += da_all @ x.T
        self.b.grad += da_all.sum(axis=1)

        return self.W.value.T @ da_all


class BLSTM(Layer):

    '''
    Bidirectional LSTM, *out_dim* is the size of the concatenated
    forward and backward outputs and has to be even.
    '''

    def __init__(self, in_dim, out_dim, activation="linear", rng=None):

        if out_dim % 2:
            raise InvalidInput(f"BLSTM output size must be even, got {out_dim}")

        super().__init__(in_dim, out_dim, activation)
        rng = rng if rng is not None else np.random.default_rng()

        self.fwd = LSTMDirection(in_dim, out_dim // 2, rng, "_fwd")
        self.bwd = LSTMDirection(in_dim, out_dim // 2, rng, "_bwd")

    def params(self):
        return self.fwd.params() + self.bwd.params()

    def _forward(self, x):

        h_fwd = self.fwd.forward(x)
        h_bwd = self.bwd.forward(x[:, ::-1])[:, ::-1]
        return np.concatenate([h_fwd, h_bwd], axis=0)

    def _backward(self, dz):

        H = self.out_dim // 2
        dx = self.fwd.backward(dz[:H])
        dx += self.bwd.backward(dz[H:, ::-1])[:, ::-1]
        return dx

    def __repr__(self):
        return f"BLSTM({self.in_dim}->{self.out_dim}, {self.activation})"


def make_layer(spec, in_dim, rng):

    '''
    Instantiates the layer described by the LayerSpec *spec*
    for inputs with *in_dim* features.
    '''

    act = spec.activation or "linear"

    if spec.kind == "conv1d":
        return Conv1d(in_dim, spec.size, spec.kernel, act, rng)
    if spec.kind == "dense":
        return Dense(in_dim, spec.size, act, rng, spec.context or DENSE_CONTEXT)
    if spec.kind == "tdnn":
        return TDNN(in_dim, spec.size, act, rng, spec.context or TDNN_CONTEXT)
    if spec.kind == "blstm":
        return BLSTM(in_dim, spec.size, act, rng)

    raise InvalidInput(f"Unknown layer kind {spec.kind!r}")


class Stack:

    '''
    Layers applied in sequence
    '''

    def __init__(self, layers):
        self.layers = list(layers)

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    @property
    def out_dim(self):
        return self.layers[-1].out_dim if self.layers else None

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def __call__(self, x):
        return self.forward(x)


# ============ Losses and optimizer =========================


def loss(kind, pred, target):

    """
    Mean absolute (L1) or mean squared (L2) error over all elements.

    Returns
    -------

    value : float
    grad : ndarray, d value / d pred, the L1 subgradient is 0 at ties
    """

    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"Prediction {pred.shape} and target {target.shape} differ in shape")

    diff = pred - target
    n = diff.size

    if kind == "L1":
        return np.mean(np.abs(diff)), np.sign(diff) / n
    if kind == "L2":
        return np.mean(diff ** 2), 2 * diff / n

    raise InvalidInput(f"Unknown loss kind {kind!r}, choose L1 or L2")


@dataclass
class AdamState:

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):

    """
    One bias-corrected Adam update, *params* (arrays) are
    modified in place.

    Returns
    -------

    params, state
    """

    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")

    for k, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"Parameter {k}: shape {p.shape} but gradient {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"Non-finite gradient for parameter {k} at step {state.step + 1}")

    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1 - b1 ** state.step
    correction2 = 1 - b2 ** state.step

    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g ** 2

        m_hat = m / correction1
        v_hat = v / correction2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)

    return params, state


def clip_gradients(grads, max_norm=CLIP_NORM):

    '''
    Rescales *grads* in place to a global L2 norm of
    at most *max_norm*, returns the norm before clipping.
    '''

    norm = np.sqrt(sum(np.sum(g ** 2) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


# ============ Gradient verification ========================


def _kink(fwd, bwd):

    # one sided differences disagree, a leaky relu or |.| kink lies within h
    return abs(fwd - bwd) > 1e-2 * (abs(fwd) + abs(bwd)) + 1e-7


def grad_check(module, x, h=1e-5, seed=0):

    """
    Compares analytic gradients of the scalar sum(r * module(x)),
    r a fixed random projection, against central finite differences
    for every parameter entry and every input entry.

    Coordinates where a perturbation of +-h crosses a kink of
    a piecewise linear activation are skipped.

    Returns
    -------

    the worst element-wise relative error
    |a - n| / max(|a| + |n|, GRAD_FLOOR)
    over all parameters and inputs
    """

    x = np.array(x, dtype=float)
    rng = np.random.default_rng(seed)

    y = module.forward(x)
    r = rng.standard_normal(y.shape)

    module.zero_grad()
    dx = module.backward(r)

    def objective():
        return np.sum(r * module.forward(x))

    base = objective()

    checks = [(p.value, p.grad.copy()) for p in module.params()]
    checks.append((x, dx))

    worst = 0.0
    for values, analytic in checks:
        numeric = np.zeros_like(values)
        keep = np.ones(values.shape, dtype=bool)

        flat = values.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = objective()
            flat[k] = orig - h
            down = objective()
            flat[k] = orig

            if _kink((up - base) / h, (base - down) / h):
                keep.flat[k] = False
            numeric.flat[k] = (up - down) / (2 * h)

        a, n = analytic[keep], numeric[keep]
        if a.size:
            rel = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), GRAD_FLOOR)
            worst = max(worst, float(rel.max()))

    # restore the forward cache of the unperturbed input
    module.forward(x)

    return worst


# ============ Checkpoints ==================================


def save_checkpoint(path, params, metadata):

    '''
    Writes a magic line, the byte length of the JSON metadata,
    the metadata and then every parameter as little-endian
    float64 block in the given order.
    '''

    meta = dict(metadata)
    meta["shapes"] = [list(p.shape) for p in params]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")

    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + f" {CHECKPOINT_VERSION}\n".encode("ascii"))
        f.write(f"{len(blob)}\n".encode("ascii"))
        f.write(blob)
        for p in params:
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):

    '''
    Returns
    -------

    metadata : dict
    params : list of float64 arrays, in stored order
    '''

    with open(path, "rb") as f:
        magic = f.readline().split()
        if len(magic) != 2 or magic[0] != CHECKPOINT_MAGIC:
            raise InvalidInput(f"{path}: not an aamse checkpoint")
        if int(magic[1]) != CHECKPOINT_VERSION:
            raise InvalidInput(
                f"{path}: checkpoint version {int(magic[1])}, supported is {CHECKPOINT_VERSION}"
            )

        n_meta = int(f.readline())
        meta = json.loads(f.read(n_meta).decode("utf-8"))
        payload = f.read()

    params = []
    offset = 0
    for shape in meta["shapes"]:
        n = int(np.prod(shape))
        block = np.frombuffer(payload, dtype="<f8", count=n, offset=offset)
        params.append(block.reshape(shape).astype(float))
        offset += 8 * n

    if offset != len(payload):
        raise InvalidInput(f"{path}: {len(payload) - offset} trailing bytes in checkpoint")

    return meta, params
