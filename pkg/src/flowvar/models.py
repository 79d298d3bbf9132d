"""Velocity-field models and evaluation handles.

The workhorse is a small MLP taking [x, sinusoidal(t)] and returning a
velocity in data space. Training needs parameter gradients and uncertainty
needs Jacobian-vector products in x, so the network carries its own
reverse-mode backward pass and forward-mode tangent propagation. Tangents go
through the exact same cached activations (and dropout masks, when active) as
the primal values, which keeps the two modes consistent to machine precision.

Dropout is the inverted kind: keep mask / (1 - rate), drawn from an explicit
RngState per call. No call mutates hidden RNG state.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .numerics import RngState

__all__ = [
    "MlpArch",
    "MlpVelocity",
    "EvalCounter",
    "ModelField",
    "AnalyticField",
    "analytic_handle",
    "mean_velocity_eval",
    "time_features",
    "save_model",
    "load_model",
]

_ACTIVATIONS = ("tanh", "relu")


class ModelError(ValueError):
    pass


def time_features(t, n_freq: int) -> np.ndarray:
    """Sinusoidal clock features [sin(2^j pi t), cos(2^j pi t)], j < n_freq.

    t may be a scalar or a (n,) array; output is (n, 2*n_freq) with n=1 for
    scalars.
    """
    tv = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if tv.ndim != 1:
        raise ModelError(f"time must be scalar or 1-d, got shape {tv.shape}")
    freqs = np.pi * (2.0 ** np.arange(n_freq))
    ang = tv[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass(frozen=True)
class MlpArch:
    """Width/depth/activation choices for the velocity MLP."""

    dim: int
    hidden: int = 128
    depth: int = 2
    n_freq: int = 8
    activation: str = "tanh"
    dropout: float = 0.0

    def __post_init__(self):
        if self.dim < 1 or self.hidden < 1 or self.depth < 1 or self.n_freq < 1:
            raise ModelError("dim, hidden, depth and n_freq must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ModelError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError("dropout rate must lie in [0, 1)")

    @property
    def in_dim(self) -> int:
        return self.dim + 2 * self.n_freq

    def layer_shapes(self):
        """Weight shapes input->output: depth hidden layers plus linear head."""
        sizes = [self.in_dim] + [self.hidden] * self.depth + [self.dim]
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_deriv(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    # h = act(z) is already cached; tanh' reuses it
    if name == "tanh":
        return 1.0 - h * h
    return (z > 0.0).astype(np.float64)


class MlpVelocity:
    """MLP velocity field with explicit forward, backward, and JVP passes.

    Parameters are plain float64 arrays in ``weights``/``biases``; nothing is
    hidden behind a framework, which is what makes the hand-rolled tangent
    pass auditable.
    """

    def __init__(self, arch: MlpArch, weights, biases):
        shapes = arch.layer_shapes()
        if len(weights) != len(shapes) or len(biases) != len(shapes):
            raise ModelError("wrong number of parameter arrays")
        for w, b, s in zip(weights, biases, shapes):
            if w.shape != s or b.shape != (s[0],):
                raise ModelError(f"parameter shape mismatch: {w.shape} vs {s}")
        self.arch = arch
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    # ---- construction -----------------------------------------------------

    @staticmethod
    def init(arch: MlpArch, rng: RngState) -> "MlpVelocity":
        """Fan-in scaled Gaussian init (He gain for relu, Xavier for tanh)
        with a zero output head, so the initial field is identically zero."""
        g = rng.generator()
        gain = 2.0 if arch.activation == "relu" else 1.0
        weights, biases = [], []
        for rows, cols in arch.layer_shapes():
            std = np.sqrt(gain / cols)
            weights.append(g.standard_normal((rows, cols)) * std)
            biases.append(np.zeros(rows))
        weights[-1][:] = 0.0
        return MlpVelocity(arch, weights, biases)

    def copy(self) -> "MlpVelocity":
        return MlpVelocity(
            self.arch,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def checksum(self) -> str:
        """sha256 over all parameters as little-endian float64 bytes."""
        h = hashlib.sha256()
        for w, b in zip(self.weights, self.biases):
            h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
            h.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return h.hexdigest()

    # ---- forward / backward ----------------------------------------------

    def _input_features(self, x: np.ndarray, t) -> np.ndarray:
        x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x2.shape[1] != self.arch.dim:
            raise ModelError(f"x dim {x2.shape[1]} != model dim {self.arch.dim}")
        emb = time_features(t, self.arch.n_freq)
        if emb.shape[0] == 1 and x2.shape[0] > 1:
            emb = np.broadcast_to(emb, (x2.shape[0], emb.shape[1]))
        elif emb.shape[0] != x2.shape[0]:
            raise ModelError(
                f"time batch {emb.shape[0]} incompatible with x batch {x2.shape[0]}"
            )
        return np.concatenate([x2, emb], axis=1)

    def _dropout_masks(self, n: int, dropout_rng: RngState | None):
        p = self.arch.dropout
        if dropout_rng is None or p == 0.0:
            return None
        g = dropout_rng.generator()
        keep = 1.0 - p
        return [
            (g.random((n, self.arch.hidden)) < keep).astype(np.float64) / keep
            for _ in range(self.arch.depth)
        ]

    def forward_cache(self, x, t, dropout_rng: RngState | None = None):
        """Full forward pass returning (velocity, cache) for backward/JVP."""
        feats = self._input_features(x, t)
        masks = self._dropout_masks(feats.shape[0], dropout_rng)
        inputs = [feats]
        pre, post = [], []
        h = feats
        act = self.arch.activation
        # overflow surfaces as the explicit divergence error, not a warning
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(self.arch.depth):
                z = h @ self.weights[i].T + self.biases[i]
                if not np.all(np.isfinite(z)):
                    raise ModelError(
                        "forward pass diverged: non-finite activations")
                a = _act(act, z)
                pre.append(z)
                post.append(a)  # pre-dropout, feeds the activation derivative
                if masks is not None:
                    a = a * masks[i]
                inputs.append(a)
                h = a
            out = h @ self.weights[-1].T + self.biases[-1]
        if not np.all(np.isfinite(out)):
            raise ModelError("forward pass diverged: non-finite output")
        cache = {"inputs": inputs, "pre": pre, "post": post, "masks": masks}
        return out, cache

    def velocity(self, x, t, dropout_rng: RngState | None = None) -> np.ndarray:
        out, _ = self.forward_cache(x, t, dropout_rng)
        return out if np.ndim(x) == 2 else out[0]

    def __call__(self, x, t) -> np.ndarray:
        return self.velocity(x, t)

    def backward(self, cache, dout: np.ndarray):
        """Parameter gradients for sum(dout * output); returns (dWs, dbs)."""
        act = self.arch.activation
        masks = cache["masks"]
        d_ws = [None] * len(self.weights)
        d_bs = [None] * len(self.biases)
        d_ws[-1] = dout.T @ cache["inputs"][-1]
        d_bs[-1] = dout.sum(axis=0)
        dh = dout @ self.weights[-1]
        for i in range(self.arch.depth - 1, -1, -1):
            if masks is not None:
                dh = dh * masks[i]
            dz = dh * _act_deriv(act, cache["pre"][i], cache["post"][i])
            d_ws[i] = dz.T @ cache["inputs"][i]
            d_bs[i] = dz.sum(axis=0)
            if i > 0:
                dh = dz @ self.weights[i]
        return d_ws, d_bs

    # ---- forward-mode tangents ---------------------------------------------

    def tangent(self, cache, u: np.ndarray) -> np.ndarray:
        """Propagate x-tangents through a cached forward pass.

        u is (m, dim): either one tangent per cached batch row (m equal to the
        batch size) or many tangents against a single cached row (batch 1).
        Time is held fixed, so the embedding block contributes zero tangent.
        """
        u2 = np.atleast_2d(np.asarray(u, dtype=np.float64))
        n = cache["inputs"][0].shape[0]
        if u2.shape[1] != self.arch.dim:
            raise ModelError(f"tangent dim {u2.shape[1]} != model dim {self.arch.dim}")
        if n != 1 and u2.shape[0] != n:
            raise ModelError(
                f"tangent batch {u2.shape[0]} incompatible with cached batch {n}"
            )
        act = self.arch.activation
        masks = cache["masks"]
        du = np.concatenate(
            [u2, np.zeros((u2.shape[0], 2 * self.arch.n_freq))], axis=1
        )
        for i in range(self.arch.depth):
            dz = du @ self.weights[i].T
            du = dz * _act_deriv(act, cache["pre"][i], cache["post"][i])
            if masks is not None:
                du = du * masks[i]
        return du @ self.weights[-1].T

    def value_and_jvp(self, x, t, u, dropout_rng: RngState | None = None):
        """Velocity and J_v u in one cached pass. x: (d,), u: (d,) or (m, d)."""
        xv = np.asarray(x, dtype=np.float64).reshape(-1)
        out, cache = self.forward_cache(xv[None, :], t, dropout_rng)
        ju = self.tangent(cache, u)
        return out[0], (ju if np.ndim(u) == 2 else ju[0])

    def jacobian(self, x, t, dropout_rng: RngState | None = None) -> np.ndarray:
        """Dense d x d velocity Jacobian from d basis tangents."""
        _, ju = self.value_and_jvp(x, t, np.eye(self.arch.dim), dropout_rng)
        return ju.T


@dataclass
class EvalCounter:
    """Tally of field work, used by the cost audit.

    One tangent propagation costs about one forward pass, so the audit
    reports forwards + jvps as forward-equivalents. A fused batch of S
    tangents counts as S: the single primal pass it shares is amortized
    across the batch and is not billed separately unless the caller actually
    consumes the primal value (value_and_jvp does, jvp does not).
    """

    forwards: int = 0
    jvps: int = 0
    sampler_steps: int = 0

    @property
    def forward_equivalents(self) -> int:
        return self.forwards + self.jvps

    def reset(self) -> None:
        self.forwards = 0
        self.jvps = 0
        self.sampler_steps = 0


class ModelField:
    """Counting wrapper presenting an MlpVelocity as a velocity field.

    Each x row counts as one forward; each tangent row as one JVP. An optional
    dropout stream turns the wrapper into a single stochastic sub-network
    pass, the unit the MC-dropout baseline averages over.
    """

    def __init__(self, model: MlpVelocity, counter: EvalCounter | None = None,
                 dropout_rng: RngState | None = None):
        self.model = model
        self.counter = counter if counter is not None else EvalCounter()
        self.dropout_rng = dropout_rng

    @property
    def dim(self) -> int:
        return self.model.arch.dim

    def with_dropout(self, rng: RngState) -> "ModelField":
        if self.model.arch.dropout == 0.0:
            raise ModelError("model has no dropout layers")
        return ModelField(self.model, counter=self.counter, dropout_rng=rng)

    def velocity(self, x, t) -> np.ndarray:
        self.counter.forwards += np.atleast_2d(np.asarray(x)).shape[0]
        return self.model.velocity(x, t, dropout_rng=self.dropout_rng)

    def value_and_jvp(self, x, t, u):
        u2 = np.atleast_2d(np.asarray(u))
        self.counter.forwards += 1
        self.counter.jvps += u2.shape[0]
        return self.model.value_and_jvp(x, t, u, dropout_rng=self.dropout_rng)

    def jvp(self, x, t, u) -> np.ndarray:
        u2 = np.atleast_2d(np.asarray(u))
        self.counter.jvps += u2.shape[0]
        _, ju = self.model.value_and_jvp(x, t, u, dropout_rng=self.dropout_rng)
        return ju


class AnalyticField:
    """Population-optimal velocity of a known mixture, with exact tangents.

    The Jacobian comes from differentiating the posterior-mean formulas, so
    this field is exact and lets estimator code be tested with zero model
    error.
    """

    def __init__(self, spec, counter: EvalCounter | None = None):
        from . import oracle

        self._oracle = oracle
        self.spec = spec
        self.counter = counter if counter is not None else EvalCounter()

    @property
    def dim(self) -> int:
        return self.spec.dim

    def velocity(self, x, t) -> np.ndarray:
        x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
        self.counter.forwards += x2.shape[0]
        out = self._oracle.optimal_velocity_batch(self.spec, x2, t)
        return out if np.ndim(x) == 2 else out[0]

    def _jacobian(self, x, t) -> np.ndarray:
        xv = np.asarray(x, dtype=np.float64).reshape(-1)
        jm = self._oracle.posterior_mean_jacobian(self.spec, xv[None, :], t)[0]
        return (jm - np.eye(self.dim)) / (1.0 - t)

    def value_and_jvp(self, x, t, u):
        xv = np.asarray(x, dtype=np.float64).reshape(-1)
        u2 = np.atleast_2d(np.asarray(u, dtype=np.float64))
        self.counter.forwards += 1
        self.counter.jvps += u2.shape[0]
        v = self._oracle.optimal_velocity(self.spec, xv, t)
        ju = u2 @ self._jacobian(xv, t).T
        return v, (ju if np.ndim(u) == 2 else ju[0])

    def jvp(self, x, t, u) -> np.ndarray:
        xv = np.asarray(x, dtype=np.float64).reshape(-1)
        u2 = np.atleast_2d(np.asarray(u, dtype=np.float64))
        self.counter.jvps += u2.shape[0]
        ju = u2 @ self._jacobian(xv, t).T
        return ju if np.ndim(u) == 2 else ju[0]


def analytic_handle(spec, counter: EvalCounter | None = None) -> AnalyticField:
    return AnalyticField(spec, counter)


def mean_velocity_eval(model: MlpVelocity, x0) -> np.ndarray:
    """Average-velocity prediction of a one-step model; the generator is
    g(x0) = x0 + mean_velocity_eval(model, x0)."""
    return model.velocity(x0, 0.0)


# ---- on-disk container ------------------------------------------------------

_MAGIC = b"FVAR"
_VERSION = 1
_KIND_MLP = 0
_ACT_CODES = {"tanh": 0, "relu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def save_model(path, model: MlpVelocity) -> None:
    """Write the binary model container (magic FVAR, version 1).

    Layout: magic, u32 version, u32 model kind (0 = mlp), u32 activation
    code, u32 dim, u32 hidden, u32 depth, u32 n_freq, f64 dropout, u32 layer
    count, per-layer u32 rows/cols, then all parameters as little-endian
    float64 (weights row-major, bias after its weight). Integers are
    little-endian. Round-trips bit-exact.
    """
    a = model.arch
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIIIII", _VERSION, _KIND_MLP,
                             _ACT_CODES[a.activation],
                             a.dim, a.hidden, a.depth, a.n_freq))
        fh.write(struct.pack("<d", a.dropout))
        fh.write(struct.pack("<I", len(model.weights)))
        for w in model.weights:
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> MlpVelocity:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ModelError("not a model container: bad magic")
    off = 4
    version, kind, act, dim, hidden, depth, n_freq = struct.unpack_from(
        "<IIIIIII", blob, off
    )
    off += 28
    if version != _VERSION:
        raise ModelError(f"unsupported container version {version}")
    if kind != _KIND_MLP:
        raise ModelError(f"unsupported model kind {kind}")
    if act not in _ACT_NAMES:
        raise ModelError(f"unknown activation code {act}")
    (dropout,) = struct.unpack_from("<d", blob, off)
    off += 8
    (n_layers,) = struct.unpack_from("<I", blob, off)
    off += 4
    shapes = []
    for _ in range(n_layers):
        rows, cols = struct.unpack_from("<II", blob, off)
        off += 8
        shapes.append((rows, cols))
    arch = MlpArch(dim=dim, hidden=hidden, depth=depth, n_freq=n_freq,
                   activation=_ACT_NAMES[act], dropout=dropout)
    if shapes != arch.layer_shapes():
        raise ModelError("layer table does not match architecture header")
    weights, biases = [], []
    for rows, cols in shapes:
        w = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=off)
        off += 8 * rows * cols
        b = np.frombuffer(blob, dtype="<f8", count=rows, offset=off)
        off += 8 * rows
        weights.append(w.reshape(rows, cols).astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(blob):
        raise ModelError("trailing bytes after parameter block")
    return MlpVelocity(arch, weights, biases)
