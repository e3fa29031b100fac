"""Attribute encoder: sparse attributes -> hidden vector -> (mean, variance) heads."""

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from glace.errors import ValidationError
from glace.gauss import GaussianEmbedding
from glace.seeding import rng_for

VAR_FLOOR = 1e-6
TENSORS = ("W", "b", "W_mu", "b_mu", "W_sigma", "b_sigma")
ACTIVATIONS = ("linear", "relu")
MODES = ("first", "second")
KINDS = ("glace", "lace")


@dataclass
class EncoderParams:
    W: np.ndarray
    b: np.ndarray
    W_mu: np.ndarray
    b_mu: np.ndarray
    W_sigma: np.ndarray
    b_sigma: np.ndarray
    activation: str = "linear"

    @property
    def shape(self):
        """``(D, m, L)``."""
        return self.W.shape[0], self.W.shape[1], self.W_mu.shape[1]

    def tensors(self):
        return {name: getattr(self, name) for name in TENSORS}

    def copy(self):
        return EncoderParams(*(t.copy() for t in self.tensors().values()), activation=self.activation)

    def validate(self):
        D, m, L = self.shape
        expected = {"W": (D, m), "b": (m,), "W_mu": (m, L), "b_mu": (L,), "W_sigma": (m, L), "b_sigma": (L,)}
        for name, shape in expected.items():
            t = getattr(self, name)
            if t.shape != shape:
                raise ValidationError(f"{name} has shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ValidationError(f"{name} has non-finite entries")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")


@dataclass
class ModelParams:
    """One trained model: the main encoder, plus a context encoder in second-order mode."""

    main: EncoderParams
    context: EncoderParams = None
    mode: str = "first"
    kind: str = "glace"
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}")
        if (self.context is not None) != (self.mode == "second"):
            raise ValidationError("a context encoder is present iff mode is 'second'")

    @property
    def shape(self):
        return self.main.shape

    def encoders(self):
        return {"main": self.main} if self.context is None else {"main": self.main, "context": self.context}

    def copy(self):
        return ModelParams(
            self.main.copy(),
            None if self.context is None else self.context.copy(),
            self.mode,
            self.kind,
            self.seed,
            dict(self.meta),
        )


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(D, m, L, seed, role="main", activation="linear"):
    """Glorot-uniform weights, zero biases; deterministic in ``(seed, role)``."""
    if min(D, m, L) < 1:
        raise ValidationError("D, m and L must all be >= 1")
    rng = rng_for(seed, f"init-{role}")
    return EncoderParams(
        W=glorot(rng, D, m),
        b=np.zeros(m),
        W_mu=glorot(rng, m, L),
        b_mu=np.zeros(L),
        W_sigma=glorot(rng, m, L),
        b_sigma=np.zeros(L),
        activation=activation,
    )


def init_model(D, m, L, seed, mode="first", kind="glace", activation="linear"):
    main = init_params(D, m, L, seed, "main", activation)
    context = init_params(D, m, L, seed, "context", activation) if mode == "second" else None
    return ModelParams(main, context, mode, kind, int(seed))


# ---------------------------------------------------------------- forward / backward


@dataclass
class Forward:
    """Cached activations for a batch of rows."""

    x: sp.csr_matrix
    u: np.ndarray
    h: np.ndarray
    mu: np.ndarray
    t: np.ndarray
    var: np.ndarray


def _as_rows(p, x):
    D = p.W.shape[0]
    if sp.issparse(x):
        x = sp.csr_matrix(x, dtype=np.float64)
    else:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        x = sp.csr_matrix(x)
    if x.shape[1] != D:
        raise ValidationError(f"attribute vector has dimension {x.shape[1]}, encoder expects {D}")
    return x


def forward(p, x):
    """Encode a batch of attribute rows (sparse or dense, shape ``(B, D)``)."""
    x = _as_rows(p, x)
    u = np.asarray(x @ p.W) + p.b
    h = np.maximum(u, 0.0) if p.activation == "relu" else u
    mu = h @ p.W_mu + p.b_mu
    t = h @ p.W_sigma + p.b_sigma
    # ELU(t) + 1, written so that the t < 0 branch is exp(t) without cancellation
    var = np.where(t >= 0, t + 1.0, np.exp(np.minimum(t, 0.0)))
    var = np.maximum(var, VAR_FLOOR)
    return Forward(x, u, h, mu, t, var)


def backward(p, fwd, grad_mu, grad_sigma, need_input_grad=False):
    """Chain rule from (mean, variance) gradients back to all six tensors.

    Returns a dict of parameter gradients, plus ``"x"`` when
    ``need_input_grad`` is set.
    """
    grad_mu = np.asarray(grad_mu, dtype=np.float64).reshape(fwd.mu.shape)
    grad_sigma = np.asarray(grad_sigma, dtype=np.float64).reshape(fwd.var.shape)
    # ELU' is 1 on t >= 0 and exp(t) below; the floor blocks gradient where it binds
    g_t = grad_sigma * np.where(fwd.t >= 0, 1.0, fwd.var)
    g_t = np.where(fwd.var > VAR_FLOOR, g_t, 0.0)
    grads = {
        "W_mu": fwd.h.T @ grad_mu,
        "b_mu": grad_mu.sum(axis=0),
        "W_sigma": fwd.h.T @ g_t,
        "b_sigma": g_t.sum(axis=0),
    }
    g_h = grad_mu @ p.W_mu.T + g_t @ p.W_sigma.T
    g_u = g_h * (fwd.u > 0) if p.activation == "relu" else g_h
    grads["W"] = np.asarray(fwd.x.T @ g_u)
    grads["b"] = g_u.sum(axis=0)
    if need_input_grad:
        grads["x"] = g_u @ p.W.T
    return grads


def encode(p, x):
    """Gaussian embedding of a single attribute vector."""
    fwd = forward(p, x)
    if fwd.mu.shape[0] != 1:
        raise ValidationError("encode takes one attribute vector; use forward() for batches")
    return GaussianEmbedding(fwd.mu[0], fwd.var[0])


def encode_backward(p, x, grad_mu, grad_sigma):
    return backward(p, forward(p, x), np.atleast_2d(grad_mu), np.atleast_2d(grad_sigma))


def encode_point(p, x):
    """Point embedding (mean head only), used by the LACE variant."""
    fwd = forward(p, x)
    return fwd.mu[0] if fwd.mu.shape[0] == 1 else fwd.mu


def embed_all(model, attributes, role="main"):
    """``(mu, var)`` for every row of ``attributes``."""
    enc = model.main if role == "main" else model.context
    fwd = forward(enc, attributes)
    return fwd.mu, fwd.var


# ---------------------------------------------------------------- checkpoints

_MAGIC = b"GLACECKP"
_VERSION = 1


def save_checkpoint(path, model):
    """Binary container: magic, version, JSON header, raw float64 tensors (row-major, little-endian)."""
    D, m, L = model.shape
    header = {
        "D": D,
        "m": m,
        "L": L,
        "mode": model.mode,
        "kind": model.kind,
        "seed": model.seed,
        "activation": model.main.activation,
        "encoders": list(model.encoders()),
        "tensors": list(TENSORS),
        "meta": model.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        for enc in model.encoders().values():
            for name in TENSORS:
                fh.write(np.ascontiguousarray(getattr(enc, name), dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValidationError(f"{path} is not a checkpoint file")
        version, n = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValidationError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(n).decode("utf-8"))
        D, m, L = header["D"], header["m"], header["L"]
        shapes = {"W": (D, m), "b": (m,), "W_mu": (m, L), "b_mu": (L,), "W_sigma": (m, L), "b_sigma": (L,)}
        encoders = {}
        for role in header["encoders"]:
            tensors = {}
            for name in header["tensors"]:
                count = int(np.prod(shapes[name]))
                raw = fh.read(8 * count)
                if len(raw) != 8 * count:
                    raise ValidationError(f"{path} is truncated")
                tensors[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shapes[name])
            encoders[role] = EncoderParams(**tensors, activation=header["activation"])
        if fh.read(1):
            raise ValidationError(f"{path} has trailing bytes")
    return ModelParams(
        encoders["main"],
        encoders.get("context"),
        header["mode"],
        header["kind"],
        header["seed"],
        header.get("meta", {}),
    )
