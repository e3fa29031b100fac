"""Mini-batch optimization of the negative-sampling proximity objectives."""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from glace import sampler
from glace.encoder import KINDS, MODES, TENSORS, backward, forward, init_model
from glace.errors import NumericalError, ValidationError
from glace.evaluate import link_prediction, pair_scores
from glace.gauss import dissimilarity_grad_batch, sigmoid
from glace.seeding import rng_for

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    mode: str = "first"
    kind: str = "glace"
    L: int = 64
    m: int = 512
    N: int = 5
    batch_size: int = 512
    learning_rate: float = 1e-3
    max_iters: int = 2000
    patience: int = 10
    val_check_every: int = 25
    seed: int = 0
    # None means: symmetric on undirected graphs, asymmetric on directed ones
    symmetric_kl: bool = None
    hidden_activation: str = "linear"
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        for name in ("L", "m", "N", "batch_size", "max_iters", "patience", "val_check_every", "workers"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")

    def resolved_symmetric(self, directed):
        return (not directed) if self.symmetric_kl is None else bool(self.symmetric_kl)

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    iterations_run: int = 0
    val_auc_history: list = field(default_factory=list)
    best_iteration: int = 0
    best_val_auc: float = float("nan")
    wall_clock: float = 0.0
    loss_history: list = field(default_factory=list)


# ---------------------------------------------------------------- loss


def _pair_grads(kind, mu_a, var_a, mu_b, var_b, symmetric):
    """Dissimilarity of row pairs and its partials."""
    if kind == "lace":
        d = -np.sum(mu_a * mu_b, axis=1)
        zeros = np.zeros_like(var_a)
        return d, -mu_b, zeros, -mu_a, np.zeros_like(var_b)
    return dissimilarity_grad_batch(mu_a, var_a, mu_b, var_b, symmetric)


def batch_loss(model, attributes, batch, negatives, symmetric=True, need_grad=True):
    """Negated negative-sampling objective summed over a batch of edges.

    ``batch`` is ``(B, 2)`` (anchor, target); ``negatives`` is ``(B, N)``.
    In first-order mode every node is encoded by the main encoder. In
    second-order mode targets and negatives go through the context encoder.

    Returns ``(loss, grads, per_edge_loss)`` where ``grads`` maps encoder role
    to a dict of tensor gradients (``None`` when ``need_grad`` is false).
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(len(batch), -1)
    B, N = negatives.shape
    anchors, targets = batch[:, 0], batch[:, 1]
    others = np.concatenate([targets, negatives.ravel()])

    if model.mode == "first":
        nodes, inv = np.unique(np.concatenate([anchors, others]), return_inverse=True)
        fwd_a = fwd_o = forward(model.main, attributes[nodes])
        ia, io = inv[:B], inv[B:]
    else:
        nodes_a, ia = np.unique(anchors, return_inverse=True)
        nodes_o, io = np.unique(others, return_inverse=True)
        fwd_a = forward(model.main, attributes[nodes_a])
        fwd_o = forward(model.context, attributes[nodes_o])

    # anchor row repeated for the positive and each negative
    left = np.concatenate([ia, np.repeat(ia, N)])
    sign = np.concatenate([np.ones(B), -np.ones(B * N)])
    d, gmu_a, gvar_a, gmu_o, gvar_o = _pair_grads(
        model.kind, fwd_a.mu[left], fwd_a.var[left], fwd_o.mu[io], fwd_o.var[io], symmetric
    )
    # positive: -log sig(-d) = softplus(d); negative: -log sig(d) = softplus(-d)
    terms = np.logaddexp(0.0, sign * d)
    per_edge = terms[:B] + terms[B:].reshape(B, N).sum(axis=1)
    loss = float(per_edge.sum())
    if not need_grad:
        return loss, None, per_edge

    dl_dd = (sign * sigmoid(sign * d))[:, None]
    g_mu_a = _scatter(left, dl_dd * gmu_a, fwd_a.mu.shape)
    g_var_a = _scatter(left, dl_dd * gvar_a, fwd_a.var.shape)
    g_mu_o = _scatter(io, dl_dd * gmu_o, fwd_o.mu.shape)
    g_var_o = _scatter(io, dl_dd * gvar_o, fwd_o.var.shape)

    if model.mode == "first":
        grads = {"main": backward(model.main, fwd_a, g_mu_a + g_mu_o, g_var_a + g_var_o)}
    else:
        grads = {
            "main": backward(model.main, fwd_a, g_mu_a, g_var_a),
            "context": backward(model.context, fwd_o, g_mu_o, g_var_o),
        }
    return loss, grads, per_edge


def _scatter(index, values, shape):
    """Row sums ``out[index[k]] += values[k]`` via a sparse indicator product."""
    n = len(index)
    S = sp.csr_matrix((np.ones(n), (index, np.arange(n))), shape=(shape[0], n))
    return np.asarray(S @ values).reshape(shape)


def batch_loss_first(model, attributes, batch, negatives, symmetric=True):
    if model.mode != "first":
        raise ValidationError("batch_loss_first needs a first-order model")
    loss, grads, _ = batch_loss(model, attributes, batch, negatives, symmetric)
    return loss, grads


def batch_loss_second(model, attributes, batch, negatives, symmetric=True):
    if model.mode != "second":
        raise ValidationError("batch_loss_second needs a second-order model")
    loss, grads, _ = batch_loss(model, attributes, batch, negatives, symmetric)
    return loss, grads


def parallel_batch_loss(model, attributes, batch, negatives, symmetric, workers):
    """Split the batch into ``workers`` chunks and sum gradients in chunk order."""
    if workers <= 1 or len(batch) < 2 * workers:
        return batch_loss(model, attributes, batch, negatives, symmetric)
    chunks = np.array_split(np.arange(len(batch)), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(
            pool.map(lambda idx: batch_loss(model, attributes, batch[idx], negatives[idx], symmetric), chunks)
        )
    loss = sum(p[0] for p in parts)
    grads = {role: {name: sum(p[1][role][name] for p in parts) for name in TENSORS} for role in parts[0][1]}
    return loss, grads, np.concatenate([p[2] for p in parts])


# ---------------------------------------------------------------- Adam


class AdamState:
    """First/second moment buffers keyed by ``(role, tensor)``."""

    def __init__(self, model, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}
        self._scratch = {}
        for role, enc in model.encoders().items():
            for name in TENSORS:
                self.m[role, name] = np.zeros_like(getattr(enc, name))
                self.v[role, name] = np.zeros_like(getattr(enc, name))
                self._scratch[role, name] = np.empty_like(getattr(enc, name))


def adam_step(state, model, grads, lr):
    """In-place bias-corrected Adam update. Returns ``model``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    step = lr / c1
    inv_sqrt_c2 = 1.0 / math.sqrt(c2)
    for role, enc in model.encoders().items():
        if role not in grads:
            continue
        for name in TENSORS:
            g = grads[role][name]
            m = state.m[role, name]
            v = state.v[role, name]
            tmp = state._scratch[role, name]
            # in place to avoid temporaries on the large input-layer matrix
            m *= b1
            np.multiply(g, 1.0 - b1, out=tmp)
            m += tmp
            v *= b2
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - b2
            v += tmp
            np.sqrt(v, out=tmp)
            tmp *= inv_sqrt_c2
            tmp += state.eps
            np.divide(m, tmp, out=tmp)
            tmp *= step
            getattr(enc, name)[...] -= tmp
    return model


# ---------------------------------------------------------------- loop


def validation_auc(model, attributes, pos, neg, symmetric):
    scores = pair_scores(model, attributes, np.concatenate([pos, neg]), symmetric)
    auc, _ = link_prediction(scores[: len(pos)], scores[len(pos):])
    return auc


def train(graph, split, config, init=None, log_file=None):
    """Fit a model on the training edges of ``split``.

    ``graph`` supplies the node attributes; ``split`` may be ``None`` to train
    on every edge of ``graph`` without validation. ``log_file`` receives one
    ``iter<TAB>val_auc<TAB>elapsed_sec`` line per validation check.
    """
    start = time.perf_counter()
    train_graph = graph if split is None else split.train_graph(graph)
    if train_graph.num_arcs < 1:
        raise ValidationError("no training edges")
    symmetric = config.resolved_symmetric(graph.directed)
    attributes = graph.attributes
    D = graph.num_attributes

    if init is None:
        model = init_model(D, config.m, config.L, config.seed, config.mode, config.kind, config.hidden_activation)
    else:
        model = init.copy()
        if model.shape[0] != D or model.mode != config.mode or model.kind != config.kind:
            raise ValidationError("checkpoint does not match the graph or configuration")
    model.meta.update({"symmetric": symmetric, "directed": graph.directed})
    opt = AdamState(model)

    edges = sampler.edge_sampler(train_graph)
    noise = sampler.noise_distribution(train_graph)
    validate = split is not None and split.has_validation()

    report = TrainReport()
    best = None
    stale = 0
    for it in range(1, config.max_iters + 1):
        rng = rng_for(config.seed, "batch", it)
        arcs = sampler.draw(edges, rng, config.batch_size)
        batch = np.stack([train_graph.arc_src[arcs], train_graph.arc_dst[arcs]], axis=1)
        negatives = sampler.draw_negatives(noise, rng, batch[:, 0], config.N)
        loss, grads, per_edge = parallel_batch_loss(model, attributes, batch, negatives, symmetric, config.workers)
        if not math.isfinite(loss):
            bad = int(np.flatnonzero(~np.isfinite(per_edge))[0])
            raise NumericalError(
                f"non-finite loss at iteration {it}, edge ({batch[bad, 0]}, {batch[bad, 1]})"
            )
        adam_step(opt, model, grads, config.learning_rate)
        report.loss_history.append(loss / len(batch))
        report.iterations_run = it

        if validate and (it % config.val_check_every == 0 or it == config.max_iters):
            auc = validation_auc(model, attributes, split.val_pos, split.val_neg, symmetric)
            elapsed = time.perf_counter() - start
            report.val_auc_history.append((it, auc))
            if log_file is not None:
                log_file.write(f"{it}\t{auc:.6f}\t{elapsed:.3f}\n")
                log_file.flush()
            log.info("iter %d  loss %.4f  val_auc %.4f", it, loss / len(batch), auc)
            if best is None or auc > report.best_val_auc:
                best = model.copy()
                report.best_val_auc = auc
                report.best_iteration = it
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break

    if best is not None:
        model = best
    else:
        report.best_iteration = report.iterations_run
    report.wall_clock = time.perf_counter() - start
    return model, report
