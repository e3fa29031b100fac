"""Link prediction, node classification and inductive evaluation."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import log_softmax, softmax

from glace.encoder import forward
from glace.errors import ValidationError
from glace.gauss import dissimilarity_batch
from glace.seeding import rng_for

# ---------------------------------------------------------------- embeddings and scores


@dataclass
class Embeddings:
    """Per-node embedding table. ``var`` is ``None`` for point (LACE) embeddings."""

    mu: np.ndarray
    var: np.ndarray = None
    kind: str = "glace"
    symmetric: bool = True
    node_ids: list = None

    @property
    def num_nodes(self):
        return self.mu.shape[0]

    @property
    def dim(self):
        return self.mu.shape[1]


def embed(model, attributes, node_ids=None):
    """Encode every attribute row with the model's main encoder."""
    fwd = forward(model.main, attributes)
    return Embeddings(
        mu=fwd.mu,
        var=None if model.kind == "lace" else fwd.var,
        kind=model.kind,
        symmetric=model.meta.get("symmetric", True),
        node_ids=node_ids,
    )


def score_pairs(emb, pairs):
    """Edge scores for ``(k, 2)`` pairs; higher means more likely linked."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= emb.num_nodes):
        raise ValidationError("pair refers to a node without an embedding")
    i, j = pairs[:, 0], pairs[:, 1]
    if emb.kind == "lace":
        return np.sum(emb.mu[i] * emb.mu[j], axis=1)
    return -dissimilarity_batch(emb.mu[i], emb.var[i], emb.mu[j], emb.var[j], emb.symmetric)


def pair_scores(model, attributes, pairs, symmetric=None):
    """Scores straight from a model; only the rows touched by ``pairs`` are encoded."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= attributes.shape[0]):
        raise ValidationError("pair refers to a node without attributes")
    nodes, inv = np.unique(pairs, return_inverse=True)
    emb = embed(model, attributes[nodes])
    if symmetric is not None:
        emb.symmetric = symmetric
    return score_pairs(emb, inv.reshape(-1, 2))


def score_pair(emb, i, j):
    return float(score_pairs(emb, [[i, j]])[0])


def _minmax(s):
    lo, hi = s.min(), s.max()
    return np.zeros_like(s) if hi == lo else (s - lo) / (hi - lo)


def concat_scores(embs, pairs, normalize=True):
    """Scores of independently trained models combined by summation.

    With ``normalize`` each model's scores are min-max scaled to ``[0, 1]``
    over ``pairs`` first.
    """
    total = 0.0
    for emb in embs:
        s = score_pairs(emb, pairs)
        total = total + (_minmax(s) if normalize and len(s) else s)
    return total


# ---------------------------------------------------------------- ranking metrics


def auc_score(pos, neg):
    """P(random positive outranks random negative), ties counted as one half."""
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.asarray(neg, dtype=np.float64).ravel()
    if not len(pos) or not len(neg):
        raise ValidationError("need at least one positive and one negative score")
    neg = np.sort(neg)
    # wins count 2, ties count 1; exact in integers
    doubled = np.searchsorted(neg, pos, "left").sum() + np.searchsorted(neg, pos, "right").sum()
    return float(doubled) / (2.0 * len(pos) * len(neg))


def average_precision(pos, neg):
    """Sum over distinct score thresholds of (recall gain) x (precision)."""
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.asarray(neg, dtype=np.float64).ravel()
    if not len(pos):
        raise ValidationError("need at least one positive score")
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]
    # close each block of tied scores at its last position
    last = np.append(np.flatnonzero(np.diff(scores)), len(scores) - 1)
    tp = np.cumsum(labels)[last]
    precision = tp / (last + 1)
    recall_gain = np.diff(tp, prepend=0.0) / len(pos)
    return float(np.sum(recall_gain * precision))


def link_prediction(pos_scores, neg_scores):
    """``(AUC, AP)`` for positive and negative pair scores."""
    return auc_score(pos_scores, neg_scores), average_precision(pos_scores, neg_scores)


def inductive_link_prediction(model, ind):
    """Encode hidden nodes from their attributes, then score the held-out pairs."""
    hidden_nnz = np.diff(sp.csr_matrix(ind.hidden_attr).indptr)
    if len(hidden_nnz) and np.any(hidden_nnz == 0):
        missing = ind.hidden_nodes[hidden_nnz == 0][:5].tolist()
        raise ValidationError(f"hidden nodes without attributes cannot be embedded: {missing}")
    attrs = ind.full_attributes()
    pos = pair_scores(model, attrs, ind.eval_pos)
    neg = pair_scores(model, attrs, ind.eval_neg)
    return link_prediction(pos, neg)


# ---------------------------------------------------------------- classification


class LogisticRegression:
    """Multinomial logistic regression with L2 penalty, fit by full-batch gradient descent.

    Uses Nesterov momentum with step ``1/Lip`` where ``Lip`` bounds the
    curvature of the mean cross-entropy. Stops when the gradient norm drops
    below ``tol`` or after ``max_epochs`` passes.
    """

    def __init__(self, l2=1e-4, max_epochs=500, tol=1e-5):
        self.l2 = l2
        self.max_epochs = max_epochs
        self.tol = tol

    def loss_and_grad(self, X, Y, W, b):
        """Mean cross-entropy + 0.5 * l2 * ||W||^2 and its gradient w.r.t. (W, b)."""
        n = X.shape[0]
        logits = X @ W + b
        logp = log_softmax(logits, axis=1)
        loss = -np.sum(Y * logp) / n + 0.5 * self.l2 * np.sum(W * W)
        err = (np.exp(logp) - Y) / n
        return loss, X.T @ err + self.l2 * W, err.sum(axis=0)

    def fit(self, X, y, num_classes=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        k = int(num_classes or y.max() + 1)
        n, d = X.shape
        Y = np.eye(k)[y]
        # largest eigenvalue of [X 1]^T [X 1] / n by power iteration
        v = np.ones(d + 1) / np.sqrt(d + 1)
        for _ in range(50):
            w = X @ v[:-1] + v[-1]
            v = np.r_[X.T @ w, w.sum()] / n
            v /= np.linalg.norm(v) or 1.0
        w = X @ v[:-1] + v[-1]
        lam = float(w @ w) / n
        step = 1.0 / (0.5 * lam * 1.01 + self.l2)

        W = np.zeros((d, k))
        b = np.zeros(k)
        W_prev, b_prev = W, b
        self.n_epochs = 0
        for epoch in range(1, self.max_epochs + 1):
            mom = (epoch - 1) / (epoch + 2)
            W_look = W + mom * (W - W_prev)
            b_look = b + mom * (b - b_prev)
            _, gW, gb = self.loss_and_grad(X, Y, W_look, b_look)
            W_prev, b_prev = W, b
            W = W_look - step * gW
            b = b_look - step * gb
            self.n_epochs = epoch
            _, gW, gb = self.loss_and_grad(X, Y, W, b)
            if np.sqrt(np.sum(gW * gW) + np.sum(gb * gb)) < self.tol:
                break
        self.coef_, self.intercept_ = W, b
        return self

    def predict_proba(self, X):
        return softmax(np.asarray(X) @ self.coef_ + self.intercept_, axis=1)

    def predict(self, X):
        return np.argmax(np.asarray(X) @ self.coef_ + self.intercept_, axis=1)


def f1_scores(y_true, y_pred, classes):
    """``(micro, macro)`` F1 over ``classes``."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    micro = float(np.mean(y_true == y_pred))
    f1 = []
    for c in classes:
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        f1.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return micro, float(np.mean(f1))


def _standardize(train, test):
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std[std == 0] = 1.0
    return (train - mean) / std, (test - mean) / std


def node_classification(features, labels, train_frac, seed=0, trials=10, standardize=True, max_retries=100, **lr_args):
    """Mean ``(micro F1, macro F1)`` over ``trials`` random labeled/unlabeled splits.

    Nodes with label ``-1`` are ignored. A trial whose training portion misses
    a class is redrawn, up to ``max_retries`` times.
    """
    if sp.issparse(features):
        features = features.toarray()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.flatnonzero(labels >= 0)
    classes = np.unique(labels[idx])
    if len(classes) < 2:
        raise ValidationError("node classification needs at least two classes")
    if not 0 < train_frac < 1:
        raise ValidationError("train_frac must lie in (0, 1)")
    n_train = int(round(train_frac * len(idx)))
    if n_train < 1 or n_train >= len(idx):
        raise ValidationError("train_frac leaves an empty train or test portion")
    remap = np.searchsorted(classes, labels[idx])

    micro, macro = [], []
    for t in range(trials):
        rng = rng_for(seed, "eval-trial", t)
        for _ in range(max_retries):
            perm = rng.permutation(len(idx))
            tr, te = perm[:n_train], perm[n_train:]
            if len(np.unique(remap[tr])) == len(classes):
                break
        else:
            raise ValidationError(f"could not draw a training portion covering all {len(classes)} classes")
        X_tr, X_te = features[idx[tr]], features[idx[te]]
        if standardize:
            X_tr, X_te = _standardize(X_tr, X_te)
        clf = LogisticRegression(**lr_args).fit(X_tr, remap[tr], len(classes))
        mi, ma = f1_scores(remap[te], clf.predict(X_te), range(len(classes)))
        micro.append(mi)
        macro.append(ma)
    return float(np.mean(micro)), float(np.mean(macro))


def classification_features(emb, with_sigma=False):
    """Mean vectors, optionally followed by log-variances."""
    if with_sigma and emb.var is not None:
        return np.hstack([emb.mu, np.log(emb.var)])
    return emb.mu


# ---------------------------------------------------------------- reports and export


@dataclass
class EvalReport:
    task: str
    auc: float = None
    ap: float = None
    f1_micro: float = None
    f1_macro: float = None
    seed: int = 0
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("auc", "ap", "f1_micro", "f1_macro"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")

    def to_text(self):
        lines = [f"task={self.task}", f"seed={self.seed}"]
        for name in ("auc", "ap", "f1_micro", "f1_macro"):
            v = getattr(self, name)
            if v is not None:
                lines.append(f"{name}={v:.6f}")
        for k, v in sorted(self.extra.items()):
            lines.append(f"{k}={v}")
        for k, v in sorted(self.config.items()):
            lines.append(f"config.{k}={v}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def export_embeddings(emb, path):
    """TSV: ``node_id``, ``mu_1..mu_L`` and (Gaussian only) ``sigma_1..sigma_L``."""
    L = emb.dim
    node_ids = emb.node_ids or [str(i) for i in range(emb.num_nodes)]
    cols = ["node_id"] + [f"mu_{k}" for k in range(1, L + 1)]
    blocks = [emb.mu]
    if emb.var is not None:
        cols += [f"sigma_{k}" for k in range(1, L + 1)]
        blocks.append(emb.var)
    values = np.hstack(blocks)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# kind={emb.kind} symmetric={int(emb.symmetric)}\n")
        fh.write("\t".join(cols) + "\n")
        for nid, row in zip(node_ids, values):
            fh.write(nid + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")


def load_embeddings(path):
    with open(path, encoding="utf-8") as fh:
        meta = dict(kv.split("=") for kv in fh.readline().lstrip("#").split())
        cols = fh.readline().rstrip("\n").split("\t")
        ids, rows = [], []
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(cols) - 1)
    L = sum(c.startswith("mu_") for c in cols)
    var = values[:, L:] if any(c.startswith("sigma_") for c in cols) else None
    return Embeddings(values[:, :L], var, meta.get("kind", "glace"), meta.get("symmetric", "1") == "1", ids)
