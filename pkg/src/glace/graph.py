"""Attributed graph container, file loaders and train/test splitting."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from glace.errors import ParseError, ValidationError
from glace.seeding import rng_for

log = logging.getLogger(__name__)

# rejection sampling gives up after this many attempts per requested pair
REJECTION_FACTOR = 100


def _readonly(a):
    a.setflags(write=False)
    return a


class AttributedGraph:
    """Immutable weighted graph with a sparse node-attribute matrix.

    ``src``/``dst``/``weight`` hold the edge list as given (an undirected edge
    appears once). The arc arrays and the CSR index hold the materialized
    directed arcs: undirected edges become two arcs of equal weight.
    """

    def __init__(self, num_nodes, src, dst, weight, attributes, directed=False, node_ids=None):
        num_nodes = int(num_nodes)
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        weight = np.asarray(weight, dtype=np.float64).reshape(-1)
        if not (len(src) == len(dst) == len(weight)):
            raise ValidationError("src, dst and weight must have equal length")
        if len(src) and (src.min() < 0 or dst.min() < 0 or src.max() >= num_nodes or dst.max() >= num_nodes):
            raise ValidationError(f"edge endpoint outside [0, {num_nodes})")
        if len(weight) and not np.all(weight > 0):
            raise ValidationError("edge weights must be strictly positive")
        if not np.all(np.isfinite(weight)):
            raise ValidationError("edge weights must be finite")
        attributes = sp.csr_matrix(attributes, dtype=np.float64)
        if attributes.shape[0] != num_nodes:
            raise ValidationError(
                f"attribute matrix has {attributes.shape[0]} rows but graph has {num_nodes} nodes"
            )
        if attributes.nnz and (attributes.data.min() < 0 or not np.all(np.isfinite(attributes.data))):
            raise ValidationError("attributes must be finite and nonnegative")
        attributes.sort_indices()

        self.num_nodes = num_nodes
        self.directed = bool(directed)
        self.src = _readonly(src)
        self.dst = _readonly(dst)
        self.weight = _readonly(weight)
        self.attributes = attributes
        if node_ids is None:
            node_ids = [str(i) for i in range(num_nodes)]
        if len(node_ids) != num_nodes:
            raise ValidationError("node_ids length must equal num_nodes")
        self.node_ids = list(node_ids)

        if self.directed:
            a_src, a_dst, a_w = src, dst, weight
        else:
            a_src = np.concatenate([src, dst])
            a_dst = np.concatenate([dst, src])
            a_w = np.concatenate([weight, weight])
        order = np.lexsort((a_dst, a_src))
        self.arc_src = _readonly(a_src[order])
        self.arc_dst = _readonly(a_dst[order])
        self.arc_weight = _readonly(a_w[order])
        keys = self.arc_src * num_nodes + self.arc_dst
        if len(keys) > 1 and np.any(keys[1:] == keys[:-1]):
            raise ValidationError("duplicate edges (multigraphs are not supported)")
        self._arc_keys = _readonly(keys)
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.arc_src, minlength=num_nodes), out=indptr[1:])
        self.indptr = _readonly(indptr)

    @property
    def num_edges(self):
        return len(self.src)

    @property
    def num_arcs(self):
        return len(self.arc_src)

    @property
    def num_attributes(self):
        return self.attributes.shape[1]

    @property
    def indices(self):
        return self.arc_dst

    def neighbors(self, i):
        """Out-neighbors of ``i`` and the matching arc weights."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.arc_dst[lo:hi], self.arc_weight[lo:hi]

    def out_degree(self):
        """Weighted out-degree of every node."""
        return np.bincount(self.arc_src, weights=self.arc_weight, minlength=self.num_nodes)

    def adjacency(self):
        return sp.csr_matrix(
            (self.arc_weight, self.arc_dst, self.indptr), shape=(self.num_nodes, self.num_nodes)
        )

    def has_arc(self, a, b):
        """Vectorized membership test for arcs ``a -> b``."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        keys = a * self.num_nodes + b
        if not len(self._arc_keys):
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self._arc_keys, keys)
        pos = np.minimum(pos, len(self._arc_keys) - 1)
        return self._arc_keys[pos] == keys

    def linked(self, a, b):
        """True where ``a`` and ``b`` are joined by an arc in either direction."""
        return self.has_arc(a, b) | self.has_arc(b, a)

    def edges(self):
        return np.stack([self.src, self.dst], axis=1)

    def with_edges(self, src, dst, weight):
        """Same nodes and attributes, different edge set."""
        return AttributedGraph(
            self.num_nodes, src, dst, weight, self.attributes, self.directed, self.node_ids
        )

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return (
            f"AttributedGraph({self.num_nodes} nodes, {self.num_edges} {kind} edges, "
            f"D={self.num_attributes})"
        )


# ---------------------------------------------------------------- loading


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def _parse_edges(path):
    rows = []
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) not in (2, 3):
            raise ParseError(path, lineno, f"expected 'src dst [weight]', got {line!r}")
        if len(parts) == 3:
            try:
                w = float(parts[2])
            except ValueError:
                raise ParseError(path, lineno, f"bad weight {parts[2]!r}") from None
        else:
            w = 1.0
        rows.append((parts[0], parts[1], w, lineno))
    return rows


def _parse_attributes(path):
    """Returns (num_nodes, D, dense_matrix_or_None, triplets_or_None)."""
    lines = _data_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise ParseError(path, 1, "missing 'num_nodes D' header") from None
    parts = header.split()
    try:
        if len(parts) != 2:
            raise ValueError
        n, d = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(path, lineno, f"expected 'num_nodes D' header, got {header!r}") from None
    if n < 0 or d < 1:
        raise ParseError(path, lineno, "num_nodes must be >= 0 and D >= 1")

    first = next(lines, None)
    if first is not None and first[1].lower() == "dense":
        dense = []
        for lineno, line in lines:
            try:
                row = [float(v) for v in line.replace(",", " ").split()]
            except ValueError:
                raise ParseError(path, lineno, "non-numeric value in dense row") from None
            if len(row) != d:
                raise ParseError(path, lineno, f"dense row has {len(row)} values, expected {d}")
            dense.append(row)
        if len(dense) != n:
            raise ValidationError(f"{path}: header says {n} nodes but {len(dense)} dense rows given")
        return n, d, np.asarray(dense, dtype=np.float64).reshape(n, d), None

    triplets = []
    rest = lines if first is None else _chain_first(first, lines)
    for lineno, line in rest:
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(path, lineno, f"expected 'row col value', got {line!r}")
        try:
            col, val = int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(path, lineno, f"bad column or value in {line!r}") from None
        if not 0 <= col < d:
            raise ParseError(path, lineno, f"column {col} outside [0, {d})")
        triplets.append((parts[0], col, val, lineno))
    return n, d, None, triplets


def _chain_first(first, rest):
    yield first
    yield from rest


def _as_index(token, n):
    try:
        v = int(token)
    except ValueError:
        return None
    return v if 0 <= v < n else None


def load_graph(edge_path, attr_path, directed=False):
    """Read an edge file and an attribute file into an :class:`AttributedGraph`.

    Node labels that are all integers in ``[0, num_nodes)`` are used as
    indices directly. Otherwise labels are densified in order of first
    appearance (attribute file, then edge file) and kept in ``node_ids``.
    """
    edge_path, attr_path = Path(edge_path), Path(attr_path)
    for p in (edge_path, attr_path):
        if not p.exists():
            raise ValidationError(f"no such file: {p}")
    n, d, dense, triplets = _parse_attributes(attr_path)
    edge_rows = _parse_edges(edge_path)

    labels = []
    if triplets is not None:
        labels.extend(t[0] for t in triplets)
    labels.extend(r[0] for r in edge_rows)
    labels.extend(r[1] for r in edge_rows)
    if all(_as_index(t, n) is not None for t in labels):
        index = None
        node_ids = [str(i) for i in range(n)]
    else:
        if dense is not None:
            raise ValidationError("dense attribute files require integer node ids in [0, num_nodes)")
        index = {}
        for t in labels:
            if t not in index:
                index[t] = len(index)
        if len(index) > n:
            raise ValidationError(f"found {len(index)} distinct node ids but header declares {n} nodes")
        node_ids = list(index) + [f"_{k}" for k in range(len(index), n)]

    def resolve(t):
        return int(t) if index is None else index[t]

    if dense is not None:
        attrs = sp.csr_matrix(dense)
    else:
        if triplets:
            r = np.array([resolve(t[0]) for t in triplets], dtype=np.int64)
            c = np.array([t[1] for t in triplets], dtype=np.int64)
            v = np.array([t[2] for t in triplets], dtype=np.float64)
        else:
            r = c = np.zeros(0, dtype=np.int64)
            v = np.zeros(0)
        attrs = sp.coo_matrix((v, (r, c)), shape=(n, d)).tocsr()

    seen = {}
    src, dst, w = [], [], []
    for a_tok, b_tok, wt, lineno in edge_rows:
        if not wt > 0 or not np.isfinite(wt):
            raise ValidationError(f"{edge_path}:{lineno}: edge weight must be positive, got {wt}")
        a, b = resolve(a_tok), resolve(b_tok)
        if a == b:
            log.warning("%s:%d: dropping self-loop on %s", edge_path, lineno, a_tok)
            continue
        key = (a, b) if directed else (min(a, b), max(a, b))
        if key in seen:
            if seen[key] != wt:
                raise ValidationError(f"{edge_path}:{lineno}: duplicate edge {a_tok} {b_tok} with a different weight")
            continue
        seen[key] = wt
        src.append(a)
        dst.append(b)
        w.append(wt)
    return AttributedGraph(n, src, dst, w, attrs, directed=directed, node_ids=node_ids)


def load_labels(path, graph):
    """Read ``node_id label`` lines. Unlabeled nodes get -1.

    Returns (labels, class_names).
    """
    index = {nid: i for i, nid in enumerate(graph.node_ids)}
    labels = np.full(graph.num_nodes, -1, dtype=np.int64)
    classes = {}
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(path, lineno, f"expected 'node_id label', got {line!r}")
        if parts[0] not in index:
            raise ValidationError(f"{path}:{lineno}: unknown node id {parts[0]!r}")
        labels[index[parts[0]]] = classes.setdefault(parts[1], len(classes))
    return labels, list(classes)


def write_id_map(path, node_ids):
    with open(path, "w", encoding="utf-8") as fh:
        for i, nid in enumerate(node_ids):
            fh.write(f"{i}\t{nid}\n")


def read_id_map(path):
    ids = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 2 or int(parts[0]) != len(ids):
            raise ParseError(path, lineno, "id map lines must be 'index<TAB>id' in order")
        ids.append(parts[1])
    return ids


# ---------------------------------------------------------------- splits


@dataclass
class EdgeSplit:
    """Link-prediction split. Pair arrays are ``(k, 2)`` int64."""

    num_nodes: int
    directed: bool
    seed: int
    train_edges: np.ndarray
    train_weights: np.ndarray
    val_pos: np.ndarray
    val_pos_weights: np.ndarray
    val_neg: np.ndarray
    test_pos: np.ndarray
    test_pos_weights: np.ndarray
    test_neg: np.ndarray

    def train_graph(self, graph):
        return graph.with_edges(self.train_edges[:, 0], self.train_edges[:, 1], self.train_weights)

    def has_validation(self):
        return len(self.val_pos) > 0 and len(self.val_neg) > 0


@dataclass
class InductiveSplit:
    """Graph with a node subset hidden from training.

    ``visible_nodes[k]`` is the original id of visible node ``k``. Evaluation
    pairs use original ids.
    """

    num_nodes: int
    seed: int
    visible_graph: AttributedGraph
    visible_nodes: np.ndarray
    hidden_nodes: np.ndarray
    hidden_attr: sp.csr_matrix
    eval_pos: np.ndarray
    eval_neg: np.ndarray

    def full_attributes(self):
        """Attribute matrix in original node order (visible and hidden rows)."""
        vis = self.visible_graph.attributes.tocoo()
        hid = sp.csr_matrix(self.hidden_attr).tocoo()
        rows = np.concatenate([self.visible_nodes[vis.row], self.hidden_nodes[hid.row]])
        cols = np.concatenate([vis.col, hid.col])
        vals = np.concatenate([vis.data, hid.data])
        d = self.visible_graph.num_attributes
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.num_nodes, d)).tocsr()


def _sample_non_edges(graph, count, rng, draw_pair, exclude=()):
    """Rejection-sample ``count`` distinct node pairs that are not linked."""
    out = np.zeros((0, 2), dtype=np.int64)
    if count == 0:
        return out
    n = graph.num_nodes
    seen = set(exclude)
    found = []
    budget = REJECTION_FACTOR * count
    attempts = 0
    while len(found) < count:
        if attempts >= budget:
            raise ValidationError(
                f"could only find {len(found)} of {count} non-edges after {attempts} draws; "
                "graph is too dense for the requested split"
            )
        size = min(max(2 * (count - len(found)), 64), budget - attempts)
        a, b = draw_pair(rng, size)
        attempts += size
        ok = (a != b) & ~graph.linked(a, b)
        for x, y in zip(a[ok].tolist(), b[ok].tolist()):
            key = (x, y) if graph.directed else (min(x, y), max(x, y))
            if key in seen:
                continue
            seen.add(key)
            found.append((x, y))
            if len(found) == count:
                break
    out = np.array(found, dtype=np.int64).reshape(-1, 2)
    assert out.max(initial=-1) < n
    return out


def split_edges(graph, test_frac=0.2, val_frac=0.0, seed=0):
    """Random edge split with an equal number of sampled non-edges.

    Validation edges are carved out of the training portion. ``test_frac=0``
    yields a validation-only split (used when training on a visible subgraph).
    """
    if graph.num_edges < 1:
        raise ValidationError("cannot split a graph with no edges")
    if not 0 <= test_frac < 1 or not 0 <= val_frac < 1 or test_frac + val_frac >= 1:
        raise ValidationError("need 0 <= test_frac < 1, 0 <= val_frac < 1 and test_frac + val_frac < 1")
    m = graph.num_edges
    n_test = int(round(test_frac * m))
    n_val = int(round(val_frac * m))
    rng = rng_for(seed, "split")
    perm = rng.permutation(m)
    test_idx = np.sort(perm[:n_test])
    val_idx = np.sort(perm[n_test:n_test + n_val])
    train_idx = np.sort(perm[n_test + n_val:])

    n = graph.num_nodes

    def uniform_pairs(r, size):
        return r.integers(0, n, size), r.integers(0, n, size)

    neg = _sample_non_edges(graph, n_test + n_val, rng, uniform_pairs)
    pairs = graph.edges()
    return EdgeSplit(
        num_nodes=n,
        directed=graph.directed,
        seed=int(seed),
        train_edges=pairs[train_idx],
        train_weights=graph.weight[train_idx].copy(),
        val_pos=pairs[val_idx],
        val_pos_weights=graph.weight[val_idx].copy(),
        val_neg=neg[n_test:],
        test_pos=pairs[test_idx],
        test_pos_weights=graph.weight[test_idx].copy(),
        test_neg=neg[:n_test],
    )


def hide_nodes(graph, frac, seed=0):
    """Hide a random node subset and all its edges for inductive evaluation."""
    if graph.num_nodes == 0:
        raise ValidationError("graph has no nodes")
    if not 0 <= frac < 1:
        raise ValidationError("frac must lie in [0, 1)")
    n = graph.num_nodes
    n_hidden = int(round(frac * n))
    rng = rng_for(seed, "hide")
    hidden = np.sort(rng.choice(n, size=n_hidden, replace=False)).astype(np.int64)
    ind = hidden_split(graph, hidden, seed)

    def hidden_pairs(r, size):
        h = hidden[r.integers(0, len(hidden), size)]
        o = r.integers(0, n, size)
        flip = r.random(size) < 0.5
        return np.where(flip, o, h), np.where(flip, h, o)

    if len(ind.eval_pos):
        ind.eval_neg = _sample_non_edges(graph, len(ind.eval_pos), rng, hidden_pairs)
    return ind


def hidden_split(graph, hidden, seed=0, eval_pos=None, eval_neg=None):
    """Remove ``hidden`` nodes and their edges; removed edges become ``eval_pos``."""
    n = graph.num_nodes
    hidden = np.asarray(hidden, dtype=np.int64)
    n_hidden = len(hidden)
    is_hidden = np.zeros(n, dtype=bool)
    is_hidden[hidden] = True
    visible = np.flatnonzero(~is_hidden).astype(np.int64)
    touched = is_hidden[graph.src] | is_hidden[graph.dst]
    if np.all(touched):
        raise ValidationError(f"hiding {n_hidden} nodes leaves the visible graph without edges")

    remap = np.full(n, -1, dtype=np.int64)
    remap[visible] = np.arange(len(visible))
    keep = ~touched
    visible_graph = AttributedGraph(
        len(visible),
        remap[graph.src[keep]],
        remap[graph.dst[keep]],
        graph.weight[keep],
        graph.attributes[visible],
        directed=graph.directed,
        node_ids=[graph.node_ids[i] for i in visible],
    )
    if eval_pos is None:
        eval_pos = graph.edges()[touched]
    if eval_neg is None:
        eval_neg = np.zeros((0, 2), dtype=np.int64)
    return InductiveSplit(
        num_nodes=n,
        seed=int(seed),
        visible_graph=visible_graph,
        visible_nodes=visible,
        hidden_nodes=hidden,
        hidden_attr=graph.attributes[hidden],
        eval_pos=eval_pos,
        eval_neg=eval_neg,
    )


# ---------------------------------------------------------------- manifests

_SPLIT_SECTIONS = ("train", "val_pos", "val_neg", "test_pos", "test_neg")


def write_split(path, split):
    """Write an :class:`EdgeSplit` as a replayable plain-text manifest."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# glace split manifest v1\n")
        fh.write(f"num_nodes {split.num_nodes}\n")
        fh.write(f"directed {int(split.directed)}\n")
        fh.write(f"seed {split.seed}\n")
        blocks = {
            "train": (split.train_edges, split.train_weights),
            "val_pos": (split.val_pos, split.val_pos_weights),
            "val_neg": (split.val_neg, None),
            "test_pos": (split.test_pos, split.test_pos_weights),
            "test_neg": (split.test_neg, None),
        }
        for name in _SPLIT_SECTIONS:
            pairs, weights = blocks[name]
            fh.write(f"[{name}] {len(pairs)}\n")
            for k, (a, b) in enumerate(pairs.tolist()):
                if weights is None:
                    fh.write(f"{a} {b}\n")
                else:
                    fh.write(f"{a} {b} {float(weights[k])!r}\n")


def read_split(path):
    header = {}
    blocks = {name: [] for name in _SPLIT_SECTIONS}
    current = None
    for lineno, line in _data_lines(path):
        if line.startswith("["):
            name = line[1:line.index("]")]
            if name not in blocks:
                raise ParseError(path, lineno, f"unknown section {name!r}")
            current = name
            continue
        parts = line.split()
        if current is None:
            if len(parts) != 2:
                raise ParseError(path, lineno, f"bad header line {line!r}")
            header[parts[0]] = int(parts[1])
            continue
        try:
            blocks[current].append([float(p) for p in parts])
        except ValueError:
            raise ParseError(path, lineno, f"bad pair {line!r}") from None

    def pairs(name, weighted):
        rows = blocks[name]
        if not rows:
            return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
        arr = np.array(rows)
        if arr.shape[1] != (3 if weighted else 2):
            raise ValidationError(f"{path}: section {name} has wrong column count")
        w = arr[:, 2] if weighted else None
        return arr[:, :2].astype(np.int64), w

    train, train_w = pairs("train", True)
    val_pos, val_w = pairs("val_pos", True)
    test_pos, test_w = pairs("test_pos", True)
    return EdgeSplit(
        num_nodes=header["num_nodes"],
        directed=bool(header["directed"]),
        seed=header["seed"],
        train_edges=train,
        train_weights=train_w,
        val_pos=val_pos,
        val_pos_weights=val_w,
        val_neg=pairs("val_neg", False)[0],
        test_pos=test_pos,
        test_pos_weights=test_w,
        test_neg=pairs("test_neg", False)[0],
    )


def write_inductive(path, ind):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# glace inductive manifest v1\n")
        fh.write(f"num_nodes {ind.num_nodes}\n")
        fh.write(f"seed {ind.seed}\n")
        fh.write(f"[hidden] {len(ind.hidden_nodes)}\n")
        for h in ind.hidden_nodes.tolist():
            fh.write(f"{h}\n")
        for name, pairs in (("eval_pos", ind.eval_pos), ("eval_neg", ind.eval_neg)):
            fh.write(f"[{name}] {len(pairs)}\n")
            for a, b in pairs.tolist():
                fh.write(f"{a} {b}\n")


def read_inductive(path, graph):
    """Rebuild an :class:`InductiveSplit` of ``graph`` from a manifest."""
    header, blocks, current = {}, {"hidden": [], "eval_pos": [], "eval_neg": []}, None
    for lineno, line in _data_lines(path):
        if line.startswith("["):
            current = line[1:line.index("]")]
            if current not in blocks:
                raise ParseError(path, lineno, f"unknown section {current!r}")
            continue
        parts = line.split()
        try:
            if current is None:
                header[parts[0]] = int(parts[1])
            else:
                blocks[current].append([int(p) for p in parts])
        except (ValueError, IndexError):
            raise ParseError(path, lineno, f"bad line {line!r}") from None
    if header.get("num_nodes") != graph.num_nodes:
        raise ValidationError(f"{path} was written for a graph with {header.get('num_nodes')} nodes")
    hidden = np.array([h[0] for h in blocks["hidden"]], dtype=np.int64)
    return hidden_split(graph, hidden, header.get("seed", 0),
                        np.array(blocks["eval_pos"], dtype=np.int64).reshape(-1, 2),
                        np.array(blocks["eval_neg"], dtype=np.int64).reshape(-1, 2))
