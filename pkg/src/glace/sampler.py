"""Alias-method sampling for edge batches and negative nodes."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from glace.errors import ValidationError


@dataclass(frozen=True)
class AliasTable:
    prob: np.ndarray
    alias: np.ndarray

    @property
    def n(self):
        return len(self.prob)

    @cached_property
    def support_size(self):
        return int(np.count_nonzero(self.probabilities() > 0))

    def probabilities(self):
        """Exact per-index probability encoded by the table."""
        n = self.n
        p = self.prob / n
        np.add.at(p, self.alias, (1.0 - self.prob) / n)
        return p


def build_alias(weights):
    """Vose's alias method, O(n).

    Indices left over at the end (due to rounding) keep probability one and
    alias to themselves.
    """
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("alias weights must be finite and nonnegative")
    total = w.sum()
    if not total > 0:
        raise ValidationError("alias weights need at least one positive entry")
    n = len(w)
    scaled = (w / total) * n
    prob = np.ones(n)
    alias = np.arange(n, dtype=np.int64)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small.append(g)
        else:
            large.append(g)
    # rounding leftovers keep prob 1, except true zeros which must never be drawn
    for s in small:
        if w[s] == 0:
            prob[s] = 0.0
            alias[s] = int(np.argmax(w))
    prob.setflags(write=False)
    alias.setflags(write=False)
    return AliasTable(prob, alias)


def draw(table, rng, size=None):
    """Draw one index (``size=None``) or an array of indices."""
    if size is None:
        i = int(rng.integers(table.n))
        return i if rng.random() < table.prob[i] else int(table.alias[i])
    i = rng.integers(0, table.n, size)
    u = rng.random(size)
    return np.where(u < table.prob[i], i, table.alias[i])


def noise_distribution(graph, power=0.75):
    """Negative-node sampler with mass proportional to weighted out-degree ** power."""
    if graph.num_arcs < 1:
        raise ValidationError("noise distribution needs at least one arc")
    return build_alias(np.power(graph.out_degree(), power))


def edge_sampler(graph):
    """Arc sampler with probability proportional to arc weight."""
    return build_alias(graph.arc_weight)


def draw_negatives(table, rng, anchors, num_negatives):
    """``(len(anchors), num_negatives)`` noise draws, redrawing any that hit the anchor."""
    anchors = np.asarray(anchors)
    shape = (len(anchors), num_negatives)
    neg = draw(table, rng, shape)
    if table.support_size < 2:
        return neg
    clash = neg == anchors[:, None]
    while np.any(clash):
        neg[clash] = draw(table, rng, int(clash.sum()))
        clash = neg == anchors[:, None]
    return neg
