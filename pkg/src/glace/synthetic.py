"""Synthetic attributed graphs for tests and smoke runs."""

import numpy as np
import scipy.sparse as sp

from glace.graph import AttributedGraph
from glace.seeding import rng_for


def sbm(sizes, p_in, p_out, seed=0, attributes="onehot", directed=False):
    """Stochastic block model.

    ``attributes="onehot"`` gives each node a one-hot block indicator;
    ``"identity"`` gives each node its own indicator column.
    Returns ``(graph, block_labels)``.
    """
    rng = rng_for(seed, "sbm")
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = len(labels)
    prob = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    draws = rng.random((n, n)) < prob
    np.fill_diagonal(draws, False)
    if not directed:
        draws = np.triu(draws)
    src, dst = np.nonzero(draws)
    if attributes == "onehot":
        X = sp.csr_matrix((np.ones(n), (np.arange(n), labels)), shape=(n, len(sizes)))
    elif attributes == "identity":
        X = sp.identity(n, format="csr")
    else:
        raise ValueError(f"unknown attribute scheme {attributes!r}")
    return AttributedGraph(n, src, dst, np.ones(len(src)), X, directed=directed), labels


def citation_like(n=600, classes=5, vocab=400, words_per_node=20, topic_share=0.5,
                  avg_degree=3.0, homophily=0.85, seed=0, directed=False):
    """Sparse bag-of-words graph with class-topical attributes and heavy-tailed degrees.

    Each class owns a slice of the vocabulary; a node draws ``topic_share`` of
    its words from its class slice and the rest uniformly. Edges join nodes of
    the same class with probability ``homophily``, endpoints chosen with
    Pareto-distributed propensities. Returns ``(graph, labels)``.
    """
    rng = rng_for(seed, "citation-like")
    labels = rng.integers(0, classes, n)
    slice_size = vocab // classes
    rows, cols = [], []
    for i in range(n):
        k_topic = rng.binomial(words_per_node, topic_share)
        topical = labels[i] * slice_size + rng.integers(0, slice_size, k_topic)
        generic = rng.integers(0, vocab, words_per_node - k_topic)
        words = np.unique(np.concatenate([topical, generic]))
        rows.extend([i] * len(words))
        cols.extend(words.tolist())
    X = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, vocab))

    propensity = rng.pareto(2.5, n) + 1.0
    by_class = [np.flatnonzero(labels == c) for c in range(classes)]
    target_edges = int(avg_degree * n / (1 if directed else 2))
    seen = set()
    src, dst = [], []
    all_nodes = np.arange(n)
    p_all = propensity / propensity.sum()
    while len(src) < target_edges:
        a = int(rng.choice(all_nodes, p=p_all))
        if rng.random() < homophily:
            pool = by_class[labels[a]]
        else:
            pool = all_nodes
        w = propensity[pool]
        b = int(rng.choice(pool, p=w / w.sum()))
        if a == b:
            continue
        key = (a, b) if directed else (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        src.append(key[0])
        dst.append(key[1])
    return AttributedGraph(n, src, dst, np.ones(len(src)), X, directed=directed), labels
