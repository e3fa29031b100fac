import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from glace.encoder import init_model
from glace.errors import ValidationError
from glace.evaluate import (
    EvalReport,
    Embeddings,
    LogisticRegression,
    auc_score,
    average_precision,
    classification_features,
    concat_scores,
    embed,
    export_embeddings,
    f1_scores,
    inductive_link_prediction,
    link_prediction,
    load_embeddings,
    node_classification,
    pair_scores,
    score_pair,
    score_pairs,
)
from glace.gauss import GaussianEmbedding, dissimilarity
from glace.graph import hidden_split, hide_nodes
from glace.synthetic import citation_like

from oracles import ap_brute, auc_brute, central_diff, max_rel_error, tie_configurations

# ---------------------------------------------------------------- scores


def test_identical_gaussians_score_zero():
    emb = Embeddings(np.array([[0.3, -1.0], [0.3, -1.0]]), np.array([[0.5, 2.0], [0.5, 2.0]]))
    assert score_pair(emb, 0, 1) == 0.0
    assert score_pair(emb, 0, 0) == 0.0


def test_lace_orthogonal_scores_zero():
    emb = Embeddings(np.array([[1.0, 0.0], [0.0, 1.0]]), None, kind="lace")
    assert score_pair(emb, 0, 1) == 0.0
    assert score_pair(emb, 0, 0) == 1.0


def test_score_is_negative_dissimilarity():
    rng = np.random.default_rng(0)
    mu, var = rng.normal(size=(4, 3)), rng.random((4, 3)) + 0.1
    for symmetric in (True, False):
        emb = Embeddings(mu, var, symmetric=symmetric)
        for i, j in itertools.permutations(range(4), 2):
            d = dissimilarity(GaussianEmbedding(mu[i], var[i]), GaussianEmbedding(mu[j], var[j]), symmetric)
            assert score_pair(emb, i, j) == pytest.approx(-d, rel=1e-12)


def test_score_pairs_rejects_unknown_nodes():
    emb = Embeddings(np.zeros((2, 1)), np.ones((2, 1)))
    with pytest.raises(ValidationError):
        score_pairs(emb, [[0, 2]])


def test_pair_scores_match_full_embedding():
    g, _ = citation_like(n=50, vocab=30, seed=1)
    model = init_model(30, 8, 4, seed=0)
    pairs = np.array([[0, 5], [7, 3], [49, 0], [5, 5]])
    full = score_pairs(embed(model, g.attributes), pairs)
    assert np.allclose(pair_scores(model, g.attributes, pairs), full, rtol=1e-12, atol=1e-12)


def test_concat_of_model_with_itself_ranks_like_the_model():
    rng = np.random.default_rng(2)
    emb = Embeddings(rng.normal(size=(30, 4)), rng.random((30, 4)) + 0.2)
    pos, neg = rng.integers(0, 30, (40, 2)), rng.integers(0, 30, (40, 2))
    single = link_prediction(score_pairs(emb, pos), score_pairs(emb, neg))
    pairs = np.concatenate([pos, neg])
    for normalize in (True, False):
        s = concat_scores([emb, emb], pairs, normalize)
        assert link_prediction(s[:40], s[40:]) == pytest.approx(single, abs=1e-12)


# ---------------------------------------------------------------- ranking metrics


def test_worked_auc_example():
    assert auc_score([0.9, 0.4], [0.6, 0.1]) == 0.75
    assert auc_brute([0.9, 0.4], [0.6, 0.1]) == 0.75


def test_all_ties_and_perfect_separation():
    assert auc_score([1.0, 1.0], [1.0, 1.0, 1.0]) == 0.5
    assert link_prediction([3.0, 2.0], [1.0, 0.0]) == (1.0, 1.0)
    assert link_prediction([0.0], [1.0])[0] == 0.0


def test_metrics_reject_empty_inputs():
    with pytest.raises(ValidationError):
        auc_score([], [1.0])
    with pytest.raises(ValidationError):
        average_precision([], [1.0])


@pytest.mark.parametrize("k", range(2, 9))
def test_metrics_equal_brute_force_exhaustively(k):
    for pos, neg in tie_configurations(k):
        auc, ap = link_prediction(pos, neg)
        assert auc == auc_brute(pos, neg)
        assert abs(ap - ap_brute(pos, neg)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=15),
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=15),
)
def test_metrics_equal_brute_force_random(pos, neg):
    auc, ap = link_prediction(pos, neg)
    assert auc == pytest.approx(auc_brute(pos, neg), abs=1e-12)
    assert ap == pytest.approx(ap_brute(pos, neg), abs=1e-12)


def test_auc_invariant_under_increasing_transforms():
    rng = np.random.default_rng(0)
    pos, neg = rng.normal(size=50), rng.normal(size=70) - 0.5
    base = link_prediction(pos, neg)
    for f in (np.exp, lambda s: 3.0 * s - 7.0, lambda s: np.tanh(s / 4)):
        assert link_prediction(f(pos), f(neg)) == pytest.approx(base, abs=1e-12)


def test_auc_exchange_antisymmetry():
    rng = np.random.default_rng(1)
    pos, neg = rng.normal(size=33), rng.normal(size=21)
    assert auc_score(pos, neg) + auc_score(neg, pos) == pytest.approx(1.0, abs=1e-14)


def test_agrees_with_sklearn():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(3)
    pos, neg = np.round(rng.normal(size=200), 1), np.round(rng.normal(size=300) - 0.3, 1)
    y = np.r_[np.ones(200), np.zeros(300)]
    s = np.r_[pos, neg]
    assert auc_score(pos, neg) == pytest.approx(metrics.roc_auc_score(y, s), abs=1e-12)
    assert average_precision(pos, neg) == pytest.approx(metrics.average_precision_score(y, s), abs=1e-12)


# ---------------------------------------------------------------- classification


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 4))
    Y = np.eye(3)[rng.integers(0, 3, 10)]
    W, b = rng.normal(size=(4, 3)), rng.normal(size=3)
    clf = LogisticRegression(l2=0.1)
    _, gW, gb = clf.loss_and_grad(X, Y, W, b)
    assert max_rel_error(gW, central_diff(lambda: clf.loss_and_grad(X, Y, W, b)[0], W)) < 1e-4
    assert max_rel_error(gb, central_diff(lambda: clf.loss_and_grad(X, Y, W, b)[0], b)) < 1e-4


def test_logistic_matches_sklearn_optimum():
    linear_model = pytest.importorskip("sklearn.linear_model")
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 5))
    y = (X @ rng.normal(size=(5, 3))).argmax(axis=1)
    ours = LogisticRegression(l2=1e-1, max_epochs=5000, tol=1e-9).fit(X, y)
    # sklearn minimizes C * sum(loss) + 0.5 ||W||^2, i.e. our objective with C = 1 / (n * l2)
    ref = linear_model.LogisticRegression(C=1 / (200 * 1e-1), tol=1e-10, max_iter=10000).fit(X, y)
    assert np.allclose(ours.predict_proba(X), ref.predict_proba(X), atol=1e-5)


def separable_clouds(n=200, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], n // 2)
    X = rng.normal(size=(n, 3)) + 6.0 * labels[:, None]
    return X, labels


def test_separable_clouds_are_classified_perfectly():
    X, y = separable_clouds()
    assert node_classification(X, y, 0.5, seed=0) == (1.0, 1.0)


def test_permuted_labels_give_chance():
    X, y = separable_clouds(n=400)
    y = np.random.default_rng(7).permutation(y)
    micro, _ = node_classification(X, y, 0.5, seed=0)
    assert micro == pytest.approx(0.5, abs=0.05)


def test_more_training_data_never_hurts_on_separable_data():
    rng = np.random.default_rng(4)
    labels = np.repeat([0, 1, 2], 100)
    X = rng.normal(size=(300, 4)) + 3.0 * np.eye(3)[labels] @ rng.normal(size=(3, 4))
    lo = node_classification(X, labels, 0.1, seed=0)[0]
    hi = node_classification(X, labels, 0.9, seed=0)[0]
    assert hi >= lo


def test_classification_is_seeded_and_ignores_unlabeled():
    X, y = separable_clouds()
    y = y.copy()
    y[::7] = -1
    a = node_classification(sp.csr_matrix(X), y, 0.3, seed=5, trials=3)
    assert a == node_classification(X, y, 0.3, seed=5, trials=3)


def test_classification_errors():
    X, y = separable_clouds()
    with pytest.raises(ValidationError):
        node_classification(X, y, 0.0)
    with pytest.raises(ValidationError):
        node_classification(X, np.zeros_like(y), 0.5)
    # two labeled nodes of one class cannot both land in a 10% training portion
    y2 = y.copy()
    y2[:] = 0
    y2[:2] = 1
    with pytest.raises(ValidationError, match="covering"):
        node_classification(X, y2, 0.01, max_retries=3)


def test_f1_scores():
    micro, macro = f1_scores([0, 0, 1, 1], [0, 1, 1, 1], [0, 1])
    assert micro == 0.75
    assert macro == pytest.approx(np.mean([2 / 3, 0.8]))


def test_classification_features():
    emb = Embeddings(np.ones((2, 3)), np.full((2, 3), np.e))
    assert classification_features(emb).shape == (2, 3)
    assert np.array_equal(classification_features(emb, with_sigma=True)[:, 3:], np.ones((2, 3)))


# ---------------------------------------------------------------- inductive


def test_hiding_nothing_reduces_to_ordinary_link_prediction():
    g, _ = citation_like(n=80, vocab=40, seed=2)
    model = init_model(40, 8, 4, seed=1)
    rng = np.random.default_rng(0)
    pos = g.edges()[:30]
    neg = rng.integers(0, 80, (30, 2))
    ind = hidden_split(g, [], seed=0, eval_pos=pos, eval_neg=neg)
    expect = link_prediction(pair_scores(model, g.attributes, pos), pair_scores(model, g.attributes, neg))
    assert inductive_link_prediction(model, ind) == expect


def test_untrained_model_is_at_chance():
    aucs = []
    for seed in range(5):
        # no topical words, so attributes carry no information about links
        g, _ = citation_like(n=400, vocab=200, topic_share=0.0, seed=seed)
        ind = hide_nodes(g, 0.5, seed=seed)
        aucs.append(inductive_link_prediction(init_model(200, 32, 8, seed=seed), ind)[0])
    assert np.mean(aucs) == pytest.approx(0.5, abs=0.05)


def test_hidden_node_without_attributes_is_an_error():
    g, _ = citation_like(n=60, vocab=30, seed=3)
    X = g.attributes.tolil()
    X[4, :] = 0
    g2 = type(g)(g.num_nodes, g.src, g.dst, g.weight, X.tocsr(), directed=g.directed)
    ind = hidden_split(g2, [4], seed=0)
    with pytest.raises(ValidationError, match="without attributes"):
        inductive_link_prediction(init_model(30, 4, 2, seed=0), ind)


# ---------------------------------------------------------------- reports and export


def test_export_shape(tmp_path):
    model = init_model(4, 3, 2, seed=0)
    emb = embed(model, sp.csr_matrix(np.eye(3, 4)), node_ids=["a", "b", "c"])
    export_embeddings(emb, tmp_path / "e.tsv")
    lines = (tmp_path / "e.tsv").read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1].split("\t") == ["node_id", "mu_1", "mu_2", "sigma_1", "sigma_2"]
    data = [line.split("\t") for line in lines[2:]]
    assert len(data) == 3 and all(len(row) == 5 for row in data)
    assert [row[0] for row in data] == ["a", "b", "c"]


def test_export_lace_has_no_sigma(tmp_path):
    model = init_model(4, 3, 2, seed=0, kind="lace")
    export_embeddings(embed(model, sp.csr_matrix(np.eye(3, 4))), tmp_path / "e.tsv")
    assert (tmp_path / "e.tsv").read_text().splitlines()[1].split("\t") == ["node_id", "mu_1", "mu_2"]


@pytest.mark.parametrize("kind", ["glace", "lace"])
def test_export_round_trip_scores(tmp_path, kind):
    g, _ = citation_like(n=40, vocab=20, seed=0)
    model = init_model(20, 6, 3, seed=2, kind=kind)
    model.meta["symmetric"] = False
    emb = embed(model, g.attributes)
    export_embeddings(emb, tmp_path / "e.tsv")
    back = load_embeddings(tmp_path / "e.tsv")
    assert back.kind == kind and back.symmetric is False
    pairs = np.random.default_rng(0).integers(0, 40, (50, 2))
    assert np.allclose(score_pairs(back, pairs), score_pairs(emb, pairs), rtol=0, atol=1e-9)


def test_eval_report_text_and_bounds(tmp_path):
    r = EvalReport("lp", auc=0.9, ap=0.8, seed=3, config={"mode": "first"}, extra={"pairs": 10})
    r.write(tmp_path / "r.txt")
    text = (tmp_path / "r.txt").read_text()
    assert text.splitlines() == ["task=lp", "seed=3", "auc=0.900000", "ap=0.800000", "pairs=10", "config.mode=first"]
    with pytest.raises(ValidationError):
        EvalReport("lp", auc=1.5)
