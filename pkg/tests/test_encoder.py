import numpy as np
import pytest
import scipy.sparse as sp

from glace.encoder import (
    TENSORS,
    VAR_FLOOR,
    EncoderParams,
    ModelParams,
    backward,
    encode,
    encode_backward,
    encode_point,
    forward,
    init_model,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from glace.errors import ValidationError

from oracles import central_diff, dense_encoder, max_rel_error


def zero_heads(D, m, L):
    return EncoderParams(np.zeros((D, m)), np.zeros(m), np.zeros((m, L)), np.zeros(L), np.zeros((m, L)), np.zeros(L))


def test_init_biases_zero_and_deterministic():
    a, b = init_params(6, 4, 3, seed=1), init_params(6, 4, 3, seed=1)
    for name in TENSORS:
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not a.b.any() and not a.b_mu.any() and not a.b_sigma.any()
    assert not np.array_equal(a.W, init_params(6, 4, 3, seed=2).W)


def test_init_glorot_bounds_full_size():
    p = init_params(2879, 512, 64, seed=0)
    assert p.W.shape == (2879, 512)
    assert np.abs(p.W).max() <= np.sqrt(6 / (2879 + 512))
    assert np.abs(p.W_mu).max() <= np.sqrt(6 / (512 + 64))
    # the sample fills most of the allowed range
    assert np.abs(p.W).max() > 0.99 * np.sqrt(6 / (2879 + 512))


def test_main_and_context_initialized_independently():
    model = init_model(5, 4, 3, seed=0, mode="second")
    assert not np.array_equal(model.main.W, model.context.W)
    with pytest.raises(ValidationError):
        ModelParams(model.main, None, mode="second")
    with pytest.raises(ValidationError):
        ModelParams(model.main, model.context, mode="first")


def test_zero_input_zero_heads_gives_unit_variance():
    z = encode(zero_heads(5, 3, 2), np.zeros(5))
    assert z.mu.tolist() == [0.0, 0.0] and z.sigma.tolist() == [1.0, 1.0]
    assert encode_point(zero_heads(5, 3, 2), np.zeros(5)).tolist() == [0.0, 0.0]


def test_very_negative_preactivation_hits_floor():
    p = zero_heads(1, 1, 1)
    p.b_sigma[:] = -40.0
    z = encode(p, np.zeros(1))
    assert z.sigma[0] == VAR_FLOOR > 0
    p.b_sigma[:] = -3.0
    assert encode(p, np.zeros(1)).sigma[0] == pytest.approx(np.exp(-3.0), rel=1e-15)


def test_matches_dense_oracle():
    rng = np.random.default_rng(0)
    p = init_params(5, 3, 2, seed=4)
    p.b[:] = rng.normal(size=3)
    p.b_sigma[:] = rng.normal(size=2)
    for _ in range(5):
        x = rng.random(5) * (rng.random(5) < 0.6)
        z = encode(p, sp.csr_matrix(x))
        mu, var = dense_encoder(x, p.W, p.b, p.W_mu, p.b_mu, p.W_sigma, p.b_sigma)
        assert np.allclose(z.mu, mu, atol=1e-12, rtol=0)
        assert np.allclose(z.sigma, var, atol=1e-12, rtol=0)
        assert np.allclose(encode_point(p, x), mu, atol=1e-12, rtol=0)
        assert np.array_equal(encode_point(p, x), z.mu)


def test_sparse_equals_dense_input():
    rng = np.random.default_rng(1)
    p = init_params(40, 8, 4, seed=0)
    X = sp.random(10, 40, density=0.1, random_state=2, format="csr")
    a, b = forward(p, X), forward(p, X.toarray())
    assert np.allclose(a.mu, b.mu, atol=1e-12, rtol=0) and np.allclose(a.var, b.var, atol=1e-12, rtol=0)


def test_positivity_for_extreme_inputs():
    rng = np.random.default_rng(3)
    p = init_params(10, 6, 4, seed=1)
    X = rng.normal(scale=1e3, size=(50, 10))
    assert np.all(forward(p, X).var > 0)


def test_dimension_mismatch():
    with pytest.raises(ValidationError):
        encode(init_params(5, 3, 2, seed=0), np.zeros(4))


def test_zero_upstream_gradient():
    p = init_params(5, 3, 2, seed=0)
    g = encode_backward(p, np.ones(5), np.zeros(2), np.zeros(2))
    assert all(not g[name].any() for name in TENSORS)


def test_sparse_input_limits_weight_gradient_columns():
    p = init_params(30, 4, 3, seed=0)
    x = np.zeros(30)
    x[[2, 17, 29]] = [1.0, 0.5, 2.0]
    g = encode_backward(p, sp.csr_matrix(x), np.ones(3), np.ones(3))
    nonzero_rows = np.flatnonzero(np.abs(g["W"]).sum(axis=1))
    assert nonzero_rows.tolist() == [2, 17, 29]


@pytest.mark.parametrize("activation", ["linear", "relu"])
def test_backward_matches_finite_differences(activation):
    rng = np.random.default_rng(7)
    p = init_params(6, 5, 3, seed=3, activation=activation)
    for name in TENSORS:
        getattr(p, name)[...] = rng.normal(scale=0.5, size=getattr(p, name).shape)
    X = rng.random((4, 6))
    c_mu = rng.normal(size=(4, 3))
    c_var = rng.normal(size=(4, 3))

    def loss():
        f = forward(p, X)
        return float(np.sum(c_mu * f.mu) + np.sum(c_var * f.var**2))

    fwd = forward(p, X)
    grads = backward(p, fwd, c_mu, 2 * c_var * fwd.var, need_input_grad=True)
    for name in TENSORS:
        assert max_rel_error(grads[name], central_diff(loss, getattr(p, name))) < 1e-4, name

    def loss_x():
        f = forward(p, Xv)
        return float(np.sum(c_mu * f.mu) + np.sum(c_var * f.var**2))

    Xv = X.copy()
    assert max_rel_error(grads["x"], central_diff(loss_x, Xv)) < 1e-4


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model = init_model(7, 5, 3, seed=11, mode="second", kind="glace", activation="relu")
    model.meta["symmetric"] = False
    save_checkpoint(tmp_path / "m.ckpt", model)
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert (back.mode, back.kind, back.seed, back.shape) == ("second", "glace", 11, (7, 5, 3))
    assert back.main.activation == "relu" and back.meta == {"symmetric": False}
    for role, enc in model.encoders().items():
        for name in TENSORS:
            assert getattr(back.encoders()[role], name).tobytes() == getattr(enc, name).tobytes()
    save_checkpoint(tmp_path / "again.ckpt", back)
    assert (tmp_path / "again.ckpt").read_bytes() == (tmp_path / "m.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"not a checkpoint")
    with pytest.raises(ValidationError):
        load_checkpoint(tmp_path / "bad")
    save_checkpoint(tmp_path / "m.ckpt", init_model(3, 2, 2, seed=0))
    data = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[:-8])
    with pytest.raises(ValidationError, match="truncated"):
        load_checkpoint(tmp_path / "cut.ckpt")
