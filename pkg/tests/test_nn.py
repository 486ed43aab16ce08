import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from retdebias import nn
from retdebias.errors import InvalidArgumentError, NumericError


def loop_forward(params, x):
    """Independent dense-algebra oracle: explicit loops, no numpy matmul."""
    a = list(map(float, x))
    for layer in params.layers:
        z = []
        for i in range(layer.out_dim):
            acc = float(layer.bias[i])
            for j in range(layer.in_dim):
                acc += float(layer.weights[i, j]) * a[j]
            z.append(acc)
        if layer.activation == "relu":
            a = [max(v, 0.0) for v in z]
        elif layer.activation == "sigmoid":
            a = [1.0 / (1.0 + math.exp(-v)) for v in z]
        else:
            a = z
    return np.array(a)


def scalar_loss(params, x, target):
    logits, _ = nn.forward(params, x)
    loss, _ = nn.softmax_xent(logits, target)
    return loss


def test_forward_zero_params_gives_zero_logits():
    params = nn.ModelParams([nn.Layer(np.zeros((3, 4)), np.zeros(3), "identity")])
    logits, _ = nn.forward(params, np.array([1.0, -2.0, 3.0, 0.5]))
    assert np.array_equal(logits, np.zeros(3))


def test_forward_identity_layer_passes_input_through():
    params = nn.ModelParams([nn.Layer(np.eye(4), np.zeros(4), "identity")])
    x = np.array([0.3, -1.2, 4.0, 0.0])
    logits, _ = nn.forward(params, x)
    assert np.array_equal(logits, x)


def test_forward_matches_loop_oracle(rng):
    params = nn.init_params((6, 5, 3), ("relu", "identity"), seed=7)
    x = rng.standard_normal(6)
    logits, _ = nn.forward(params, x)
    assert np.allclose(logits, loop_forward(params, x), atol=1e-12, rtol=0)


def test_forward_sigmoid_matches_loop_oracle(rng):
    params = nn.init_params((5, 4, 3), ("relu", "sigmoid"), seed=11)
    x = rng.standard_normal(5)
    logits, _ = nn.forward(params, x)
    assert np.allclose(logits, loop_forward(params, x), atol=1e-12, rtol=0)


def test_forward_dimension_mismatch():
    params = nn.init_params((6, 3), ("identity",), seed=0)
    with pytest.raises(InvalidArgumentError):
        nn.forward(params, np.zeros(5))


def test_layer_dims_must_chain():
    with pytest.raises(InvalidArgumentError):
        nn.ModelParams(
            [
                nn.Layer(np.zeros((3, 4)), np.zeros(3), "relu"),
                nn.Layer(np.zeros((2, 5)), np.zeros(2), "identity"),
            ]
        )


def test_xent_equal_logits_is_log_k():
    for k in (2, 3, 7):
        loss, _ = nn.softmax_xent(np.zeros(k), 0)
        assert loss == pytest.approx(math.log(k), abs=1e-12)


def test_xent_large_logits_do_not_overflow():
    loss, grad = nn.softmax_xent(np.array([1000.0, 0.0]), 0)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.isfinite(grad).all()


def test_xent_rejects_nonfinite():
    with pytest.raises(NumericError):
        nn.softmax_xent(np.array([np.nan, 0.0]), 0)


def test_xent_gradient_matches_finite_differences(rng):
    logits = rng.standard_normal(5)
    _, grad = nn.softmax_xent(logits, 2)
    h = 1e-6
    for j in range(5):
        bump = np.zeros(5)
        bump[j] = h
        lp, _ = nn.softmax_xent(logits + bump, 2)
        lm, _ = nn.softmax_xent(logits - bump, 2)
        fd = (lp - lm) / (2 * h)
        assert grad[j] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_backward_zero_upstream_gives_zero_grads(rng):
    params = nn.init_params((4, 3, 2), ("relu", "identity"), seed=3)
    x = rng.standard_normal(4)
    _, cache = nn.forward(params, x)
    grads, dx = nn.backward(params, cache, np.zeros(2))
    assert all(np.all(dw == 0) and np.all(db == 0) for dw, db in grads)
    assert np.all(dx == 0)


ARCHS = [
    ((8, 6, 4, 2), ("relu", "relu", "identity")),
    ((10, 5, 3), ("relu", "identity")),
    ((6, 8, 6), ("relu", "sigmoid")),
    ((5, 4, 2), ("relu", "identity")),
]


@pytest.mark.parametrize("dims,acts", ARCHS)
def test_param_gradients_match_finite_differences(dims, acts, rng):
    params = nn.init_params(dims, acts, seed=17)
    x = rng.standard_normal(dims[0]) * 0.7
    target = 0
    logits, cache = nn.forward(params, x)
    if acts[-1] == "sigmoid":
        # generic upstream gradient through a non-classifier head
        dout = rng.standard_normal(dims[-1])

        def loss_fn(p):
            out, _ = nn.forward(p, x)
            return float(dout @ out)

        grads, _ = nn.backward(params, cache, dout)
    else:
        _, dlogits = nn.softmax_xent(logits, target)

        def loss_fn(p):
            return scalar_loss(p, x, target)

        grads, _ = nn.backward(params, cache, dlogits)

    h = 1e-5
    probes = 0
    rng2 = np.random.Generator(np.random.PCG64(5))
    while probes < 40:
        k = int(rng2.integers(len(params.layers)))
        layer = params.layers[k]
        i = int(rng2.integers(layer.out_dim))
        j = int(rng2.integers(layer.in_dim))
        orig = layer.weights[i, j]
        layer.weights[i, j] = orig + h
        lp = loss_fn(params)
        layer.weights[i, j] = orig - h
        lm = loss_fn(params)
        layer.weights[i, j] = orig
        fd = (lp - lm) / (2 * h)
        analytic = grads[k][0][i, j]
        assert analytic == pytest.approx(fd, rel=1e-5, abs=1e-8)
        probes += 1


def test_input_gradient_matches_finite_differences(rng):
    params = nn.init_params((6, 5, 2), ("relu", "identity"), seed=23)
    x = rng.standard_normal(6) * 0.5
    logits, cache = nn.forward(params, x)
    _, dlogits = nn.softmax_xent(logits, 1)
    _, dx = nn.backward(params, cache, dlogits)
    h = 1e-5
    for j in range(6):
        bump = np.zeros(6)
        bump[j] = h
        fd = (scalar_loss(params, x + bump, 1) - scalar_loss(params, x - bump, 1)) / (2 * h)
        assert dx[j] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_backward_shape_mismatch():
    params = nn.init_params((4, 2), ("identity",), seed=1)
    _, cache = nn.forward(params, np.zeros(4))
    with pytest.raises(InvalidArgumentError):
        nn.backward(params, cache, np.zeros(3))


def make_separable(n=60, seed=5):
    rng = np.random.Generator(np.random.PCG64(seed))
    X0 = rng.standard_normal((n // 2, 2)) * 0.4 + np.array([-2.0, 0.0])
    X1 = rng.standard_normal((n // 2, 2)) * 0.4 + np.array([2.0, 0.0])
    X = np.vstack([X0, X1])
    y = np.array([0] * (n // 2) + [1] * (n // 2))
    return X, y


def test_train_reaches_full_accuracy_on_separable_set():
    X, y = make_separable()
    cfg = nn.TrainConfig(learning_rate=0.2, epochs=50, batch_size=8, seed=9)
    model = nn.train_classifier(X, y, cfg, nn.mlp_arch(2, (8,), 2))
    pred = nn.predict_proba(model, X).argmax(axis=1)
    assert (pred == y).mean() == 1.0


def test_train_is_deterministic():
    X, y = make_separable()
    cfg = nn.TrainConfig(learning_rate=0.1, epochs=5, batch_size=16, seed=21)
    m1 = nn.train_classifier(X, y, cfg, nn.mlp_arch(2, (4,), 2))
    m2 = nn.train_classifier(X, y, cfg, nn.mlp_arch(2, (4,), 2))
    for l1, l2 in zip(m1.layers, m2.layers):
        assert np.array_equal(l1.weights, l2.weights)
        assert np.array_equal(l1.bias, l2.bias)


def test_zero_learning_rate_keeps_initial_params():
    X, y = make_separable()
    cfg = nn.TrainConfig(learning_rate=0.0, epochs=3, batch_size=8, seed=4)
    model = nn.train_classifier(X, y, cfg, nn.mlp_arch(2, (4,), 2))
    init = nn.init_params((2, 4, 2), ("relu", "identity"), seed=4)
    for trained, fresh in zip(model.layers, init.layers):
        assert np.array_equal(trained.weights, fresh.weights)
        assert np.array_equal(trained.bias, fresh.bias)


def test_train_rejects_empty_dataset():
    cfg = nn.TrainConfig(seed=0)
    with pytest.raises(InvalidArgumentError):
        nn.train_classifier(np.zeros((0, 2)), np.zeros(0, dtype=int), cfg, nn.mlp_arch(2, (4,), 2))


def test_predict_proba_uniform_for_zero_model():
    params = nn.ModelParams([nn.Layer(np.zeros((4, 3)), np.zeros(4), "identity")])
    probs = nn.predict_proba(params, np.array([1.0, 2.0, 3.0]))
    assert np.allclose(probs, 0.25, atol=1e-15)


def test_predict_proba_limit_case():
    params = nn.ModelParams([nn.Layer(np.array([[0.0], [60.0]]), np.zeros(2), "identity")])
    probs = nn.predict_proba(params, np.array([1.0]))
    assert probs[1] > 1 - 1e-12


def test_predict_proba_matches_softmax_oracle(rng):
    params = nn.init_params((5, 4, 3), ("relu", "identity"), seed=2)
    x = rng.standard_normal(5)
    logits, _ = nn.forward(params, x)
    m = logits.max()
    oracle = np.exp(logits - m) / np.exp(logits - m).sum()
    assert np.allclose(nn.predict_proba(params, x), oracle, atol=1e-12, rtol=0)


@given(st.integers(min_value=2, max_value=6), st.integers(min_value=0, max_value=2**32 - 1))
def test_probabilities_sum_to_one(k, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    params = nn.init_params((3, k), ("identity",), seed=seed % 1000)
    probs = nn.predict_proba(params, rng.standard_normal(3))
    assert probs.min() >= 0
    assert abs(probs.sum() - 1.0) < 1e-9


def test_argmax_tie_breaks_to_lower_index():
    probs = np.array([0.4, 0.4, 0.2])
    assert probs.argmax() == 0


def test_full_batch_descent_never_increases_loss(rng):
    X, y = make_separable(n=40, seed=8)
    params = nn.init_params((2, 6, 2), ("relu", "identity"), seed=13)
    lr = 0.05
    prev = np.inf
    for _ in range(100):
        out, cache = nn.forward(params, X)
        loss, dlogits = nn._xent_batch(out, y)
        assert loss <= prev + 1e-12
        prev = loss
        grads, _ = nn.backward(params, cache, dlogits)
        for layer, (dw, db) in zip(params.layers, grads):
            layer.weights -= lr * dw
            layer.bias -= lr * db


def test_batch_forward_matches_single_rows(rng):
    # matrix and vector BLAS paths may differ in the final ulp, nothing more
    params = nn.init_params((5, 4, 3), ("relu", "identity"), seed=31)
    X = rng.standard_normal((7, 5))
    batch_out, _ = nn.forward(params, X)
    for i in range(7):
        single, _ = nn.forward(params, X[i])
        assert np.allclose(batch_out[i], single, rtol=0, atol=1e-12)


def test_checkpoint_roundtrip_is_byte_exact(tmp_path):
    params = nn.init_params((6, 5, 3), ("relu", "sigmoid"), seed=77)
    blob = nn.params_to_bytes(params)
    again = nn.params_from_bytes(blob)
    assert nn.params_to_bytes(again) == blob
    for l1, l2 in zip(params.layers, again.layers):
        assert np.array_equal(l1.weights, l2.weights)
        assert np.array_equal(l1.bias, l2.bias)
        assert l1.activation == l2.activation
    path = tmp_path / "model.ckpt"
    nn.save_params(params, path)
    assert path.read_bytes() == blob
    loaded = nn.load_params(path)
    assert nn.params_to_bytes(loaded) == blob


def test_checkpoint_magic_and_trailing_bytes_rejected():
    params = nn.init_params((3, 2), ("identity",), seed=0)
    blob = nn.params_to_bytes(params)
    with pytest.raises(InvalidArgumentError):
        nn.params_from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(InvalidArgumentError):
        nn.params_from_bytes(blob + b"\x00")


def test_symmetric_output_init_duplicates_final_rows():
    params = nn.init_params((4, 3, 2), ("relu", "identity"), seed=5, symmetric_output=True)
    final = params.layers[-1]
    assert np.array_equal(final.weights[0], final.weights[1])
    assert final.bias[0] == final.bias[1]
