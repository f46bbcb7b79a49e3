import numpy as np
import pytest

from structsum import autodiff as ad


def test_softmax_uniform_scores():
    out = ad.softmax(ad.constant([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-12)


def test_odd_symmetric_function_values():
    assert ad.tanh(ad.constant(0.0)).item() == 0.0
    assert ad.sigmoid(ad.constant(0.0)).item() == 0.5


def test_matmul_identity():
    v = np.array([1.5, -2.0, 0.25])
    out = ad.matmul(ad.constant(np.eye(3)), ad.constant(v))
    np.testing.assert_allclose(out.data, v)


def test_backward_sum_is_all_ones():
    p = ad.parameter(np.array([1.0, 2.0, 3.0]), name="p")
    loss = ad.tensor_sum(p)
    loss.backward()
    np.testing.assert_allclose(p.grad, [1.0, 1.0, 1.0])


def test_backward_sigmoid_at_zero():
    x = ad.parameter(0.0, name="x")
    ad.sigmoid(x).backward()
    assert abs(float(x.grad) - 0.25) < 1e-12


def test_loss_self_gradient_is_one():
    x = ad.parameter(np.array([2.0]), name="x")
    loss = ad.tensor_sum(ad.mul(x, x))
    loss.backward()
    np.testing.assert_allclose(loss.grad, [1.0])


def test_backward_rejects_non_scalar():
    x = ad.parameter(np.array([1.0, 2.0]))
    with pytest.raises(ad.ShapeError):
        ad.mul(x, x).backward()


def test_repeated_backward_accumulates():
    x = ad.parameter(3.0, name="x")
    loss = ad.mul(x, x)
    loss.backward()
    loss.backward()
    assert abs(float(x.grad) - 12.0) < 1e-12


def test_shape_mismatch_error_names_op_and_shapes():
    a = ad.constant(np.zeros((2, 3)))
    b = ad.constant(np.zeros((4, 5)))
    with pytest.raises(ad.ShapeError) as err:
        ad.matmul(a, b)
    assert err.value.op == "matmul"
    assert (2, 3) in err.value.shapes and (4, 5) in err.value.shapes
    assert "matmul" in str(err.value)


def test_softmax_rows_are_distributions():
    rng = np.random.default_rng(7)
    x = ad.constant(rng.normal(size=(5, 9)) * 4.0)
    y = ad.softmax(x)
    assert (y.data >= 0).all()
    np.testing.assert_allclose(y.data.sum(axis=-1), np.ones(5), atol=1e-9)


def test_softmax_mask_zeroes_masked_entries():
    mask = np.array([[1, 1, 0, 0], [1, 0, 1, 0]], dtype=float)
    x = ad.parameter(np.random.default_rng(0).normal(size=(2, 4)))
    y = ad.softmax(x, mask=mask)
    assert (y.data[mask == 0] == 0.0).all()
    np.testing.assert_allclose(y.data.sum(axis=-1), [1.0, 1.0], atol=1e-12)
    ad.tensor_sum(ad.mul(y, y)).backward()
    assert (x.grad[mask == 0] == 0.0).all()


def test_min_elementwise_tie_goes_to_first_argument():
    a = ad.parameter(np.array([1.0, 2.0, 5.0]), name="a")
    b = ad.parameter(np.array([3.0, 2.0, 4.0]), name="b")
    ad.tensor_sum(ad.minimum(a, b)).backward()
    np.testing.assert_allclose(a.grad, [1.0, 1.0, 0.0])
    np.testing.assert_allclose(b.grad, [0.0, 0.0, 1.0])


def test_embedding_lookup_accumulates_repeated_rows():
    table = ad.parameter(np.arange(8.0).reshape(4, 2), name="emb")
    out = ad.embedding_lookup(table, np.array([1, 1, 3]))
    ad.tensor_sum(out).backward()
    np.testing.assert_allclose(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])


def test_embedding_lookup_rejects_out_of_range():
    table = ad.parameter(np.zeros((4, 2)))
    with pytest.raises(ad.AutodiffError):
        ad.embedding_lookup(table, np.array([0, 4]))


def test_gather_scatter_roundtrip_gradients():
    x = ad.parameter(np.arange(12.0).reshape(2, 6), name="x")
    idx = np.array([[0, 5, 5], [2, 1, 0]])
    g = ad.gather_cols(x, idx)
    np.testing.assert_allclose(g.data, [[0, 5, 5], [8, 7, 6]])
    s = ad.scatter_cols(g, idx, width=6)
    ad.tensor_sum(s).backward()
    expected = np.zeros((2, 6))
    np.add.at(expected, (np.arange(2)[:, None], idx), 1.0)
    np.testing.assert_allclose(x.grad, expected)


def test_no_grad_blocks_graph_construction():
    x = ad.parameter(np.ones(3))
    with ad.no_grad():
        y = ad.tensor_sum(ad.mul(x, x))
    assert y._backward is None and not y.requires_grad


def test_deep_chain_does_not_hit_recursion_limit():
    x = ad.parameter(0.5, name="x")
    y = x
    for _ in range(5000):
        y = ad.add(y, 1e-6)
    y.backward()
    assert abs(float(x.grad) - 1.0) < 1e-12


def test_forward_op_dispatch():
    out = ad.forward_op("tanh", ad.constant(0.0))
    assert out.item() == 0.0
    with pytest.raises(ad.AutodiffError):
        ad.forward_op("convolve", ad.constant(0.0))


# --- finite-difference verification -----------------------------------------


def test_grad_check_quadratic():
    x = ad.parameter(3.0, name="x")

    def f(params):
        (p,) = params
        return ad.mul(p, p)

    report = ad.grad_check(f, [x], h=1e-5, tol=1e-6)
    assert report.passed
    x.zero_grad()
    ad.mul(x, x).backward()
    assert abs(float(x.grad) - 6.0) < 1e-10


def test_grad_check_unused_parameter_passes_on_absolute_floor():
    used = ad.parameter(np.array([1.0, -2.0]), name="used")
    unused = ad.parameter(np.array([4.0]), name="unused")

    def f(params):
        u, _ = params
        return ad.tensor_sum(ad.tanh(u))

    report = ad.grad_check(f, [used, unused], h=1e-5, tol=1e-6)
    assert report.passed
    assert report.max_rel_error["unused"] == 0.0


def _random_graph_case(rng):
    """A composite graph touching every primitive; returns (f, params)."""
    w = ad.parameter(rng.normal(size=(4, 3)), name="w")
    u = ad.parameter(rng.normal(size=(3, 5)), name="u")
    b = ad.parameter(rng.normal(size=(5,)), name="b")
    emb = ad.parameter(rng.normal(size=(6, 4)), name="emb")
    other = ad.parameter(rng.normal(size=(2, 5)), name="other")
    ids = rng.integers(0, 6, size=2)
    idx = rng.integers(0, 5, size=(2, 3))

    def f(params):
        w_, u_, b_, emb_, other_ = params
        x = ad.embedding_lookup(emb_, ids)
        h = ad.tanh(ad.add(ad.matmul(ad.matmul(x, w_), u_), b_))
        s = ad.softmax(h)
        mixed = ad.add(
            ad.mul(s, ad.sigmoid(other_)),
            ad.minimum(s, ad.exp(ad.mul(other_, 0.1))),
        )
        gathered = ad.gather_cols(mixed, idx)
        scattered = ad.scatter_cols(gathered, idx, width=5)
        cat = ad.concat([scattered, ad.log(ad.add(s, 1.0))], axis=1)
        sliced = cat[:, 1:9]
        return ad.add(
            ad.tensor_sum(ad.mul(sliced, sliced)),
            ad.tensor_mean(ad.div(mixed, 2.0)),
        )

    return f, [w, u, b, emb, other]


def test_composite_graphs_match_central_differences():
    # 20 graphs x 5 parameter tensors = 100 random tensors, all double precision
    for seed in range(20):
        rng = np.random.default_rng(seed)
        f, params = _random_graph_case(rng)
        report = ad.grad_check(f, params, h=1e-5, tol=1e-4, abs_floor=1e-7)
        assert report.passed, f"seed {seed}:\n{report}"


def test_min_elementwise_matches_finite_differences_away_from_ties():
    rng = np.random.default_rng(11)
    a = ad.parameter(rng.normal(size=(4, 4)), name="a")
    b = ad.parameter(rng.normal(size=(4, 4)) + 0.5, name="b")

    def f(params):
        x, y = params
        return ad.tensor_sum(ad.mul(ad.minimum(x, y), ad.minimum(x, y)))

    assert ad.grad_check(f, [a, b], h=1e-6, tol=1e-4).passed
