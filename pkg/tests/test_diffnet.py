import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from madlearn import diffnet
from madlearn.diffnet import (
    AdamWState,
    GraphError,
    NetworkParams,
    NumericError,
    ShapeError,
    Tensor,
)
from madlearn.quasimetric import QuasimetricSpec, distance, distance_tensor


def _loss_of(params, batch, fn):
    fwd = diffnet.forward(params, batch)
    return fn(fwd.output), fwd


def numeric_grads(params, batch, fn, h=1e-5):
    out = []
    for a in params.arrays():
        g = np.empty_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            hi = fn(diffnet.encode(params, batch))
            a[i] = old - h
            lo = fn(diffnet.encode(params, batch))
            a[i] = old
            g[i] = (hi - lo) / (2 * h)
        out.append(g)
    return out


def _rel_err(a, b):
    """Relative error of analytic ``a`` against numeric ``b``.

    Exact analytic zeros (inactive ReLU paths) have no scale; there the numeric
    value must sit within central-difference roundoff instead.
    """
    zero = a == 0
    if np.any(np.abs(b[zero]) > 1e-8):
        return np.inf
    if np.all(zero):
        return 0.0
    a, b = a[~zero], b[~zero]
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6))


def test_zero_network_gives_zero_output():
    p = diffnet.init_params(3, 4, (5,), seed=0)
    for w, b in p.layers:
        w[:] = 0
        b[:] = 0
    out = diffnet.forward(p, np.random.default_rng(0).normal(size=(6, 3))).output.data
    assert np.array_equal(out, np.zeros((6, 4)))


def test_selu_closed_form_single_unit():
    p = NetworkParams([(np.ones((1, 1)), np.zeros(1)), (np.ones((1, 1)), np.zeros(1))])
    out = diffnet.forward(p, np.array([[1.0]])).output.data
    assert out[0, 0] == pytest.approx(1.0507009873554805, abs=1e-12)
    # SELU(0) = 0
    assert diffnet.encode(p, np.array([[0.0]]))[0, 0] == 0.0


def test_negative_selu_branch():
    p = NetworkParams([(np.ones((1, 1)), np.zeros(1)), (np.ones((1, 1)), np.zeros(1))])
    want = 1.0507009873554805 * 1.6732632423543772 * (np.exp(-2.0) - 1)
    assert diffnet.encode(p, np.array([[-2.0]]))[0, 0] == pytest.approx(want, rel=1e-14)


def test_forward_shape_error():
    p = diffnet.init_params(3, 2, (4,))
    with pytest.raises(ShapeError):
        diffnet.forward(p, np.zeros((2, 4)))


def test_forward_matches_encode():
    p = diffnet.init_params(4, 3, (8, 8), seed=1)
    x = np.random.default_rng(1).normal(size=(10, 4))
    assert np.allclose(diffnet.forward(p, x).output.data, diffnet.encode(p, x), rtol=0, atol=1e-14)


def test_constant_loss_zero_gradients():
    p = diffnet.init_params(2, 2, (3,), seed=0)
    fwd = diffnet.forward(p, np.ones((4, 2)))
    loss = diffnet.mul(diffnet.mean(fwd.output), 0.0) + 5.0
    for gw, gb in diffnet.backward(loss, fwd):
        assert not gw.any() and not gb.any()


def test_identity_network_bias_gradient_is_one():
    p = NetworkParams([(np.eye(3), np.zeros(3))])
    fwd = diffnet.forward(p, np.random.default_rng(0).normal(size=(1, 3)))
    loss = diffnet.sum_last(fwd.output)
    loss = diffnet.mean(loss)
    (gw, gb), = diffnet.backward(loss, fwd)
    assert np.array_equal(gb, np.ones(3))


def test_backward_twice_is_an_error():
    p = diffnet.init_params(2, 2, (3,), seed=0)
    fwd = diffnet.forward(p, np.ones((4, 2)))
    loss = diffnet.mean(diffnet.sum_last(fwd.output))
    diffnet.backward(loss, fwd)
    with pytest.raises(GraphError):
        diffnet.backward(loss, fwd)


def test_nonfinite_loss_rejected():
    t = Tensor(np.array(np.nan), requires_grad=True)
    with pytest.raises(NumericError):
        diffnet.grad(diffnet.mul(t, 1.0), [t])


def _random_composition(rng):
    widths = tuple(int(w) for w in rng.integers(1, 9, size=rng.integers(1, 3)))
    in_dim, latent = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    p = diffnet.init_params(in_dim, latent, widths, seed=int(rng.integers(1 << 30)))
    for _, b in p.layers:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    spec = [QuasimetricSpec("sum"), QuasimetricSpec("mean"), QuasimetricSpec.simple(0.5),
            QuasimetricSpec("max")][int(rng.integers(4))]
    x = rng.normal(size=(6, in_dim))
    gaps = rng.uniform(1, 4, size=3)
    return p, spec, x, gaps


def _composite_loss_np(z, spec, gaps):
    d = distance(z[:3], z[3:], spec)
    return float(np.mean((d / gaps - 1) ** 2) + 0.1 * np.mean(np.maximum(d - gaps, 0) ** 2))


def _composite_loss_graph(z, spec, gaps):
    d = distance_tensor(diffnet.slice_rows(z, 0, 3), diffnet.slice_rows(z, 3, 6), spec)
    l_o = diffnet.mean(diffnet.square(diffnet.sub(diffnet.div(d, gaps), 1.0)))
    l_c = diffnet.mean(diffnet.square(diffnet.relu(diffnet.sub(d, gaps))))
    return l_o + diffnet.mul(l_c, 0.1)


def _away_from_kinks(p, x, spec, gaps, margin=1e-3):
    z = diffnet.encode(p, x)
    diff = z[:3] - z[3:]
    if np.min(np.abs(diff)) < margin:
        return False
    r = np.sort(np.maximum(diff, 0), axis=1)
    if r.shape[1] > 1 and np.min(r[:, -1] - r[:, -2]) < margin:
        return False
    d = distance(z[:3], z[3:], spec)
    return np.min(np.abs(d - gaps)) > margin


def test_gradients_match_finite_differences_on_random_compositions():
    rng = np.random.default_rng(7)
    done = 0
    while done < 100:
        p, spec, x, gaps = _random_composition(rng)
        if not _away_from_kinks(p, x, spec, gaps):
            continue
        loss, fwd = _loss_of(p, x, lambda z: _composite_loss_graph(z, spec, gaps))
        analytic = [g for layer in diffnet.backward(loss, fwd) for g in layer]
        numeric = numeric_grads(p, x, lambda z: _composite_loss_np(z, spec, gaps))
        for a, n in zip(analytic, numeric):
            assert _rel_err(a, n) < 1e-4
        done += 1


def test_adamw_zero_gradient_no_decay_is_identity():
    p = diffnet.init_params(2, 2, (3,), seed=0)
    before = [a.copy() for a in p.arrays()]
    st_ = AdamWState.for_params(p, weight_decay=0.0)
    zero = [(np.zeros_like(w), np.zeros_like(b)) for w, b in p.layers]
    diffnet.adamw_step(p, zero, st_)
    assert st_.step_count == 1
    for a, b in zip(p.arrays(), before):
        assert np.array_equal(a, b)


def test_adamw_single_scalar_step():
    p = NetworkParams([(np.array([[1.0]]), np.array([0.0]))])
    s = AdamWState.for_params(p, learning_rate=0.1, beta1=0.0, beta2=0.0, weight_decay=0.0)
    diffnet.adamw_step(p, [(np.array([[1.0]]), np.array([0.0]))], s)
    # m = 1, v = 1, step = 0.1 * 1 / (sqrt(1) + eps)
    assert p.layers[0][0][0, 0] == pytest.approx(1 - 0.1 / (1 + 1e-8), abs=1e-15)


def test_adamw_decoupled_decay_hand_value():
    p = NetworkParams([(np.array([[2.0]]), np.array([0.0]))])
    s = AdamWState.for_params(p, learning_rate=0.1, weight_decay=0.5)
    diffnet.adamw_step(p, [(np.zeros((1, 1)), np.zeros(1))], s)
    assert p.layers[0][0][0, 0] == pytest.approx(2.0 * (1 - 0.05), abs=1e-15)


def test_adamw_converges_on_quadratic():
    target = np.array([[1.5, -0.7]])
    p = NetworkParams([(np.zeros((1, 2)), np.zeros(2))])
    s = AdamWState.for_params(p, learning_rate=0.05, weight_decay=0.0)
    for _ in range(3000):
        w = p.layers[0][0]
        diffnet.adamw_step(p, [(2 * (w - target), np.zeros(2))], s)
    assert np.allclose(p.layers[0][0], target, atol=1e-3)


def test_adamw_rejects_nonfinite_gradient():
    p = NetworkParams([(np.ones((1, 1)), np.zeros(1))])
    s = AdamWState.for_params(p)
    with pytest.raises(NumericError):
        diffnet.adamw_step(p, [(np.array([[np.inf]]), np.zeros(1))], s)
    assert p.layers[0][0][0, 0] == 1.0 and s.step_count == 0


def test_polyak_examples():
    a = diffnet.init_params(2, 2, (3,), seed=0)
    same = a.copy()
    diffnet.polyak_update(same, a, 0.005)
    for x, y in zip(same.arrays(), a.arrays()):
        assert np.allclose(x, y, rtol=0, atol=1e-15)
    zero = a.copy()
    one = a.copy()
    for x in zero.arrays():
        x[...] = 0
    for x in one.arrays():
        x[...] = 1
    diffnet.polyak_update(zero, one, 0.005)
    assert all(np.allclose(x, 0.005) for x in zero.arrays())


def test_polyak_geometric_convergence_and_contraction():
    online = diffnet.init_params(3, 2, (4,), seed=1)
    target = diffnet.init_params(3, 2, (4,), seed=2)
    beta = 0.1

    def dist(t):
        return np.sqrt(sum(np.sum((x - y) ** 2) for x, y in zip(t.arrays(), online.arrays())))

    d0 = dist(target)
    for k in range(1, 201):
        diffnet.polyak_update(target, online, beta)
        assert dist(target) == pytest.approx(d0 * (1 - beta) ** k, rel=1e-9)
    assert dist(target) < 1e-8


def test_polyak_beta_one_copies():
    online = diffnet.init_params(3, 2, (4,), seed=1)
    target = diffnet.init_params(3, 2, (4,), seed=2)
    diffnet.polyak_update(target, online, 1.0)
    for x, y in zip(target.arrays(), online.arrays()):
        assert np.array_equal(x, y)


def test_polyak_shape_mismatch():
    with pytest.raises(ShapeError):
        diffnet.polyak_update(diffnet.init_params(3, 2, (4,)), diffnet.init_params(3, 2, (5,)), 0.5)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    p = diffnet.init_params(4, 3, (5, 6), seed=3)
    path = tmp_path / "ck.bin"
    diffnet.save_params(p, path)
    q = diffnet.load_params(path)
    assert q.dims == p.dims
    for x, y in zip(p.arrays(), q.arrays()):
        assert x.tobytes() == y.tobytes()
    raw = path.read_bytes()
    assert raw.startswith(b"MADNET1")
    path.write_bytes(raw[:-3])
    with pytest.raises(ValueError):
        diffnet.load_params(path)
    path.write_bytes(raw + b"\0")
    with pytest.raises(ValueError):
        diffnet.load_params(path)


def test_init_is_seeded():
    a = diffnet.init_params(3, 2, (4,), seed=9)
    b = diffnet.init_params(3, 2, (4,), seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


def test_training_steps_are_deterministic():
    def run():
        p = diffnet.init_params(3, 2, (4,), seed=5)
        s = AdamWState.for_params(p)
        x = np.random.default_rng(0).normal(size=(8, 3))
        for _ in range(20):
            fwd = diffnet.forward(p, x)
            loss = diffnet.mean(diffnet.square(diffnet.sum_last(fwd.output)))
            diffnet.adamw_step(p, diffnet.backward(loss, fwd), s)
        return p

    a, b = run(), run()
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.arrays(), b.arrays()))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_take_rows_gradient_accumulates(n_rows, width, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(n_rows, width)), requires_grad=True)
    idx = rng.integers(n_rows, size=25)
    w = rng.normal(size=(25, width))
    loss = diffnet.mean(diffnet.sum_last(diffnet.mul(diffnet.take_rows(a, idx), w)))
    (g,) = diffnet.grad(loss, [a])
    want = np.zeros((n_rows, width))
    np.add.at(want, idx, w / 25)
    assert np.allclose(g, want, rtol=1e-12, atol=1e-14)


def test_broadcast_gradients():
    a = Tensor(np.ones((3, 2)), requires_grad=True)
    b = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    loss = diffnet.mean(diffnet.sum_last(diffnet.mul(a, b)))
    ga, gb = diffnet.grad(loss, [a, b])
    assert np.allclose(ga, np.tile([2.0, 3.0], (3, 1)) / 3)
    assert np.allclose(gb, [1.0, 1.0])
