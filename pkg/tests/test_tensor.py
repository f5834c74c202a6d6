import numpy as np
import pytest

from handrift import tensor as tz
from handrift.checkpoint import load_checkpoint, save_checkpoint
from handrift.errors import ContractError, OptimizerError, ShapeError
from handrift.optim import AdamW
from handrift.rng import RandomStream
from handrift.tensor import Tensor, backward, trace


def finite_diff(f, x, i, eps=1e-5):
    """Central difference of scalar f at flat coordinate i of array x."""
    flat = x.reshape(-1)
    old = flat[i]
    flat[i] = old + eps
    up = f()
    flat[i] = old - eps
    down = f()
    flat[i] = old
    return (up - down) / (2 * eps)


def check_grad(build, x, coords=None, rtol=1e-4):
    """build() -> scalar Tensor reading x.data; compares backward vs FD."""
    x.grad = None
    loss = build()
    backward(loss)
    g = x.grad.copy()
    n = x.data.size
    coords = coords if coords is not None else range(n)
    for i in coords:
        fd = finite_diff(lambda: build().item(), x.data, i)
        got = g.reshape(-1)[i]
        assert got == pytest.approx(fd, rel=rtol, abs=1e-8), f"coord {i}: {got} vs {fd}"


def test_matmul_ones():
    out = tz.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    np.testing.assert_array_equal(out.data, np.full((2, 2), 3.0))


def test_softmax_uniform():
    out = tz.softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    out = tz.softmax(Tensor(rng.normal(size=(20, 7)) * 10), temperature=0.37)
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(20), atol=1e-12)


def test_hinge_values():
    out = tz.hinge(Tensor([-2.5, 2.5]))
    np.testing.assert_array_equal(out.data, [0.0, 2.5])


def test_layer_norm_zero_mean():
    rng = np.random.default_rng(5)
    out = tz.layer_norm(Tensor(rng.normal(size=(11, 9)) * 4 + 3))
    assert np.abs(out.data.mean(axis=-1)).max() < 1e-10


def test_sign_zero_gradient():
    x = Tensor([1.5, -0.3, 0.0], requires_grad=True)
    loss = tz.tsum(tz.sign(x) * Tensor([2.0, 3.0, 4.0]))
    backward(loss)
    np.testing.assert_array_equal(x.grad, np.zeros(3))


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        tz.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        tz.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_backward_simple_analytic():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = tz.tsum(x * x)
    backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_constant_wrt_leaf():
    x = Tensor([1.0, 2.0], requires_grad=True)
    c = Tensor([5.0])
    loss = tz.tsum(c * c) + 0.0 * tz.tsum(x)
    backward(loss)
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_trace_topological_and_leaves():
    x = Tensor(np.ones(2), requires_grad=True)
    y = x * 2.0
    z = y + x
    g = trace(tz.tsum(z))
    seen = {id(n): i for i, n in enumerate(g.nodes)}
    for node in g.nodes:
        for p in node._parents:
            assert seen[id(p)] < seen[id(node)]
    assert [id(l) for l in g.leaves] == [id(x)]


def test_composite_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)

    def build():
        h = tz.tanh(tz.matmul(x, w))
        s = tz.softmax(h, temperature=0.7)
        a = tz.layer_norm(h) * 0.5 + tz.exp(h * 0.1)
        b = tz.log(tz.hinge(a) + 1.0) - tz.sin(h) * tz.cos(h)
        c = tz.concatenate([b, s], axis=1)
        d = tz.transpose(c)[1:5, :]
        return tz.tmean(d * d) + tz.tsum(tz.sqrt(tz.hinge(h) + 0.3))

    check_grad(build, x)
    x.zero_grad()
    check_grad(build, w)


def test_batched_matmul_broadcast_gradients():
    rng = np.random.default_rng(13)
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 5)), requires_grad=True)

    def build():
        return tz.tsum(tz.tanh(tz.matmul(a, w)))

    check_grad(build, a, coords=range(0, 24, 5))
    a.zero_grad()
    check_grad(build, w)


def test_getitem_scatter_gradient():
    rng = np.random.default_rng(17)
    x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)

    def build():
        return tz.tsum(x[1:4, ::2] * x[0:3, 1::2])

    check_grad(build, x)


def test_where_selects_gradient_branch():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    mask = np.array([True, False, True])
    loss = tz.tsum(tz.where(mask, x * 2.0, x * 10.0))
    backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 10.0, 2.0])


def test_no_grad_skips_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with tz.no_grad():
        y = x * 3.0
    assert y._backward is None and not y.requires_grad


def test_determinism_bitwise():
    def run():
        rng = RandomStream(99, "det")
        x = Tensor(rng.normal((6, 6)), requires_grad=True)
        loss = tz.tsum(tz.softmax(tz.matmul(x, x), temperature=0.5) * tz.tanh(x))
        backward(loss)
        return loss.item(), x.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    np.testing.assert_array_equal(g1, g2)


# ---------------------------------------------------------------------------
# optimizer


def test_adamw_zero_grad_zero_decay_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adamw_matches_hand_unrolled_sequence():
    # independent oracle: unroll the bias-corrected update by hand
    lr, b1, b2, eps, wd = 0.01, 0.9, 0.999, 1e-8, 0.1
    grads = [0.3, -0.7, 0.2]
    theta, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        theta = theta - lr * (mh / (np.sqrt(vh) + eps) + wd * theta)

    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW({"p": p}, lr=lr, betas=(b1, b2), eps=eps, weight_decay=wd)
    for g in grads:
        p.grad = np.array([g])
        opt.step()
    assert p.data[0] == pytest.approx(theta, rel=1e-12)


def test_adamw_lr_decay_schedule():
    p = Tensor(np.zeros(1), requires_grad=True)
    opt = AdamW({"p": p}, lr=1e-4, lr_decay_factor=0.8, lr_decay_epochs=5)
    opt.set_epoch(4)
    assert opt.lr == pytest.approx(1e-4)
    opt.set_epoch(5)
    assert opt.lr == pytest.approx(0.8e-4)
    opt.set_epoch(10)
    assert opt.lr == pytest.approx(0.64e-4)


def test_adamw_rejects_nonfinite_gradient():
    p = Tensor(np.zeros(2), requires_grad=True, name="w.bad")
    opt = AdamW({"w.bad": p}, lr=0.1)
    p.grad = np.array([1.0, np.nan])
    with pytest.raises(OptimizerError, match="w.bad"):
        opt.step()


# ---------------------------------------------------------------------------
# rng + checkpoint


def test_random_stream_replay_and_split():
    a = RandomStream(5, "x").normal((4,))
    b = RandomStream(5, "x").normal((4,))
    c = RandomStream(5, "y").normal((4,))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    d1 = RandomStream(5, "x").split("sub").normal((4,))
    d2 = RandomStream(5, "x/sub").normal((4,))
    np.testing.assert_array_equal(d1, d2)


def test_checkpoint_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(23)
    tensors = {
        "a.w": rng.normal(size=(7, 3)),
        "b": rng.normal(size=(11,)),
        "scalar": np.array(3.25),
    }
    p1 = tmp_path / "one.ckpt"
    p2 = tmp_path / "two.ckpt"
    save_checkpoint(p1, tensors, seed=42, config_hash="deadbeef", extra={"k": [1, 2]})
    manifest, loaded = load_checkpoint(p1)
    assert manifest["seed"] == 42 and manifest["config_hash"] == "deadbeef"
    for k in tensors:
        np.testing.assert_array_equal(loaded[k], tensors[k])
    save_checkpoint(p2, loaded, seed=manifest["seed"], config_hash=manifest["config_hash"],
                    extra=manifest["extra"])
    assert p1.read_bytes() == p2.read_bytes()


def test_no_grad_is_thread_local():
    import threading

    results = {}

    def worker():
        with tz.no_grad():
            results["worker_inside"] = tz.grad_enabled()
        results["worker_after"] = tz.grad_enabled()

    with tz.no_grad():
        t = threading.Thread(target=worker)
        t.start()
        t.join()
        results["main_inside"] = tz.grad_enabled()
    assert results == {"worker_inside": False, "worker_after": True, "main_inside": False}
    assert tz.grad_enabled()
