import numpy as np
import pytest

from oracles import finite_difference_grads, max_relative_error
from windbess.nn import Adam, Mlp, soft_update


def random_net(seed):
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 4))
    sizes = [int(rng.integers(1, 6)) for _ in range(depth + 1)]
    return Mlp(sizes, ["tanh", "identity"][seed % 2], rng), rng


def test_zero_network_outputs_zero():
    net = Mlp([3, 4, 2], "identity")
    for p in net.params:
        p[...] = 0.0
    assert np.array_equal(net.forward([1.0, -2.0, 3.0]), np.zeros(2))


def test_single_linear_layer():
    net = Mlp([1, 1], "identity")
    net.weights[0][...] = 2.0
    net.biases[0][...] = 1.0
    assert net.forward([3.0]) == pytest.approx([7.0])


def test_tanh_head_saturates_below_one():
    net = Mlp([1, 1], "tanh")
    net.weights[0][...] = 100.0
    net.biases[0][...] = 0.0
    y = net.forward([5.0])[0]
    assert y <= 1.0 and y == pytest.approx(1.0)


def test_batch_and_single_agree():
    net, rng = random_net(3)
    x = rng.normal(size=(5, net.sizes[0]))
    batch = net.forward(x)
    for i in range(5):
        np.testing.assert_array_equal(net.forward(x[i]), batch[i])


def test_rejects_wrong_width():
    with pytest.raises(ValueError):
        Mlp([3, 2]).forward([1.0, 2.0])


@pytest.mark.parametrize("seed", range(24))
def test_gradients_match_finite_differences(seed):
    net, rng = random_net(seed)
    x = rng.normal(size=(4, net.sizes[0]))
    dy = rng.normal(size=(4, net.sizes[-1]))
    _, cache = net.forward_cache(x)
    grads, dx = net.backward(cache, dy)
    assert max_relative_error(grads, finite_difference_grads(net, x, dy)) < 1e-4
    h = 1e-6
    fd_x = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd_x[idx] = (np.sum(dy * net.forward(xp)) - np.sum(dy * net.forward(xm))) / (2 * h)
    assert max_relative_error([dx], [fd_x]) < 1e-4


def test_preactivation_gradient_path():
    net, rng = random_net(1)
    net = Mlp([3, 5, 2], "tanh", rng)
    x = rng.normal(size=(4, 3))
    dz = rng.normal(size=(4, 2))
    _, cache = net.forward_cache(x)
    grads, _ = net.backward(cache, np.zeros((4, 2)), dz)

    def f():
        _, c = net.forward_cache(x)
        return float(np.sum(dz * Mlp.preactivation(c)))

    h = 1e-6
    for p, g in zip(net.params, grads):
        for idx in np.ndindex(p.shape):
            keep = p[idx]
            p[idx] = keep + h
            up = f()
            p[idx] = keep - h
            down = f()
            p[idx] = keep
            assert g[idx] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-8)


def test_zero_output_gradient_gives_zero_grads():
    net, rng = random_net(5)
    _, cache = net.forward_cache(rng.normal(size=(3, net.sizes[0])))
    grads, dx = net.backward(cache, np.zeros((3, net.sizes[-1])))
    assert all(not g.any() for g in grads) and not dx.any()


def test_adam_zero_gradient_leaves_params():
    net = Mlp([2, 3, 1])
    before = [p.copy() for p in net.params]
    Adam(net, 0.1).step(net, [np.zeros_like(p) for p in net.params])
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params))


def test_adam_first_step_moves_by_lr():
    net = Mlp([1, 1])
    net.weights[0][...] = 0.0
    net.biases[0][...] = 0.0
    Adam(net, 0.1).step(net, [np.ones((1, 1)), np.zeros(1)])
    assert net.weights[0][0, 0] == pytest.approx(-0.1, rel=1e-6)


def test_adam_is_deterministic():
    outs = []
    for _ in range(2):
        net = Mlp([2, 4, 1], rng=np.random.default_rng(9))
        opt = Adam(net, 0.01)
        for k in range(3):
            opt.step(net, [np.full_like(p, 0.1 * (k + 1)) for p in net.params])
        outs.append([p.copy() for p in net.params])
    assert all(np.array_equal(a, b) for a, b in zip(*outs))


def test_adam_rejects_bad_gradients():
    net = Mlp([1, 1])
    opt = Adam(net)
    with pytest.raises(ValueError):
        opt.step(net, [np.ones((2, 2)), np.zeros(1)])
    with pytest.raises(ValueError):
        opt.step(net, [np.full((1, 1), np.nan), np.zeros(1)])


def test_regression_loss_descends():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (64, 2))
    y = np.sin(2 * x[:, :1]) + x[:, 1:] ** 2
    net = Mlp([2, 16, 1], "identity", rng)
    opt = Adam(net, 1e-2)
    losses = []
    for _ in range(40):
        out, cache = net.forward_cache(x)
        err = out - y
        losses.append(float(np.mean(err ** 2)))
        grads, _ = net.backward(cache, 2 * err / len(x))
        opt.step(net, grads)
    tail = losses[5:]
    assert all(b < a for a, b in zip(tail, tail[1:]))


def test_soft_update_example():
    src, tgt = Mlp([1, 1]), Mlp([1, 1])
    for p in src.params:
        p[...] = 1.0
    for p in tgt.params:
        p[...] = 0.0
    soft_update(tgt, src, 0.005)
    assert all(np.allclose(p, 0.005, rtol=0, atol=1e-15) for p in tgt.params)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    net, rng = random_net(7)
    net.save(tmp_path / "n.mlp")
    back = Mlp.load(tmp_path / "n.mlp")
    assert back.sizes == net.sizes and back.output == net.output
    assert all(np.array_equal(a, b) for a, b in zip(net.params, back.params))
    x = rng.normal(size=(3, net.sizes[0]))
    np.testing.assert_array_equal(net.forward(x), back.forward(x))


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.mlp").write_bytes(b"not a net")
    with pytest.raises(ValueError):
        Mlp.load(tmp_path / "bad.mlp")
    net = Mlp([2, 2])
    net.save(tmp_path / "cut.mlp")
    blob = (tmp_path / "cut.mlp").read_bytes()
    (tmp_path / "cut.mlp").write_bytes(blob[:-8])
    with pytest.raises(ValueError):
        Mlp.load(tmp_path / "cut.mlp")
