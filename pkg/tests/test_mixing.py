import itertools

import numpy as np
import pytest

from hecta.mixing import compute_loss, eval_total, masked_argmax, sum_q, sync_targets, target_total
from hecta.model import HectaNet
from hecta.neuralcore.gradcheck import numeric_grad, rel_error, sample_indices
from hecta.neuralcore.layers import kink_margin


def random_batch(rng, net, B=2, T=3):
    H, W, F, P = net.H, net.W, net.F, net.P
    m = rng.random((B, T, F, P)) < 0.5
    m[..., 0] = True
    v = np.ones((B, T), bool)
    v[1, 2] = False
    te = np.ones((B, T))
    te[0, 2] = 0
    te[1, 1] = 0
    return dict(gplanes=rng.standard_normal((B, T, 7, H, W)), lplanes=rng.standard_normal((B, T, F, 3, H, W)),
                urge=rng.random((B, T, F, 2)), actions=rng.integers(0, P, (B, T, F)), masks=m,
                rewards=rng.standard_normal((B, T)), te=te, valid=v)


def igm_violations(rng, agents=3, actions=5):
    q = rng.standard_normal((agents, actions))
    best = max(itertools.product(range(actions), repeat=agents),
               key=lambda a: sum_q(q[np.arange(agents), a]))
    return int(tuple(q.argmax(axis=1)) != best)


def test_igm_by_sum_small():
    rng = np.random.default_rng(0)
    assert sum(igm_violations(rng) for _ in range(10)) == 0


def test_masked_argmax():
    q = np.array([[3.0, 1.0, 2.0]])
    assert masked_argmax(q, np.array([[False, True, True]]))[0] == 2
    assert masked_argmax(np.array([1.0, 1.0]), np.array([True, True])) == 0


def test_heads_shapes_and_target_pathway():
    rng = np.random.default_rng(0)
    net = HectaNet(6, 6, [0, 1, 2], hidden=8, mixer_hidden=8)
    p = net.init(rng)
    t = sync_targets(p)
    sc = rng.standard_normal(net.dg)
    H = rng.standard_normal((3, 8))
    A = [0, 5, 35]
    q, v = eval_total(sc, H, A, net, p)
    assert isinstance(q, float) and isinstance(v, float)
    assert target_total(sc, H, A, net, t) == q
    t["mixq.b2"] = t["mixq.b2"] + 1.0
    assert target_total(sc, H, A, net, t) == pytest.approx(q + 1.0)
    with pytest.raises(ValueError):
        eval_total(sc, H, [0, 1, 36], net, p)
    with pytest.raises(ValueError):
        eval_total(sc[:-1], H, A, net, p)


def test_sync_targets_copies():
    p = {"a": np.ones(3)}
    t = sync_targets(p)
    p["a"][0] = 5
    assert t["a"][0] == 1
    sync_targets(p, t)
    assert t["a"][0] == 5 and t["a"] is not p["a"]


def test_loss_terms_by_hand():
    rng = np.random.default_rng(1)
    net = HectaNet(5, 6, [0, 1, 2], hidden=8, mixer_hidden=8)
    p, t = net.init(rng), net.init(rng)
    b = random_batch(rng, net)
    L, g, info = compute_loss(b, net, p, t, gamma=0.7, lambda_opt=0.5, lambda_nopt=2.0)
    assert L == pytest.approx(info["l_td"] + 0.5 * info["l_opt"] + 2.0 * info["l_nopt"])
    # terminal rows have y == r; padded rows are ignored
    assert info["y"][0, 2] == b["rewards"][0, 2] and info["y"][1, 1] == b["rewards"][1, 1]
    b2 = dict(b)
    b2["rewards"] = b["rewards"].copy()
    b2["rewards"][1, 2] += 100.0
    assert compute_loss(b2, net, p, t)[0] == pytest.approx(compute_loss(b, net, p, t)[0])
    assert set(g) == set(p)


def test_empty_batch_rejected():
    rng = np.random.default_rng(0)
    net = HectaNet(5, 6, [0, 1], hidden=4, mixer_hidden=4)
    p = net.init(rng)
    b = random_batch(rng, net)
    b["valid"] = np.zeros_like(b["valid"])
    with pytest.raises(ValueError):
        compute_loss(b, net, p, p)


def composite_error(seed, ablate=None, v_grad=False, probes=3, h=1e-5):
    """Worst relative error of the loss gradient at ``probes`` entries per tensor.

    The loss is O(1) while some entries of its gradient are O(1e-6), so the
    central difference uses h=1e-5: at 1e-6 roundoff alone reaches ~1e-4
    relative on those entries.
    """
    rng = np.random.default_rng(seed)
    net = HectaNet(5, 6, [0, 1, 1, 2], hidden=8, mixer_hidden=8, ablate=ablate, v_grad_to_inputs=v_grad)
    for _ in range(20):
        p, t = net.init(rng), net.init(rng)
        b = random_batch(rng, net)
        vi = None
        if not v_grad:
            o = net.unroll(p, b["gplanes"], b["lplanes"], b["urge"])
            vi = (o["sc"].copy(), o["hid"].copy())
        _, g, info = compute_loss(b, net, p, t, v_inputs=vi)
        if kink_margin(info["kinks"]) > 1e-4:
            break
    else:
        raise AssertionError("could not draw inputs away from kinks")
    f = lambda: compute_loss(b, net, p, t, v_inputs=vi)[0]
    worst = 0.0
    for k in p:
        idx = sample_indices(p[k].shape, probes, rng)
        num = numeric_grad(f, p[k], idx, h)
        worst = max(worst, rel_error(g[k].reshape(-1)[idx], num).max())
    return worst


@pytest.mark.parametrize("ablate", [None, "eiem", "sedm"])
@pytest.mark.parametrize("v_grad", [False, True])
def test_composite_loss_gradient(ablate, v_grad):
    assert composite_error(0, ablate, v_grad) <= 1e-4


def test_composite_gradient_detects_corruption():
    rng = np.random.default_rng(3)
    net = HectaNet(5, 6, [0, 1, 2], hidden=8, mixer_hidden=8, v_grad_to_inputs=True)
    p, t = net.init(rng), net.init(rng)
    b = random_batch(rng, net)
    _, g, _ = compute_loss(b, net, p, t)
    f = lambda: compute_loss(b, net, p, t)[0]
    idx = sample_indices(p["mixq.w2"].shape, 3, rng)
    num = numeric_grad(f, p["mixq.w2"], idx, 1e-6)
    assert rel_error(1.01 * g["mixq.w2"].reshape(-1)[idx], num).max() > 1e-4


def test_loss_sanity():
    rng = np.random.default_rng(4)
    net = HectaNet(5, 6, [0, 1, 2], hidden=8, mixer_hidden=8)
    for _ in range(5):
        p, t = net.init(rng), net.init(rng)
        b = random_batch(rng, net)
        L, _, info = compute_loss(b, net, p, t)
        assert L >= 0 and min(info["l_td"], info["l_opt"], info["l_nopt"]) >= 0
    # rewards chosen so that y equals Q_tot exactly -> zero TD term
    b = random_batch(rng, net)
    _, _, info = compute_loss(b, net, p, t)
    b["rewards"] = b["rewards"] + (info["q_tot"] - info["y"])
    _, _, info2 = compute_loss(b, net, p, t)
    assert info2["l_td"] == pytest.approx(0.0, abs=1e-24)


def test_gradient_isolation_from_targets():
    rng = np.random.default_rng(5)
    net = HectaNet(5, 6, [0, 1, 2], hidden=8, mixer_hidden=8)
    p, t = net.init(rng), net.init(rng)
    b = random_batch(rng, net)
    _, g, _ = compute_loss(b, net, p, t)
    assert set(g) == set(p)
    before = {k: v.copy() for k, v in t.items()}
    compute_loss(b, net, p, t)
    assert all(np.array_equal(before[k], t[k]) for k in t)


def test_sync_semantics():
    from hecta.neuralcore.params import params_equal
    rng = np.random.default_rng(6)
    net = HectaNet(5, 6, [0, 1], hidden=4, mixer_hidden=4)
    p = net.init(rng)
    t = sync_targets(p)
    assert params_equal(p, t)
    sync_targets(p, t)
    assert params_equal(p, t)
    _, g, _ = compute_loss(random_batch(rng, net), net, p, t)
    for k in p:
        p[k] -= 0.01 * g[k]
    assert not params_equal(p, t)
