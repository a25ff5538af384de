"""Centralized value heads and the three-term training loss.

    L     = L_td + lam_opt * L_opt + lam_nopt * L_nopt
    L_td  = (Q_tot(s, H, A) - y)^2,  y = r + gamma * te * Qhat_tot(s', H'-, Abar')
    L_opt = (sum_k Q_k(Abar) - Qhat_tot(Abar) + V)^2
    L_nopt= min(sum_k Q_k(A) - Qhat_tot(A) + V, 0)^2

``Qhat`` is the joint head evaluated entirely with the frozen target
parameters (target CNNs, agent nets and mixer), ``Abar`` the per-agent masked
argmax of the eval agent values, ``Abar'`` that of the target agent values at
the next step. Means run over valid (unpadded) steps.
"""
import numpy as np

from .neuralcore.layers import Kink
from .neuralcore.params import copy_params


def masked_argmax(q, mask):
    """Argmax over the last axis ignoring masked-out entries; ties -> first."""
    return np.where(mask, q, -np.inf).argmax(axis=-1)


def sum_q(values):
    """Summation unit: Q'_tot = sum of the per-agent selected values."""
    return float(np.sum(values))


def _rows(s_c, H, A=None):
    s_c = np.atleast_2d(np.asarray(s_c, dtype=float))
    H = np.asarray(H, dtype=float)
    if H.ndim == 2:
        H = H[None]
    if A is not None:
        A = np.atleast_2d(np.asarray(A, dtype=np.int64))
    return s_c, H, A


def _check(net, s_c, H, A=None):
    if s_c.shape[1] != net.dg or H.shape[1:] != (net.F, net.hidden) or s_c.shape[0] != H.shape[0]:
        raise ValueError(f"mixer inputs must be s_c (N, {net.dg}) and H (N, {net.F}, {net.hidden}); "
                         f"got {s_c.shape} and {H.shape}")
    if A is not None and (A.shape != (s_c.shape[0], net.F) or A.min() < 0 or A.max() >= net.P):
        raise ValueError(f"joint action must be (N, {net.F}) cell indices below {net.P}")


def eval_total(s_c, H, A, net, params):
    """(Q_tot, V) for one row (scalars) or a batch of rows (arrays)."""
    single = np.ndim(s_c) == 1
    s_c, H, A = _rows(s_c, H, A)
    _check(net, s_c, H, A)
    q, _ = net.mix_q(params, s_c, H, A)
    v, _ = net.mix_v(params, s_c, H)
    return (float(q[0]), float(v[0])) if single else (q, v)


def target_total(s_c_next, H_next, A_bar_next, net, targets):
    single = np.ndim(s_c_next) == 1
    s_c, H, A = _rows(s_c_next, H_next, A_bar_next)
    _check(net, s_c, H, A)
    q, _ = net.mix_q(targets, s_c, H, A)
    return float(q[0]) if single else q


def sync_targets(params, targets=None):
    """Deep copy of the eval parameters (in place into ``targets`` if given)."""
    if targets is None:
        return copy_params(params)
    for k, v in params.items():
        targets[k] = np.array(v, copy=True)
    return targets


def _gather(q, idx):
    return np.take_along_axis(q, idx[..., None], axis=-1)[..., 0]


def compute_loss(batch, net, params, targets, gamma=0.7, lambda_opt=1.0, lambda_nopt=1.0,
                 v_inputs=None):
    """Loss and gradients (w.r.t. ``params`` only) on a batch of episodes.

    ``batch`` keys: gplanes (B,T,7,H,W), lplanes (B,T,F,3,H,W), urge (B,T,F,2),
    actions (B,T,F), masks (B,T,F,P) bool, rewards (B,T), te (B,T), valid (B,T).
    Returns ``(L, grads, info)``; ``info`` holds the three terms and a cache
    tree whose kink margins the gradient checker can inspect.

    ``v_inputs=(sc, hid)`` feeds the state-value head fixed inputs instead of
    the live features; finite differences then see exactly the function whose
    gradient the default (stopped) V pathway computes.
    """
    valid = np.asarray(batch["valid"], dtype=float)
    n = valid.sum()
    if valid.size == 0 or n == 0:
        raise ValueError("empty batch")
    B, T = valid.shape
    N = B * T
    F = net.F
    A = np.asarray(batch["actions"], dtype=np.int64)
    masks = batch["masks"]

    out = net.unroll(params, batch["gplanes"], batch["lplanes"], batch["urge"])
    tgt = net.unroll(targets, batch["gplanes"], batch["lplanes"], batch["urge"])
    q, sc, hid = out["q"], out["sc"], out["hid"]
    tq, tsc, thid = tgt["q"], tgt["sc"], tgt["hid"]

    abar = masked_argmax(q, masks)
    abar_next = masked_argmax(tq, masks)

    q_tot, cq = net.mix_q(params, sc.reshape(N, -1), hid.reshape(N, F, -1), A.reshape(N, F))
    v_sc, v_hid = (sc, hid) if v_inputs is None else v_inputs
    v, cv = net.mix_v(params, v_sc.reshape(N, -1), v_hid.reshape(N, F, -1))
    q_tot, v = q_tot.reshape(B, T), v.reshape(B, T)

    boot = np.zeros((B, T))
    if T > 1:
        nxt, _ = net.mix_q(targets, tsc[:, 1:].reshape(B * (T - 1), -1),
                           thid[:, 1:].reshape(B * (T - 1), F, -1),
                           abar_next[:, 1:].reshape(B * (T - 1), F))
        boot[:, :-1] = nxt.reshape(B, T - 1)
    y = batch["rewards"] + gamma * batch["te"] * boot

    qhat_bar, _ = net.mix_q(targets, tsc.reshape(N, -1), thid.reshape(N, F, -1), abar.reshape(N, F))
    qhat_a, _ = net.mix_q(targets, tsc.reshape(N, -1), thid.reshape(N, F, -1), A.reshape(N, F))
    qhat_bar, qhat_a = qhat_bar.reshape(B, T), qhat_a.reshape(B, T)

    sum_bar = _gather(q, abar).sum(axis=-1)
    sum_a = _gather(q, A).sum(axis=-1)

    e_td = q_tot - y
    e_opt = sum_bar - qhat_bar + v
    raw_nopt = sum_a - qhat_a + v
    e_nopt = np.minimum(raw_nopt, 0.0)

    l_td = float(np.sum(valid * e_td ** 2) / n)
    l_opt = float(np.sum(valid * e_opt ** 2) / n)
    l_nopt = float(np.sum(valid * e_nopt ** 2) / n)
    loss = l_td + lambda_opt * l_opt + lambda_nopt * l_nopt

    d_qtot = 2.0 * valid * e_td / n
    g_opt = lambda_opt * 2.0 * valid * e_opt / n
    g_nopt = lambda_nopt * 2.0 * valid * e_nopt / n
    d_v = g_opt + g_nopt
    d_q = np.zeros_like(q)
    bi, ti, ki = np.indices(A.shape)
    np.add.at(d_q, (bi, ti, ki, abar), np.broadcast_to(g_opt[..., None], A.shape))
    np.add.at(d_q, (bi, ti, ki, A), np.broadcast_to(g_nopt[..., None], A.shape))

    grads = {}
    d_sc, d_hid = net.mix_q_backward(params, d_qtot.reshape(N), cq, grads)
    d_sc_v, d_hid_v = net.mix_v_backward(params, d_v.reshape(N), cv, grads)
    if net.v_grad_to_inputs:
        d_sc = d_sc + d_sc_v
        d_hid = d_hid + d_hid_v
    g_net = net.unroll_backward(params, out, d_sc.reshape(B, T, -1),
                                d_hid.reshape(B, T, F, -1), d_q)
    for k, g in g_net.items():
        grads[k] = grads[k] + g if k in grads else g
    for k in params:
        if k not in grads:
            grads[k] = np.zeros_like(params[k])

    kinks = [out["cache"], cq, cv, Kink(_argmax_gap(q, masks, valid)),
             Kink(float(np.min(np.abs(raw_nopt[valid > 0]))))]
    info = {"l_td": l_td, "l_opt": l_opt, "l_nopt": l_nopt, "loss": loss,
            "q_tot": q_tot, "v": v, "y": y, "kinks": kinks}
    return loss, grads, info


def _argmax_gap(q, mask, valid):
    """Smallest gap between the best and second-best admissible value."""
    m = np.where(mask, q, -np.inf)
    top2 = -np.sort(-m, axis=-1)[..., :2]
    gap = top2[..., 0] - top2[..., 1]
    gap = np.where(np.isfinite(gap), gap, np.inf)
    sel = np.broadcast_to(valid[..., None] > 0, gap.shape)
    return float(np.min(gap[sel], initial=np.inf))
