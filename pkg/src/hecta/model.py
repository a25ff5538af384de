"""The HECTA4ER network: feature extractors, per-class recurrent agent nets
and the centralized mixer heads, with hand-written backward passes.

Parameter names (one flat dict)::

    gconv.W/b            global-state conv block (7 planes in)
    lconv.W/b            local-observation conv block (3 planes in), shared by all agents
    {cls}.fc1.W/b        agent input layer, cls in uav/worker/ugv
    {cls}.gru.*          GRU cell (or {cls}.ff.W/b when the recurrence is ablated)
    {cls}.fc2.W/b        action-value head, |P| outputs
    mixq.Ws/Wh/Wa/b1/w2/b2   joint action-value head over [s_c | H | one-hot A]
    mixv.Ws/Wh/b1/w2/b2      state-value head over [s_c | H]

Ablations: ``eiem`` replaces both conv blocks by plain flattening; ``sedm``
replaces the GRU by a feed-forward ReLU layer (no recurrence).
"""
import numpy as np

from .encoding import N_GLOBAL, N_LOCAL
from .neuralcore.layers import (
    conv_block_backward, conv_block_forward, conv_out_shape, dense_backward,
    dense_forward, gru_backward, gru_forward, relu_backward, relu_forward,
    uniform_fan_in,
)

CLASS_KEYS = ("uav", "worker", "ugv")
ABLATIONS = (None, "eiem", "sedm")


class HectaNet:
    def __init__(self, grid_height, grid_width, entity_class, hidden=128, channels=10,
                 mixer_hidden=128, ablate=None, v_grad_to_inputs=False):
        if ablate not in ABLATIONS:
            raise ValueError(f"unknown ablation {ablate!r}")
        self.H, self.W = int(grid_height), int(grid_width)
        self.P = self.H * self.W
        self.entity_class = np.asarray(entity_class, dtype=np.int64)
        self.F = len(self.entity_class)
        self.hidden = hidden
        self.channels = channels
        self.mixer_hidden = mixer_hidden
        self.ablate = ablate
        self.v_grad_to_inputs = v_grad_to_inputs
        if ablate == "eiem":
            self.dg = N_GLOBAL * self.P
            self.dl = N_LOCAL * self.P
        else:
            self.dg = int(np.prod(conv_out_shape(N_GLOBAL, self.H, self.W, channels)))
            self.dl = int(np.prod(conv_out_shape(N_LOCAL, self.H, self.W, channels)))
        self.d_in = self.dl + self.F + 2
        self.classes = [c for c in range(3) if np.any(self.entity_class == c)]
        self.members = {c: np.flatnonzero(self.entity_class == c) for c in self.classes}

    @classmethod
    def for_layout(cls, layout, **kw):
        return cls(layout.H, layout.W, layout.entity_class, **kw)

    def config(self):
        return {"grid_height": self.H, "grid_width": self.W,
                "entity_class": self.entity_class.tolist(), "hidden": self.hidden,
                "channels": self.channels, "mixer_hidden": self.mixer_hidden,
                "ablate": self.ablate, "v_grad_to_inputs": self.v_grad_to_inputs}

    @classmethod
    def from_config(cls, cfg):
        return cls(**cfg)

    # -- parameters --------------------------------------------------------------

    def shapes(self):
        """name -> (shape, fan_in)."""
        Hd, M, C, F, P = self.hidden, self.mixer_hidden, self.channels, self.F, self.P
        out = {}
        if self.ablate != "eiem":
            out["gconv.W"] = ((C, N_GLOBAL, 3, 3), N_GLOBAL * 9)
            out["gconv.b"] = ((C,), N_GLOBAL * 9)
            out["lconv.W"] = ((C, N_LOCAL, 3, 3), N_LOCAL * 9)
            out["lconv.b"] = ((C,), N_LOCAL * 9)
        for c in self.classes:
            k = CLASS_KEYS[c]
            out[f"{k}.fc1.W"] = ((self.d_in, Hd), self.d_in)
            out[f"{k}.fc1.b"] = ((Hd,), self.d_in)
            if self.ablate == "sedm":
                out[f"{k}.ff.W"] = ((Hd, Hd), Hd)
                out[f"{k}.ff.b"] = ((Hd,), Hd)
            else:
                out[f"{k}.gru.W_ih"] = ((Hd, 3 * Hd), Hd)
                out[f"{k}.gru.W_hh"] = ((Hd, 3 * Hd), Hd)
                out[f"{k}.gru.b_ih"] = ((3 * Hd,), Hd)
                out[f"{k}.gru.b_hh"] = ((3 * Hd,), Hd)
            out[f"{k}.fc2.W"] = ((Hd, P), Hd)
            out[f"{k}.fc2.b"] = ((P,), Hd)
        dq = self.dg + F * Hd + F * P
        out["mixq.Ws"] = ((self.dg, M), dq)
        out["mixq.Wh"] = ((F * Hd, M), dq)
        out["mixq.Wa"] = ((F * P, M), dq)
        out["mixq.b1"] = ((M,), dq)
        out["mixq.w2"] = ((M, 1), M)
        out["mixq.b2"] = ((1,), M)
        dv = self.dg + F * Hd
        out["mixv.Ws"] = ((self.dg, M), dv)
        out["mixv.Wh"] = ((F * Hd, M), dv)
        out["mixv.b1"] = ((M,), dv)
        out["mixv.w2"] = ((M, 1), M)
        out["mixv.b2"] = ((1,), M)
        return out

    def init(self, rng, zero=False):
        return {name: (np.zeros(shape) if zero else uniform_fan_in(rng, shape, fan))
                for name, (shape, fan) in sorted(self.shapes().items())}

    def id_onehot(self):
        return np.eye(self.F)

    # -- feature extraction ------------------------------------------------------

    def global_features(self, params, gplanes):
        """(N, 7, H, W) -> (N, dg)."""
        if self.ablate == "eiem":
            return gplanes.reshape(gplanes.shape[0], -1), None
        return conv_block_forward(gplanes, params, "gconv.")

    def global_features_backward(self, params, d, cache, grads):
        if self.ablate != "eiem":
            _, g = conv_block_backward(d, cache, params, "gconv.")
            _accumulate(grads, g)

    def local_features(self, params, lplanes):
        """(N, 3, H, W) -> (N, dl)."""
        if self.ablate == "eiem":
            return lplanes.reshape(lplanes.shape[0], -1), None
        return conv_block_forward(lplanes, params, "lconv.")

    def local_features_backward(self, params, d, cache, grads):
        if self.ablate != "eiem":
            _, g = conv_block_backward(d, cache, params, "lconv.")
            _accumulate(grads, g)

    # -- agent nets --------------------------------------------------------------

    def _agent_input(self, lf, urge, idx):
        """lf (..., n, dl), urge (..., n, 2) for agents ``idx`` -> (..., n, d_in)."""
        onehot = np.broadcast_to(self.id_onehot()[idx], lf.shape[:-1] + (self.F,))
        return np.concatenate([lf, onehot, urge], axis=-1)

    def _core_step(self, params, k, z, h):
        if self.ablate == "sedm":
            y, xc = dense_forward(z, params[f"{k}.ff.W"], params[f"{k}.ff.b"])
            h_new, rc = relu_forward(y)
            return h_new, (xc, rc)
        return gru_forward(z, h, params, f"{k}.gru.")

    def _core_backward(self, params, k, dh_new, cache, grads):
        if self.ablate == "sedm":
            xc, rc = cache
            dy = relu_backward(dh_new, rc)
            dz, dW, db = dense_backward(dy, xc, params[f"{k}.ff.W"])
            _accumulate(grads, {f"{k}.ff.W": dW, f"{k}.ff.b": db})
            return dz, np.zeros_like(dh_new)
        dz, dh, g = gru_backward(dh_new, cache, params, f"{k}.gru.")
        _accumulate(grads, g)
        return dz, dh

    def act(self, params, lplanes, urge, hidden):
        """One decentralized decision step for all agents.

        lplanes (F, 3, H, W), urge (F, 2), hidden (F, hidden) -> q (F, P), hidden'.
        """
        lf, _ = self.local_features(params, lplanes)
        q = np.empty((self.F, self.P))
        h_out = np.empty_like(hidden)
        for c in self.classes:
            k, idx = CLASS_KEYS[c], self.members[c]
            x = self._agent_input(lf[idx], urge[idx], idx)
            z, _ = relu_forward(x @ params[f"{k}.fc1.W"] + params[f"{k}.fc1.b"])
            h_new, _ = self._core_step(params, k, z, hidden[idx])
            h_out[idx] = h_new
            q[idx] = h_new @ params[f"{k}.fc2.W"] + params[f"{k}.fc2.b"]
        return q, h_out

    def initial_hidden(self, batch=None):
        shape = (self.F, self.hidden) if batch is None else (batch, self.F, self.hidden)
        return np.zeros(shape)

    def unroll(self, params, gplanes, lplanes, urge):
        """Run every episode of a batch from zero hidden states.

        gplanes (B, T, 7, H, W), lplanes (B, T, F, 3, H, W), urge (B, T, F, 2)
        -> dict with sc (B, T, dg), hid (B, T, F, hidden), q (B, T, F, P) and
        the caches needed by :meth:`unroll_backward`.
        """
        B, T = gplanes.shape[:2]
        F, Hd, P = self.F, self.hidden, self.P
        sc, gcache = self.global_features(params, gplanes.reshape((B * T,) + gplanes.shape[2:]))
        lf, lcache = self.local_features(params, lplanes.reshape((B * T * F,) + lplanes.shape[3:]))
        lf = lf.reshape(B, T, F, -1)
        hid = np.empty((B, T, F, Hd))
        q = np.empty((B, T, F, P))
        agents = {}
        for c in self.classes:
            k, idx = CLASS_KEYS[c], self.members[c]
            n = len(idx)
            x = self._agent_input(lf[:, :, idx], urge[:, :, idx], idx)
            x1 = x.reshape(B * T * n, -1)
            z, zc = relu_forward(x1 @ params[f"{k}.fc1.W"] + params[f"{k}.fc1.b"])
            z = z.reshape(B, T, n, Hd)
            h = np.zeros((B * n, Hd))
            steps = []
            for t in range(T):
                h, cache = self._core_step(params, k, z[:, t].reshape(B * n, Hd), h)
                steps.append(cache)
                hid[:, t, idx] = h.reshape(B, n, Hd)
            hk = hid[:, :, idx].reshape(-1, Hd)
            q[:, :, idx] = (hk @ params[f"{k}.fc2.W"] + params[f"{k}.fc2.b"]).reshape(B, T, n, P)
            agents[c] = (x1, zc, steps, hk)
        return {"sc": sc.reshape(B, T, -1), "hid": hid, "q": q,
                "cache": (gcache, lcache, agents, (B, T))}

    def unroll_backward(self, params, out, d_sc, d_hid, d_q):
        """Gradients of a scalar given its partials w.r.t. sc, hid and q."""
        gcache, lcache, agents, (B, T) = out["cache"]
        F, Hd = self.F, self.hidden
        grads = {}
        d_lf = np.zeros((B, T, F, self.dl))
        for c in self.classes:
            k, idx = CLASS_KEYS[c], self.members[c]
            n = len(idx)
            x1, zc, steps, hk = agents[c]
            dqk = d_q[:, :, idx].reshape(-1, self.P)
            dhk, dW2, db2 = dense_backward(dqk, hk, params[f"{k}.fc2.W"])
            _accumulate(grads, {f"{k}.fc2.W": dW2, f"{k}.fc2.b": db2})
            dh_all = (dhk.reshape(B, T, n, Hd) + d_hid[:, :, idx])
            dz = np.empty((B, T, n, Hd))
            dh_carry = np.zeros((B * n, Hd))
            for t in range(T - 1, -1, -1):
                dh_t = dh_all[:, t].reshape(B * n, Hd) + dh_carry
                dzt, dh_carry = self._core_backward(params, k, dh_t, steps[t], grads)
                dz[:, t] = dzt.reshape(B, n, Hd)
            dpre = relu_backward(dz.reshape(-1, Hd), zc)
            dx, dW1, db1 = dense_backward(dpre, x1, params[f"{k}.fc1.W"])
            _accumulate(grads, {f"{k}.fc1.W": dW1, f"{k}.fc1.b": db1})
            d_lf[:, :, idx] = dx[:, :self.dl].reshape(B, T, n, self.dl)
        self.local_features_backward(params, d_lf.reshape(B * T * F, -1), lcache, grads)
        self.global_features_backward(params, d_sc.reshape(B * T, -1), gcache, grads)
        return grads

    # -- mixer heads ---------------------------------------------------------------

    def mix_q(self, params, sc, hid, actions, prefix="mixq."):
        """Q_tot over N rows: sc (N, dg), hid (N, F, hidden), actions (N, F) ints."""
        N = sc.shape[0]
        hflat = hid.reshape(N, -1)
        rows = np.arange(self.F) * self.P + actions
        pre = sc @ params[prefix + "Ws"] + hflat @ params[prefix + "Wh"] + params[prefix + "b1"]
        pre = pre + params[prefix + "Wa"][rows].sum(axis=1)
        a, rc = relu_forward(pre)
        out = (a @ params[prefix + "w2"] + params[prefix + "b2"])[:, 0]
        return out, (sc, hflat, rows, rc, a)

    def mix_q_backward(self, params, dout, cache, grads, prefix="mixq."):
        sc, hflat, rows, rc, a = cache
        d2 = dout[:, None]
        _accumulate(grads, {prefix + "w2": a.T @ d2, prefix + "b2": d2.sum(axis=0)})
        dpre = relu_backward(d2 @ params[prefix + "w2"].T, rc)
        dWa = np.zeros_like(params[prefix + "Wa"])
        np.add.at(dWa, rows.reshape(-1), np.repeat(dpre, self.F, axis=0))
        _accumulate(grads, {prefix + "Ws": sc.T @ dpre, prefix + "Wh": hflat.T @ dpre,
                            prefix + "Wa": dWa, prefix + "b1": dpre.sum(axis=0)})
        d_sc = dpre @ params[prefix + "Ws"].T
        d_h = (dpre @ params[prefix + "Wh"].T).reshape(sc.shape[0], self.F, self.hidden)
        return d_sc, d_h

    def mix_v(self, params, sc, hid, prefix="mixv."):
        N = sc.shape[0]
        hflat = hid.reshape(N, -1)
        pre = sc @ params[prefix + "Ws"] + hflat @ params[prefix + "Wh"] + params[prefix + "b1"]
        a, rc = relu_forward(pre)
        out = (a @ params[prefix + "w2"] + params[prefix + "b2"])[:, 0]
        return out, (sc, hflat, rc, a)

    def mix_v_backward(self, params, dout, cache, grads, prefix="mixv."):
        sc, hflat, rc, a = cache
        d2 = dout[:, None]
        _accumulate(grads, {prefix + "w2": a.T @ d2, prefix + "b2": d2.sum(axis=0)})
        dpre = relu_backward(d2 @ params[prefix + "w2"].T, rc)
        _accumulate(grads, {prefix + "Ws": sc.T @ dpre, prefix + "Wh": hflat.T @ dpre,
                            prefix + "b1": dpre.sum(axis=0)})
        d_sc = dpre @ params[prefix + "Ws"].T
        d_h = (dpre @ params[prefix + "Wh"].T).reshape(sc.shape[0], self.F, self.hidden)
        return d_sc, d_h


def _accumulate(grads, new):
    for name, g in new.items():
        if name in grads:
            grads[name] = grads[name] + g
        else:
            grads[name] = g
