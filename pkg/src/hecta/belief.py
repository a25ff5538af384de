"""Exact belief filtering on small explicit POMDPs.

A :class:`TinyModel` has ``n`` states, ``T[a, s, s']`` transition and
``O[a, s', o]`` observation tables. The recursive filter

    b'(s') ∝ O[a, s', o] * sum_s T[a, s, s'] b(s)

is checked against brute-force enumeration of every state sequence
consistent with an action-observation history.
"""
import itertools
from dataclasses import dataclass

import numpy as np

ROW_TOL = 1e-12
MAX_TERMS = 10 ** 6


class InconsistentObservation(ValueError):
    pass


@dataclass
class TinyModel:
    T: np.ndarray
    O: np.ndarray
    states: tuple = None

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=float)
        self.O = np.asarray(self.O, dtype=float)
        if self.T.ndim == 2:
            self.T = self.T[None]
        if self.O.ndim == 2:
            self.O = self.O[None]
        A, n, n2 = self.T.shape
        if n != n2:
            raise ValueError("transition tables must be square")
        if self.O.shape[:2] != (A, n) and self.O.shape[:2] != (1, n):
            raise ValueError("observation table must be (actions, states, observations)")
        if self.O.shape[0] == 1 and A > 1:
            self.O = np.repeat(self.O, A, axis=0)
        for name, tab in (("transition", self.T), ("observation", self.O)):
            if np.any(tab < 0) or np.any(np.abs(tab.sum(axis=-1) - 1.0) > ROW_TOL):
                raise ValueError(f"{name} rows must be probability vectors")
        if self.states is None:
            self.states = tuple(f"s{i}" for i in range(n))
        if len(self.states) != n:
            raise ValueError("state list length does not match tables")

    @property
    def n_states(self):
        return self.T.shape[1]

    @property
    def n_actions(self):
        return self.T.shape[0]

    @property
    def n_obs(self):
        return self.O.shape[2]


def _check_belief(b, n):
    b = np.asarray(b, dtype=float)
    if b.shape != (n,) or np.any(b < 0) or abs(b.sum() - 1.0) > ROW_TOL:
        raise ValueError("belief must be a probability vector over the model's states")
    return b


def belief_update(b, a, o, model):
    b = _check_belief(b, model.n_states)
    pred = b @ model.T[a]
    unnorm = model.O[a, :, o] * pred
    z = unnorm.sum()
    if not z > 0:
        raise InconsistentObservation(f"observation {o} has zero probability after action {a}")
    return unnorm / z


def filter_history(history, model, b0):
    b = _check_belief(b0, model.n_states)
    for a, o in history:
        b = belief_update(b, a, o, model)
    return b


def brute_force_posterior(history, model, b0):
    """P(s_t | history) by summing over all state sequences s_0..s_t."""
    b0 = _check_belief(b0, model.n_states)
    n, L = model.n_states, len(history)
    if n ** (L + 1) > MAX_TERMS:
        raise ValueError(f"enumeration of {n}^{L + 1} sequences exceeds the {MAX_TERMS} guard")
    if L == 0:
        return b0.copy()
    post = np.zeros(n)
    for seq in itertools.product(range(n), repeat=L + 1):
        p = b0[seq[0]]
        for t, (a, o) in enumerate(history):
            p *= model.T[a, seq[t], seq[t + 1]] * model.O[a, seq[t + 1], o]
            if p == 0.0:
                break
        post[seq[-1]] += p
    z = post.sum()
    if not z > 0:
        raise InconsistentObservation("history has zero probability under the model")
    return post / z


def random_model(rng, n_states, n_actions, n_obs, sparsity=0.0):
    """Random tiny model; ``sparsity`` zeroes that fraction of entries (rows
    keep at least one non-zero)."""
    def stochastic(shape):
        x = rng.random(shape)
        if sparsity:
            x = np.where(rng.random(shape) < sparsity, 0.0, x)
            dead = x.sum(axis=-1) == 0
            x[dead, 0] = 1.0
        return x / x.sum(axis=-1, keepdims=True)
    return TinyModel(stochastic((n_actions, n_states, n_states)),
                     stochastic((n_actions, n_states, n_obs)))


def sample_history(rng, model, b0, length):
    """Draw an action-observation history by simulating the model."""
    s = rng.choice(model.n_states, p=b0)
    hist = []
    for _ in range(length):
        a = int(rng.integers(model.n_actions))
        s = rng.choice(model.n_states, p=model.T[a, s])
        o = int(rng.choice(model.n_obs, p=model.O[a, s]))
        hist.append((a, o))
    return hist


# -- text format -------------------------------------------------------------------
#
#   states s0 s1 ...
#   actions A
#   observations K
#   T <a>            followed by n rows of n numbers
#   O <a>            followed by n rows of K numbers

def dumps_model(model):
    lines = ["states " + " ".join(model.states), f"actions {model.n_actions}",
             f"observations {model.n_obs}"]
    for tag, tab in (("T", model.T), ("O", model.O)):
        for a in range(model.n_actions):
            lines.append(f"{tag} {a}")
            lines.extend(" ".join(repr(float(v)) for v in row) for row in tab[a])
    return "\n".join(lines) + "\n"


def loads_model(text):
    lines = [l.split("#", 1)[0].strip() for l in text.splitlines()]
    lines = [l for l in lines if l]
    try:
        states = tuple(lines[0].split()[1:])
        A = int(lines[1].split()[1])
        K = int(lines[2].split()[1])
    except (IndexError, ValueError):
        raise ValueError("tiny model header must give states, actions and observations") from None
    n = len(states)
    T = np.zeros((A, n, n))
    O = np.zeros((A, n, K))
    i = 3
    while i < len(lines):
        tag, a = lines[i].split()
        tab = {"T": T, "O": O}[tag]
        for r in range(n):
            tab[int(a), r] = [float(v) for v in lines[i + 1 + r].split()]
        i += 1 + n
    return TinyModel(T, O, states)
