"""Action selection: filtered epsilon-greedy over learned values, and the
non-learned baselines (nearest-task greedy, uniform random)."""
import numpy as np

from .encoding import local_planes_batch, urge_batch


def epsilon_at(episode, total_episodes, start=1.0, end=0.05, anneal_fraction=0.5):
    """Linear decay from ``start`` to ``end`` over the first ``anneal_fraction``
    of training, constant afterwards. ``episode`` is 1-based."""
    n = max(1, int(anneal_fraction * total_episodes))
    frac = min((episode - 1) / n, 1.0)
    return start + (end - start) * frac


def q_values(net, params, lplanes, urge, hidden):
    """Per-agent action values and next hidden states.

    lplanes (F, 3, H, W), urge (F, 2), hidden (F, hidden) -> (q (F, P), hidden').
    """
    lplanes = np.asarray(lplanes, dtype=float)
    if lplanes.shape != (net.F, 3, net.H, net.W):
        raise ValueError(f"expected local planes of shape {(net.F, 3, net.H, net.W)}, got {lplanes.shape}")
    if np.shape(hidden) != (net.F, net.hidden):
        raise ValueError(f"expected hidden of shape {(net.F, net.hidden)}, got {np.shape(hidden)}")
    return net.act(params, lplanes, np.asarray(urge, dtype=float), hidden)


def select_action_filtered(q, range_mask, epsilon, rng):
    """Epsilon-greedy restricted to the movable range.

    With probability ``epsilon`` a uniformly random admissible cell, otherwise
    the admissible argmax (first index on ties). Masked-out cells are never
    returned.
    """
    mask = np.asarray(range_mask, dtype=bool)
    allowed = np.flatnonzero(mask)
    if allowed.size == 0:
        raise ValueError("empty movable range")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if allowed.size == 1:
        return int(allowed[0])
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(allowed[rng.integers(allowed.size)])
    return int(allowed[np.argmax(np.asarray(q)[allowed])])


def greedy_policy(world, entity_id):
    """Nearest-task greedy: the admissible cell closest to the nearest
    incomplete task of the entity's class; stay when none is left."""
    L = world.layout
    k = world._check_entity(entity_id)
    here = int(world.pos[k])
    live = (world.remaining > 0) & (L.task_class == L.entity_class[k])
    if not np.any(live):
        return here
    tcells = L.task_cell[live]
    if here in set(tcells.tolist()):
        return here
    cand = np.flatnonzero(world.range_mask(k))
    dr = L.rows[cand][:, None] - L.rows[tcells][None, :]
    dc = L.cols[cand][:, None] - L.cols[tcells][None, :]
    d = np.sqrt(dr * dr + dc * dc).min(axis=1)
    return int(cand[np.argmin(d)])


def greedy_joint(world, rng=None):
    return [greedy_policy(world, k) for k in range(world.n_entities)]


def random_joint(world, rng):
    """Uniformly random admissible target for every entity."""
    return [select_action_filtered(np.zeros(world.layout.P), world.range_mask(k), 1.0, rng)
            for k in range(world.n_entities)]


def voluntary_override_policy(world, proposed_actions):
    """The voluntary variant keeps the proposed joint action; the rescue
    override is disabled on the world itself (``World(hard_coop=False)``)."""
    return list(proposed_actions)


class LearnedPolicy:
    """Decentralized execution of the agent nets with recurrent state."""

    def __init__(self, net, params, epsilon=0.0):
        self.net = net
        self.params = params
        self.epsilon = epsilon
        self.reset()

    def reset(self):
        self.hidden = self.net.initial_hidden()
        self.last_q = None

    def observe(self, world):
        L = world.layout
        masks = world.range_masks()
        lplanes = local_planes_batch(L, world.pos[None], world.power[None], masks[None])[0]
        urge = urge_batch(L, world.power[None])[0]
        return lplanes, urge, masks

    def __call__(self, world, rng):
        lplanes, urge, masks = self.observe(world)
        q, self.hidden = q_values(self.net, self.params, lplanes, urge, self.hidden)
        self.last_q = q
        return [select_action_filtered(q[k], masks[k], self.epsilon, rng) for k in range(len(q))]


def make_baseline(name):
    if name == "greedy":
        return greedy_joint
    if name == "random":
        return random_joint
    raise KeyError(f"unknown baseline {name!r}")
