"""Episode replay, schedules and the centralized-training loop.

One ``np.random.Generator`` seeded from ``TrainConfig.seed`` drives parameter
init, exploration and replay sampling, so identical configs give identical
metrics and checkpoints.
"""
import csv
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats

from .encoding import global_planes_batch, local_planes_batch, urge_batch
from .mixing import compute_loss, sync_targets
from .model import HectaNet
from .neuralcore.optim import RMSprop, clip_grad_norm
from .neuralcore.params import check_finite, load_params, save_params
from .policy import LearnedPolicy, epsilon_at, greedy_joint, random_joint
from .scenario import VariationKind, perturb_scenario
from .world import Layout, World, tcr

METRIC_COLUMNS = ["episode", "loss", "l_td", "l_opt", "l_nopt", "return", "tcr", "epsilon", "lr"]


class NumericalAbort(FloatingPointError):
    def __init__(self, message, dump_path=None):
        super().__init__(message if dump_path is None else f"{message} (batch dumped to {dump_path})")
        self.dump_path = dump_path


@dataclass
class TrainConfig:
    episodes: int = 3000
    time_limit: int = None
    gamma: float = 0.7
    lr0: float = 1e-4
    lr_decay_rate: float = 0.9
    lr_decay_interval: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_anneal: float = 0.5
    batch_size: int = 32
    buffer_capacity: int = 5000
    target_sync: int = 200
    lambda_opt: float = 1.0
    lambda_nopt: float = 1.0
    clip: float = 0.2
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 1e-5
    hidden: int = 128
    mixer_hidden: int = 128
    ablate: str = None
    variant: str = "hard"
    v_grad_to_inputs: bool = False
    train_steps_per_episode: int = 1
    store_snapshots: bool = True
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size must be in 1..buffer_capacity")
        if self.variant not in ("hard", "voluntary"):
            raise ValueError("variant must be 'hard' or 'voluntary'")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def lr_at(episode, config):
    if episode < 1:
        raise ValueError("episodes are numbered from 1")
    return config.lr0 * config.lr_decay_rate ** ((episode - 1) // config.lr_decay_interval)


# -- episode storage -----------------------------------------------------------------

@dataclass
class EpisodeRecord:
    """A full episode padded to ``time_limit`` steps.

    Row ``t`` holds the state in which the step-``t`` decision was taken, the
    executed (post-override) joint action and its reward. Padded rows repeat
    the last state with all-admissible masks and ``valid == False``.
    """
    pos: np.ndarray
    power: np.ndarray
    remaining: np.ndarray
    owner: np.ndarray
    masks: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    te: np.ndarray
    length: int
    hidden: np.ndarray = None
    q: np.ndarray = None

    @property
    def valid(self):
        return np.arange(len(self.rewards)) < self.length

    def validate(self):
        T = len(self.rewards)
        if not 1 <= self.length <= T:
            raise ValueError("episode length out of range")
        for name in ("pos", "power", "remaining", "owner", "masks", "actions", "te"):
            if getattr(self, name).shape[0] != T:
                raise ValueError(f"record field {name} does not span {T} steps")
        if self.te[self.length - 1] != 0 or not np.all(self.te[:self.length - 1] == 1):
            raise ValueError("terminal flag must be 0 exactly at the final stored step")
        return self


class EpisodeBuilder:
    def __init__(self, layout, horizon, snapshots=False, hidden=128):
        F, P, K = layout.n_entities, layout.P, layout.n_tasks
        self.T = horizon
        self.pos = np.zeros((horizon, F), dtype=np.int32)
        self.power = np.zeros((horizon, F))
        self.remaining = np.zeros((horizon, K), dtype=np.int32)
        self.owner = np.zeros((horizon, K), dtype=np.int32)
        self.masks = np.ones((horizon, F, P), dtype=bool)
        self.actions = np.zeros((horizon, F), dtype=np.int32)
        self.rewards = np.zeros(horizon)
        self.te = np.zeros(horizon)
        self.hidden = np.zeros((horizon, F, hidden), dtype=np.float32) if snapshots else None
        self.q = np.zeros((horizon, F, P), dtype=np.float32) if snapshots else None
        self.n = 0

    def add(self, state, masks, actions, reward, hidden=None, q=None):
        """``state`` is the pre-step (pos, power, remaining, owner) tuple."""
        t = self.n
        self.pos[t], self.power[t], self.remaining[t], self.owner[t] = state
        self.masks[t] = masks
        self.actions[t] = actions
        self.rewards[t] = reward
        self.te[t] = 1.0
        if self.hidden is not None and hidden is not None:
            self.hidden[t] = hidden
            self.q[t] = q
        self.n += 1

    def finish(self):
        n = self.n
        self.te[n - 1] = 0.0
        for arr in (self.pos, self.power, self.remaining, self.owner):
            arr[n:] = arr[n - 1]
        return EpisodeRecord(self.pos, self.power, self.remaining, self.owner, self.masks,
                             self.actions, self.rewards, self.te, n, self.hidden, self.q).validate()


class ReplayBuffer:
    """Ring of at most ``capacity`` episodes; the oldest is overwritten."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.slots = []
        self.cursor = 0

    def __len__(self):
        return len(self.slots)

    def push(self, record):
        if not isinstance(record, EpisodeRecord):
            raise TypeError("only EpisodeRecord objects can be stored")
        record.validate()
        if len(self.slots) < self.capacity:
            self.slots.append(record)
        else:
            self.slots[self.cursor] = record
        self.cursor = (self.cursor + 1) % self.capacity
        return self

    def sample(self, batch_size, rng):
        if len(self.slots) < batch_size:
            raise ValueError(f"buffer holds {len(self.slots)} episodes, need {batch_size}")
        idx = rng.choice(len(self.slots), size=batch_size, replace=False)
        return [self.slots[i] for i in idx]


def push_episode(buffer, record):
    return buffer.push(record)


def sample_batch(buffer, batch_size, rng):
    return buffer.sample(batch_size, rng)


def build_batch(layout, records):
    """Stack records into the array batch consumed by ``compute_loss``."""
    B, T = len(records), len(records[0].rewards)
    F, K = layout.n_entities, layout.n_tasks
    stack = lambda name: np.stack([getattr(r, name) for r in records])
    pos, power = stack("pos"), stack("power")
    remaining, owner, masks = stack("remaining"), stack("owner"), stack("masks")
    g = global_planes_batch(layout, pos.reshape(B * T, F), remaining.reshape(B * T, K),
                            owner.reshape(B * T, K))
    l = local_planes_batch(layout, pos.reshape(B * T, F), power.reshape(B * T, F),
                           masks.reshape(B * T, F, -1))
    return {
        "gplanes": g.reshape((B, T) + g.shape[1:]),
        "lplanes": l.reshape((B, T) + l.shape[1:]),
        "urge": urge_batch(layout, power),
        "actions": stack("actions").astype(np.int64),
        "masks": masks,
        "rewards": stack("rewards"),
        "te": stack("te"),
        "valid": np.stack([r.valid for r in records]),
    }


# -- rollouts --------------------------------------------------------------------------

def _rollout_record(world, policy, rng, builder, trace=None):
    total = 0.0
    while not world.done:
        masks = world.range_masks()
        state = (world.pos.copy(), world.power.copy(), world.remaining.copy(), world.owner.copy())
        hidden = getattr(policy, "hidden", None)
        hidden = None if hidden is None else hidden.copy()
        step_t = world.t
        out = world.step(policy(world, rng))
        total += out.reward
        builder.add(state, masks, world.last_executed, out.reward,
                    hidden, getattr(policy, "last_q", None))
        if trace is not None:
            trace(world, step_t, out)
    return total, tcr(world)


# -- training ------------------------------------------------------------------------------

def _resolve_source(scenario_source):
    if isinstance(scenario_source, (list, tuple)):
        specs = list(scenario_source)
    else:
        specs = [scenario_source]
    if not specs:
        raise ValueError("no scenarios to train on")
    first = specs[0]
    for s in specs[1:]:
        if (s.grid_height, s.grid_width) != (first.grid_height, first.grid_width) or \
                [e.entity_class for e in s.entities] != [e.entity_class for e in first.entities]:
            raise ValueError("all training scenarios must share grid size and entity roster")
    return specs


def build_net(layout, config):
    return HectaNet.for_layout(layout, hidden=config.hidden, mixer_hidden=config.mixer_hidden,
                               ablate=config.ablate, v_grad_to_inputs=config.v_grad_to_inputs)


@dataclass
class TrainResult:
    net: HectaNet
    params: dict
    targets: dict
    metrics: list
    buffer: ReplayBuffer = None
    checkpoints: list = field(default_factory=list)


def run_training(scenario_source, config, checkpoint_dir=None, dump_dir=None, progress=None):
    specs = _resolve_source(scenario_source)
    if config.time_limit is not None:
        specs = [s.with_time_limit(config.time_limit) for s in specs]
    layouts = [Layout(s) for s in specs]
    rng = np.random.default_rng(config.seed)
    net = build_net(layouts[0], config)
    params = net.init(rng)
    targets = sync_targets(params)
    opt = RMSprop(config.rmsprop_alpha, config.rmsprop_eps)
    buffer = ReplayBuffer(config.buffer_capacity)
    policy = LearnedPolicy(net, params)
    metrics = []
    checkpoints = []
    hard = config.variant == "hard"

    for ep in range(1, config.episodes + 1):
        i = (ep - 1) % len(specs)
        spec, layout = specs[i], layouts[i]
        eps = epsilon_at(ep, config.episodes, config.eps_start, config.eps_end, config.eps_anneal)
        lr = lr_at(ep, config)
        world = World(spec, layout, hard_coop=hard)
        policy.epsilon = eps
        policy.reset()
        builder = EpisodeBuilder(layout, spec.time_limit, config.store_snapshots, net.hidden)
        ret, rate = _rollout_record(world, policy, rng, builder)
        buffer.push(builder.finish())

        parts = {"loss": math.nan, "l_td": math.nan, "l_opt": math.nan, "l_nopt": math.nan}
        if len(buffer) >= config.batch_size:
            acc = {k: 0.0 for k in parts}
            for _ in range(config.train_steps_per_episode):
                records = buffer.sample(config.batch_size, rng)
                batch = build_batch(layout, records)
                loss, grads, info = compute_loss(batch, net, params, targets, config.gamma,
                                                 config.lambda_opt, config.lambda_nopt)
                if not np.isfinite(loss):
                    raise NumericalAbort(f"non-finite loss at episode {ep}",
                                         _dump(dump_dir, ep, batch))
                clip_grad_norm(grads, config.clip)
                if not opt.step(params, grads, lr):
                    raise NumericalAbort(f"non-finite gradient at episode {ep}",
                                         _dump(dump_dir, ep, batch))
                try:
                    check_finite(params)
                except FloatingPointError as exc:
                    raise NumericalAbort(f"{exc} at episode {ep}", _dump(dump_dir, ep, batch)) from None
                for k in acc:
                    acc[k] += info[k] / config.train_steps_per_episode
            parts = acc
        if ep % config.target_sync == 0:
            sync_targets(params, targets)
        metrics.append({"episode": ep, **parts, "return": ret, "tcr": rate,
                        "epsilon": eps, "lr": lr})
        if checkpoint_dir and config.checkpoint_every and ep % config.checkpoint_every == 0:
            path = os.path.join(checkpoint_dir, f"checkpoint_{ep:06d}.prm")
            save_checkpoint(path, net, params, config, ep)
            checkpoints.append(path)
        if progress is not None:
            progress(metrics[-1])
    return TrainResult(net, params, targets, metrics, buffer, checkpoints)


def _dump(dump_dir, episode, batch):
    if not dump_dir:
        return None
    os.makedirs(dump_dir, exist_ok=True)
    path = os.path.join(dump_dir, f"bad_batch_{episode:06d}.npz")
    np.savez(path, **batch)
    return path


def save_checkpoint(path, net, params, config=None, episode=None):
    meta = {"net": net.config()}
    if config is not None:
        meta["train"] = asdict(config)
    if episode is not None:
        meta["episode"] = episode
    save_params(path, params, meta)


def load_checkpoint(path):
    params, meta = load_params(path)
    return HectaNet.from_config(meta["net"]), params, meta


def write_metrics_csv(path, metrics):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in metrics:
            w.writerow([row["episode"]] + [repr(float(row[c])) for c in METRIC_COLUMNS[1:]])


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != set(METRIC_COLUMNS):
        raise ValueError(f"{path}: not a metrics file")
    return [{k: (int(v) if k == "episode" else float(v)) for k, v in r.items()} for r in rows]


def moving_average(values, window):
    v = np.asarray(values, dtype=float)
    out = np.full(len(v), np.nan)
    for i in range(window - 1, len(v)):
        out[i] = np.nanmean(v[i - window + 1:i + 1])
    return out


# -- evaluation ------------------------------------------------------------------------------

def summarize(values):
    v = np.asarray(values, dtype=float)
    n = len(v)
    mean = float(v.mean()) if n else math.nan
    std = float(v.std(ddof=1)) if n > 1 else 0.0
    ci = float(stats.t.ppf(0.975, n - 1) * std / math.sqrt(n)) if n > 1 else math.nan
    return {"mean": mean, "std": std, "ci95": ci, "n": n, "values": v.tolist()}


def make_policy(policy, epsilon=0.0):
    """``policy`` is "greedy", "random" or a ``(net, params)`` pair."""
    if policy == "greedy":
        return greedy_joint
    if policy == "random":
        return random_joint
    net, params = policy
    return LearnedPolicy(net, params, epsilon)


def evaluate_policy(policy, scenario, n_seeds=10, mode="greedy-exec", seed=0,
                    epsilon=0.05, time_limit=None, hard_coop=True):
    """Final-TCR statistics over ``n_seeds`` independently seeded rollouts.

    ``mode`` is ``greedy-exec`` (no exploration) or ``stochastic`` (learned
    policies keep ``epsilon``-greedy exploration).
    """
    if mode not in ("greedy-exec", "stochastic"):
        raise ValueError("mode must be 'greedy-exec' or 'stochastic'")
    if time_limit is not None:
        scenario = scenario.with_time_limit(time_limit)
    act = make_policy(policy, epsilon if mode == "stochastic" else 0.0)
    layout = Layout(scenario)
    values = []
    for child in np.random.SeedSequence(seed).spawn(n_seeds):
        rng = np.random.default_rng(child)
        world = World(scenario, layout, hard_coop=hard_coop)
        if hasattr(act, "reset"):
            act.reset()
        _, rate = run_episode_plain(world, act, rng)
        values.append(rate)
    return summarize(values)


def run_episode_plain(world, policy, rng, trace=None):
    total = 0.0
    while not world.done:
        step_t = world.t
        out = world.step(policy(world, rng))
        total += out.reward
        if trace is not None:
            trace(world, step_t, out)
    return total, tcr(world)


def robustness_sweep(policy, base_scenario, kinds=tuple(VariationKind), n_variants=50, seed=0,
                     mode="greedy-exec", hard_coop=True):
    """Mean TCR per variation kind over ``n_variants`` perturbed scenarios."""
    table = {}
    if n_variants <= 0:
        return table
    for kind in kinds:
        kind = VariationKind(kind)
        seeds = np.random.SeedSequence([seed, list(VariationKind).index(kind)]).generate_state(n_variants)
        rates = []
        for j, s in enumerate(seeds):
            spec = perturb_scenario(base_scenario, kind, int(s))
            rates.append(evaluate_policy(policy, spec, 1, mode, seed=int(s), hard_coop=hard_coop)["mean"])
        table[kind.value] = summarize(rates)
    return table
