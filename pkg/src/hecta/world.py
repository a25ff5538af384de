"""Episode simulation: movement ranges, battery protocol, task progress, reward.

Cells are addressed by flat row-major index ``r * W + c`` internally; the
public helpers accept ``(row, col)`` pairs too.
"""
import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .scenario import CLASS_ORDER

PENALTY = -10.0
NO_OWNER = -1
POWER_DECIMALS = 12


class Layout:
    """Static, per-scenario arrays shared by every world built from it."""

    def __init__(self, spec):
        self.spec = spec
        H, W = spec.grid_height, spec.grid_width
        self.H, self.W, self.P = H, W, H * W
        self.obstacle = np.zeros(self.P, dtype=bool)
        for r, c in spec.obstacles:
            self.obstacle[r * W + c] = True
        self.n_tasks = len(spec.tasks)
        self.n_entities = len(spec.entities)
        self.task_cell = np.array([r * W + c for r, c in (t.location for t in spec.tasks)], dtype=np.int64)
        self.task_class = np.array([CLASS_ORDER.index(t.entity_class) for t in spec.tasks], dtype=np.int64)
        self.duration = np.array([t.duration for t in spec.tasks], dtype=np.int64)
        self.task_at = np.full(self.P, -1, dtype=np.int64)
        self.task_at[self.task_cell] = np.arange(self.n_tasks)
        self.entity_class = np.array([CLASS_ORDER.index(e.entity_class) for e in spec.entities], dtype=np.int64)
        self.is_uav = self.entity_class == 0
        self.is_ugv = self.entity_class == 2
        self.move_radius = np.array([e.move_radius for e in spec.entities], dtype=float)
        self.consumption = np.array([e.power_consumption for e in spec.entities], dtype=float)
        self.detect_radius = np.array([e.detect_radius for e in spec.entities], dtype=float)
        self.start = np.array([r * W + c for r, c in (e.start for e in spec.entities)], dtype=np.int64)
        rows, cols = np.divmod(np.arange(self.P), W)
        self.rows, self.cols = rows, cols
        self._range_cache = {}

    def dist(self, a, b):
        ra, ca = divmod(int(a), self.W)
        rb, cb = divmod(int(b), self.W)
        return float(np.hypot(ra - rb, ca - cb))

    def range_mask(self, k, cell):
        """Cells within entity ``k``'s move radius of ``cell`` (unstranded)."""
        key = (k, int(cell))
        mask = self._range_cache.get(key)
        if mask is None:
            r, c = divmod(int(cell), self.W)
            rad = self.move_radius[k]
            d2 = (self.rows - r) ** 2 + (self.cols - c) ** 2
            mask = (d2 <= rad * rad + 1e-9) & ~self.obstacle
            mask.setflags(write=False)
            self._range_cache[key] = mask
        return mask


@dataclass
class StepOutcome:
    reward: float
    completed_this_step: int
    invalid_action: bool
    done: bool


class World:
    """Mutable episode state over a shared :class:`Layout`.

    ``t`` is the sensing period about to be executed (1-based); after the
    final step ``done`` is set and ``t`` stays at the last executed period.
    """

    def __init__(self, spec, layout=None, hard_coop=True):
        self.layout = layout if layout is not None else Layout(spec)
        self.spec = spec
        self.hard_coop = hard_coop
        self.reset()

    def reset(self):
        L = self.layout
        self.t = 1
        self.pos = L.start.copy()
        self.power = np.where(L.is_uav, 1.0, 0.0)
        self.remaining = L.duration.copy()
        self.owner = np.full(L.n_tasks, NO_OWNER, dtype=np.int64)
        self.completed = 0
        self.done = False
        self.last_overrides = {}
        self.last_executed = self.pos.copy()
        self.last_acting = np.full(L.n_entities, -1, dtype=np.int64)
        return self

    # -- queries ---------------------------------------------------------------

    @property
    def n_entities(self):
        return self.layout.n_entities

    @property
    def n_tasks(self):
        return self.layout.n_tasks

    @property
    def stranded(self):
        L = self.layout
        return L.is_uav & (self.power < L.consumption)

    def _check_entity(self, k):
        if not (isinstance(k, (int, np.integer)) and 0 <= k < self.n_entities):
            raise KeyError(f"unknown entity id {k!r}")
        return int(k)

    def range_mask(self, k):
        k = self._check_entity(k)
        L = self.layout
        if L.is_uav[k] and self.power[k] < L.consumption[k]:
            mask = np.zeros(L.P, dtype=bool)
            mask[self.pos[k]] = True
            return mask
        return L.range_mask(k, self.pos[k])

    def range_masks(self):
        return np.stack([self.range_mask(k) for k in range(self.n_entities)])

    def position(self, k):
        return divmod(int(self.pos[self._check_entity(k)]), self.layout.W)

    def incomplete(self):
        return self.remaining > 0

    def snapshot(self):
        return {"t": self.t, "pos": self.pos.copy(), "power": self.power.copy(),
                "remaining": self.remaining.copy(), "owner": self.owner.copy(),
                "completed": self.completed, "done": self.done}

    def restore(self, snap):
        self.t = snap["t"]
        self.pos = snap["pos"].copy()
        self.power = snap["power"].copy()
        self.remaining = snap["remaining"].copy()
        self.owner = snap["owner"].copy()
        self.completed = snap["completed"]
        self.done = snap["done"]
        return self

    # -- dynamics ----------------------------------------------------------------

    def _coerce_action(self, joint_action):
        L = self.layout
        if isinstance(joint_action, dict):
            raise ValueError("joint action must be a sequence with one target per entity")
        acts = list(joint_action)
        if len(acts) != L.n_entities:
            raise ValueError(f"joint action has {len(acts)} targets for {L.n_entities} entities")
        out = np.empty(L.n_entities, dtype=np.int64)
        for k, a in enumerate(acts):
            if isinstance(a, (tuple, list)) and len(a) == 2:
                r, c = int(a[0]), int(a[1])
                if not (0 <= r < L.H and 0 <= c < L.W):
                    raise ValueError(f"target {a} of entity {k} is outside the grid")
                out[k] = r * L.W + c
            elif isinstance(a, (int, np.integer)) and 0 <= a < L.P:
                out[k] = int(a)
            else:
                raise ValueError(f"malformed target {a!r} for entity {k}")
        return out

    def step(self, joint_action):
        if self.done:
            raise RuntimeError("episode already finished")
        targets = self._coerce_action(joint_action)
        L = self.layout
        overrides = hard_coop_overrides(self) if self.hard_coop else {}
        for k, cell in overrides.items():
            targets[k] = cell

        invalid = False
        new_pos = self.pos.copy()
        for k in range(L.n_entities):
            if k in overrides:
                new_pos[k] = targets[k]
            elif self.range_mask(k)[targets[k]]:
                new_pos[k] = targets[k]
            else:
                invalid = True
        moved = new_pos != self.pos

        # battery: swap on colocation, else pay for moving
        ugv_cells = set(new_pos[L.is_ugv].tolist())
        for k in np.flatnonzero(L.is_uav):
            if new_pos[k] in ugv_cells:
                self.power[k] = 1.0
            elif moved[k]:
                self.power[k] = round(max(self.power[k] - L.consumption[k], 0.0), POWER_DECIMALS)
        self.pos = new_pos
        self.last_executed = new_pos.copy()
        self.last_overrides = dict(overrides)

        completed = self._progress_tasks(busy=set(overrides))
        self.completed += completed
        reward = PENALTY if invalid else float(completed)
        self.done = self.t >= self.spec.time_limit or self.completed == L.n_tasks
        if not self.done:
            self.t += 1
        return StepOutcome(reward, completed, invalid, self.done)

    def _progress_tasks(self, busy):
        L = self.layout
        acting = np.full(L.n_entities, -1, dtype=np.int64)
        # lowest id first: the first matching entity on a cell is the candidate
        present = {}
        for k in range(L.n_entities):
            if k in busy:
                continue
            present.setdefault((int(self.pos[k]), int(L.entity_class[k])), k)
        done_now = 0
        for j in range(L.n_tasks):
            if self.remaining[j] == 0:
                continue
            key = (int(L.task_cell[j]), int(L.task_class[j]))
            own = self.owner[j]
            if own != NO_OWNER and not (own not in busy and self.pos[own] == L.task_cell[j]):
                self.remaining[j] = L.duration[j]
                self.owner[j] = own = NO_OWNER
            if own == NO_OWNER:
                own = present.get(key, NO_OWNER)
                if own == NO_OWNER:
                    continue
                self.owner[j] = own
            self.remaining[j] -= 1
            acting[own] = j
            if self.remaining[j] == 0:
                self.owner[j] = NO_OWNER
                done_now += 1
        self.last_acting = acting
        return done_now


def movable_range(world, entity_id):
    """Set of ``(row, col)`` cells entity ``entity_id`` may target."""
    mask = world.range_mask(entity_id)
    W = world.layout.W
    return {divmod(int(i), W) for i in np.flatnonzero(mask)}


def hard_coop_overrides(world):
    """Map UGV id -> cell of the stranded UAV it must rescue this step.

    Stranded UAVs sharing a cell need one UGV between them. Cells are matched
    to UGVs whose detect radius covers them so that as many cells as possible
    are served, then by least total travel; a single stranded UAV therefore
    gets the nearest covering UGV (ties: lowest id).
    """
    L = world.layout
    cells = sorted({int(world.pos[k]) for k in np.flatnonzero(world.stranded)})
    ugvs = np.flatnonzero(L.is_ugv)
    if not cells or ugvs.size == 0:
        return {}
    d = np.array([[L.dist(c, world.pos[g]) for g in ugvs] for c in cells])
    ok = d <= L.detect_radius[ugvs][None, :] + 1e-9
    if not ok.any():
        return {}
    # unreachable pairs cost more than any full set of reachable ones, so the
    # optimum has maximum cardinality; the id term breaks distance ties
    big = 1.0 + d[ok].sum() * 2 + ugvs.size
    cost = np.where(ok, d + 1e-9 * np.arange(ugvs.size)[None, :], big)
    rows, cols = linear_sum_assignment(cost)
    return {int(ugvs[g]): cells[c] for c, g in zip(rows, cols) if ok[c, g]}


def tcr(world):
    n0 = world.layout.n_tasks
    if n0 == 0:
        raise ValueError("task completion rate undefined without tasks")
    return (n0 - int(np.count_nonzero(world.remaining))) / n0


def positive_reward_probability(world):
    P = world.layout.P
    p = 1.0
    for k in range(world.n_entities):
        p *= int(np.count_nonzero(world.range_mask(k))) / P
    return p


TRAJECTORY_COLUMNS = ["step", "entity_id", "class", "row", "col", "power",
                      "acting_task_id", "reward", "completed_cumulative"]


def trajectory_rows(world, step, reward):
    """Rows describing ``world`` right after executing period ``step``."""
    L = world.layout
    rows = []
    for k in range(L.n_entities):
        r, c = divmod(int(world.pos[k]), L.W)
        task = int(world.last_acting[k])
        rows.append([step, k, CLASS_ORDER[L.entity_class[k]].value, r, c,
                     repr(float(world.power[k])) if L.is_uav[k] else "",
                     task if task >= 0 else "", repr(float(reward)), world.completed])
    return rows


def initial_rows(world):
    L = world.layout
    return [[0, k, CLASS_ORDER[L.entity_class[k]].value, *divmod(int(world.pos[k]), L.W),
             repr(float(world.power[k])) if L.is_uav[k] else "", "", "", 0]
            for k in range(L.n_entities)]


def write_trajectory_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        w.writerows(rows)
