"""Scenario specifications: types, generation, perturbation and file I/O.

A scenario fixes everything about one episode world: the grid, obstacle
cells, the task list and the sensing entities with their capabilities.
Coordinates are ``(row, col)`` pairs, origin top-left.
"""
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources

import numpy as np

SCENARIO_VERSION = 1


class PlacementInfeasible(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class EntityClass(str, Enum):
    UAV = "Uav"
    WORKER = "Worker"
    UGV = "Ugv"


class TaskType(str, Enum):
    AERIAL = "Aerial"
    DETAILED = "Detailed"
    GROUND = "Ground"


# Canonical class order, matching the UAV/human/UGV order of the scenario tables.
CLASS_ORDER = (EntityClass.UAV, EntityClass.WORKER, EntityClass.UGV)
TASK_TYPE_ORDER = (TaskType.AERIAL, TaskType.DETAILED, TaskType.GROUND)
TASK_CLASS = {
    TaskType.AERIAL: EntityClass.UAV,
    TaskType.DETAILED: EntityClass.WORKER,
    TaskType.GROUND: EntityClass.UGV,
}
CLASS_TASK = {v: k for k, v in TASK_CLASS.items()}


class VariationKind(str, Enum):
    TASK_EXECUTION_TIME = "TaskExecutionTime"
    TASK_TYPE = "TaskType"
    OBSTACLE_POSITION = "ObstaclePosition"
    ENTITY_POSITION = "EntityPosition"


@dataclass(frozen=True)
class TaskSpec:
    location: tuple
    task_type: TaskType
    duration: int

    @property
    def entity_class(self):
        return TASK_CLASS[self.task_type]


@dataclass(frozen=True)
class EntitySpec:
    entity_class: EntityClass
    start: tuple
    move_radius: float
    power_consumption: float = 0.0
    detect_radius: float = 0.0


@dataclass(frozen=True)
class ScenarioSpec:
    grid_width: int
    grid_height: int
    time_limit: int
    obstacles: frozenset
    tasks: tuple
    entities: tuple
    seed: int = 0

    @property
    def n_cells(self):
        return self.grid_width * self.grid_height

    @property
    def shape(self):
        return self.grid_height, self.grid_width

    @property
    def has_unreachable_tasks(self):
        present = {e.entity_class for e in self.entities}
        return any(t.entity_class not in present for t in self.tasks)

    def with_time_limit(self, time_limit):
        return replace(self, time_limit=int(time_limit))

    def cell_index(self, cell):
        return cell[0] * self.grid_width + cell[1]

    def cell_of(self, index):
        return divmod(int(index), self.grid_width)


@dataclass(frozen=True)
class DistributionKind:
    """Placement distribution for entity starts or task locations.

    ``single``: every item on one random cell; ``uniform``: distinct uniformly
    random cells; ``checkin``: distinct cells drawn around ``cluster_count``
    Gaussian hotspots of standard deviation ``spread`` (default grid/8).
    """
    kind: str = "uniform"
    cluster_count: int = 5
    spread: float = None

    def __post_init__(self):
        if self.kind not in ("single", "uniform", "checkin"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "checkin":
            if self.cluster_count < 1:
                raise ValueError("check-in distribution needs at least one cluster")
            if self.spread is not None and not self.spread > 0:
                raise ValueError("check-in spread must be positive")


SINGLE_POINT = DistributionKind("single")
UNIFORM_RANDOM = DistributionKind("uniform")


def clustered_checkin(cluster_count=5, spread=None):
    return DistributionKind("checkin", cluster_count, spread)


@dataclass(frozen=True)
class GenerationParams:
    """Knobs of the scenario generator.

    Per-class values (radii, counts) are ordered UAV, worker, UGV. Any
    capability may be a number or a ``(lo, hi)`` interval; intervals are
    sampled per entity and frozen into the spec. ``duration_counts`` maps an
    execution time to how many tasks take it and must sum to the task count.
    """
    grid_width: int = 16
    grid_height: int = 16
    time_limit: int = 9
    entity_counts: tuple = (6, 15, 3)
    ratio_mode: bool = False
    total_entities: int = 24
    task_type_counts: tuple = (30, 75, 15)
    duration_counts: tuple = ((1, 96), (2, 24))
    obstacle_density: object = (0.075, 0.225)
    obstacle_count: int = None
    move_radius: tuple = (8.0, 3.0, 5.0)
    power_consumption: object = 0.3
    detect_radius: object = 10.0
    entity_distribution: DistributionKind = UNIFORM_RANDOM
    task_distribution: DistributionKind = UNIFORM_RANDOM

    @property
    def n_tasks(self):
        return int(sum(self.task_type_counts))

    def resolved_entity_counts(self):
        if self.ratio_mode:
            return split_by_ratio(self.total_entities, (2, 5, 1))
        return tuple(int(c) for c in self.entity_counts)


def split_by_ratio(total, weights):
    """Largest-remainder split of an integer total by weights."""
    w = np.asarray(weights, dtype=float)
    raw = total * w / w.sum()
    base = np.floor(raw).astype(int)
    rest = total - base.sum()
    order = sorted(range(len(w)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return tuple(int(b) for b in base)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def _draw(value, rng, ndigits=2):
    if isinstance(value, (tuple, list)):
        lo, hi = value
        return round(float(rng.uniform(lo, hi)), ndigits)
    return float(value)


def _check_params(params):
    if params.grid_width < 1 or params.grid_height < 1:
        raise ValueError("grid dimensions must be positive")
    if params.time_limit < 1:
        raise ValueError("time_limit must be at least 1")
    if params.n_tasks <= 0:
        raise ValueError("at least one task is required")
    counts = params.resolved_entity_counts()
    if any(c < 0 for c in counts) or sum(counts) <= 0:
        raise ValueError("entity counts must be non-negative with at least one entity")
    if sum(n for _, n in params.duration_counts) != params.n_tasks:
        raise ValueError("duration_counts must sum to the number of tasks")
    if any(d < 1 for d, _ in params.duration_counts):
        raise ValueError("task durations must be >= 1")
    dens = params.obstacle_density
    lo, hi = dens if isinstance(dens, (tuple, list)) else (dens, dens)
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError("obstacle density must lie in [0, 1]")


def _obstacle_count(params, rng):
    n = params.grid_width * params.grid_height
    if params.obstacle_count is not None:
        return int(params.obstacle_count)
    dens = params.obstacle_density
    if isinstance(dens, (tuple, list)):
        lo, hi = dens
        count = _round_half_up(rng.uniform(lo, hi) * n)
        return min(max(count, math.ceil(lo * n - 1e-9)), math.floor(hi * n + 1e-9))
    return _round_half_up(dens * n)


def _place(dist, count, free, rng, width, height, distinct=True):
    """Pick ``count`` cells from the sorted list ``free``."""
    if count == 0:
        return []
    if dist.kind == "single":
        cell = free[rng.integers(len(free))]
        return [cell] * count
    if distinct and count > len(free):
        raise PlacementInfeasible(f"need {count} distinct free cells, only {len(free)} available")
    if dist.kind == "uniform":
        idx = rng.choice(len(free), size=count, replace=not distinct)
        return [free[i] for i in idx]
    spread = dist.spread if dist.spread is not None else max(width, height) / 8.0
    centers = [free[i] for i in rng.choice(len(free), size=min(dist.cluster_count, len(free)), replace=False)]
    free_set = set(free)
    taken = []
    taken_set = set()
    attempts = 0
    while len(taken) < count and attempts < 200 * count:
        attempts += 1
        cr, cc = centers[rng.integers(len(centers))]
        r = _round_half_up(cr + rng.normal(0.0, spread))
        c = _round_half_up(cc + rng.normal(0.0, spread))
        cell = (r, c)
        if cell in free_set and (not distinct or cell not in taken_set):
            taken.append(cell)
            taken_set.add(cell)
    if len(taken) < count:
        rest = [c for c in free if c not in taken_set]
        idx = rng.choice(len(rest), size=count - len(taken), replace=False)
        taken.extend(rest[i] for i in idx)
    return taken


def generate_scenario(params, seed):
    """Deterministically build a scenario from generation parameters.

    Obstacles are placed first, then tasks on the remaining cells, then
    entity starts on any non-obstacle cell, so no task ever sits on an
    obstacle.
    """
    _check_params(params)
    rng = np.random.default_rng(seed)
    W, H = params.grid_width, params.grid_height
    cells = [(r, c) for r in range(H) for c in range(W)]

    n_obs = _obstacle_count(params, rng)
    if n_obs + params.n_tasks > len(cells):
        raise PlacementInfeasible(
            f"{n_obs} obstacles and {params.n_tasks} tasks do not fit in {len(cells)} cells")
    obs_idx = rng.choice(len(cells), size=n_obs, replace=False) if n_obs else []
    obstacles = frozenset(cells[i] for i in obs_idx)
    free = [c for c in cells if c not in obstacles]

    locs = _place(params.task_distribution, params.n_tasks, free, rng, W, H, distinct=True)
    types = [t for t, n in zip(TASK_TYPE_ORDER, params.task_type_counts) for _ in range(int(n))]
    types = [types[i] for i in rng.permutation(len(types))]
    durs = [int(d) for d, n in params.duration_counts for _ in range(int(n))]
    durs = [durs[i] for i in rng.permutation(len(durs))]
    tasks = tuple(TaskSpec(tuple(map(int, l)), t, d) for l, t, d in zip(locs, types, durs))

    counts = params.resolved_entity_counts()
    classes = [cls for cls, n in zip(CLASS_ORDER, counts) for _ in range(n)]
    starts = _place(params.entity_distribution, len(classes), free, rng, W, H, distinct=True)
    radii = dict(zip(CLASS_ORDER, params.move_radius))
    entities = []
    for cls, start in zip(classes, starts):
        move = _draw(radii[cls], rng)
        csp = _draw(params.power_consumption, rng) if cls is EntityClass.UAV else 0.0
        det = _draw(params.detect_radius, rng) if cls is EntityClass.UGV else 0.0
        entities.append(EntitySpec(cls, tuple(map(int, start)), move, csp, det))

    spec = ScenarioSpec(W, H, int(params.time_limit), obstacles, tasks, tuple(entities), int(seed))
    validate_spec(spec)
    return spec


def perturb_scenario(base, field, seed):
    """Resample exactly one aspect of ``base``; everything else is kept.

    Durations and types are reshuffled across tasks (their multisets are
    preserved); obstacles keep their count but move to cells holding no task
    and no entity start; entity starts move to fresh non-obstacle cells.
    """
    field = VariationKind(field)
    rng = np.random.default_rng(seed)
    if field is VariationKind.TASK_EXECUTION_TIME:
        durs = [t.duration for t in base.tasks]
        perm = rng.permutation(len(durs))
        tasks = tuple(replace(t, duration=durs[i]) for t, i in zip(base.tasks, perm))
        out = replace(base, tasks=tasks)
    elif field is VariationKind.TASK_TYPE:
        types = [t.task_type for t in base.tasks]
        perm = rng.permutation(len(types))
        tasks = tuple(replace(t, task_type=types[i]) for t, i in zip(base.tasks, perm))
        out = replace(base, tasks=tasks)
    elif field is VariationKind.OBSTACLE_POSITION:
        blocked = {t.location for t in base.tasks} | {e.start for e in base.entities}
        cand = [(r, c) for r in range(base.grid_height) for c in range(base.grid_width)
                if (r, c) not in blocked]
        n = len(base.obstacles)
        if n > len(cand):
            raise PlacementInfeasible("not enough cells to relocate obstacles")
        idx = rng.choice(len(cand), size=n, replace=False) if n else []
        out = replace(base, obstacles=frozenset(cand[i] for i in idx))
    else:
        free = [(r, c) for r in range(base.grid_height) for c in range(base.grid_width)
                if (r, c) not in base.obstacles]
        distinct = len(base.entities) <= len(free)
        idx = rng.choice(len(free), size=len(base.entities), replace=not distinct)
        ents = tuple(replace(e, start=free[i]) for e, i in zip(base.entities, idx))
        out = replace(base, entities=ents)
    validate_spec(out)
    return out


# -- validation & serialization ------------------------------------------------

def _in_bounds(cell, spec):
    return 0 <= cell[0] < spec.grid_height and 0 <= cell[1] < spec.grid_width


def validate_spec(spec):
    """Raise ParseError (with a field path) if ``spec`` breaks an invariant."""
    if not (isinstance(spec.grid_width, int) and spec.grid_width > 0):
        raise ParseError("grid.width", "must be a positive integer")
    if not (isinstance(spec.grid_height, int) and spec.grid_height > 0):
        raise ParseError("grid.height", "must be a positive integer")
    if not (isinstance(spec.time_limit, int) and spec.time_limit >= 1):
        raise ParseError("time_limit", "must be an integer >= 1")
    for i, cell in enumerate(sorted(spec.obstacles)):
        if not _in_bounds(cell, spec):
            raise ParseError(f"obstacles[{i}]", f"cell {cell} outside the grid")
    if not spec.tasks:
        raise ParseError("tasks", "at least one task is required")
    seen = set()
    for i, t in enumerate(spec.tasks):
        if not _in_bounds(t.location, spec):
            raise ParseError(f"tasks[{i}].location", f"cell {t.location} outside the grid")
        if t.location in spec.obstacles:
            raise ParseError(f"tasks[{i}].location",
                             f"cell {t.location} is an obstacle; a cell cannot be both obstacle and task")
        if t.location in seen:
            raise ParseError(f"tasks[{i}].location", f"cell {t.location} already holds a task")
        seen.add(t.location)
        if not (isinstance(t.duration, int) and t.duration >= 1):
            raise ParseError(f"tasks[{i}].duration", "must be an integer >= 1")
    if not spec.entities:
        raise ParseError("entities", "at least one entity is required")
    for i, e in enumerate(spec.entities):
        if not _in_bounds(e.start, spec):
            raise ParseError(f"entities[{i}].start", f"cell {e.start} outside the grid")
        if e.start in spec.obstacles:
            raise ParseError(f"entities[{i}].start", f"cell {e.start} is an obstacle")
        if not e.move_radius > 0:
            raise ParseError(f"entities[{i}].move_radius", "must be positive")
        if e.entity_class is EntityClass.UAV:
            if not 0.0 < e.power_consumption <= 1.0:
                raise ParseError(f"entities[{i}].power_consumption", "must lie in (0, 1]")
        elif e.power_consumption != 0:
            raise ParseError(f"entities[{i}].power_consumption", "only UAVs consume power")
        if e.entity_class is EntityClass.UGV:
            if e.detect_radius < 0:
                raise ParseError(f"entities[{i}].detect_radius", "must be >= 0")
        elif e.detect_radius != 0:
            raise ParseError(f"entities[{i}].detect_radius", "only UGVs detect UAV power")
    return spec


def spec_to_dict(spec):
    ents = []
    for e in spec.entities:
        d = {"class": e.entity_class.value, "start": list(e.start), "move_radius": e.move_radius}
        if e.entity_class is EntityClass.UAV:
            d["power_consumption"] = e.power_consumption
        if e.entity_class is EntityClass.UGV:
            d["detect_radius"] = e.detect_radius
        ents.append(d)
    return {
        "version": SCENARIO_VERSION,
        "grid": {"width": spec.grid_width, "height": spec.grid_height},
        "time_limit": spec.time_limit,
        "obstacles": [list(c) for c in sorted(spec.obstacles)],
        "tasks": [{"location": list(t.location), "type": t.task_type.value, "duration": t.duration}
                  for t in spec.tasks],
        "entities": ents,
        "seed": spec.seed,
    }


def save_scenario(spec):
    """Serialize to canonical JSON bytes (stable key order and layout)."""
    return (json.dumps(spec_to_dict(spec), sort_keys=True, indent=1) + "\n").encode()


def _cell(value, path):
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)):
        raise ParseError(path, f"expected [row, col] integer pair, got {value!r}")
    return (value[0], value[1])


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(path, f"expected a number, got {value!r}")
    return float(value)


def _int(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(path, f"expected an integer, got {value!r}")
    return value


def spec_from_dict(doc):
    if not isinstance(doc, dict):
        raise ParseError("$", "scenario document must be a JSON object")
    for key in ("version", "grid", "time_limit", "obstacles", "tasks", "entities", "seed"):
        if key not in doc:
            raise ParseError(key, "missing")
    if doc["version"] != SCENARIO_VERSION:
        raise ParseError("version", f"unsupported version {doc['version']!r}")
    grid = doc["grid"]
    if not isinstance(grid, dict):
        raise ParseError("grid", "expected an object with width and height")
    width = _int(grid.get("width"), "grid.width")
    height = _int(grid.get("height"), "grid.height")
    obstacles = frozenset(_cell(c, f"obstacles[{i}]") for i, c in enumerate(doc["obstacles"]))
    tasks = []
    for i, t in enumerate(doc["tasks"]):
        try:
            ttype = TaskType(t["type"])
        except (KeyError, ValueError, TypeError):
            raise ParseError(f"tasks[{i}].type", f"unknown task type {t.get('type')!r}") from None
        tasks.append(TaskSpec(_cell(t.get("location"), f"tasks[{i}].location"), ttype,
                              _int(t.get("duration"), f"tasks[{i}].duration")))
    entities = []
    for i, e in enumerate(doc["entities"]):
        try:
            cls = EntityClass(e["class"])
        except (KeyError, ValueError, TypeError):
            raise ParseError(f"entities[{i}].class", f"unknown entity class {e.get('class')!r}") from None
        entities.append(EntitySpec(
            cls,
            _cell(e.get("start"), f"entities[{i}].start"),
            _number(e.get("move_radius"), f"entities[{i}].move_radius"),
            _number(e.get("power_consumption", 0.0), f"entities[{i}].power_consumption"),
            _number(e.get("detect_radius", 0.0), f"entities[{i}].detect_radius"),
        ))
    spec = ScenarioSpec(width, height, _int(doc["time_limit"], "time_limit"), obstacles,
                        tuple(tasks), tuple(entities), _int(doc["seed"], "seed"))
    return validate_spec(spec)


def load_scenario(data):
    if isinstance(data, (bytes, bytearray)):
        data = data.decode()
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError("$", f"malformed JSON: {exc}") from None
    return spec_from_dict(doc)


def read_scenario(path_or_name):
    """Load a scenario file, or a bundled scenario by name (``zhongfu``)."""
    name = str(path_or_name)
    if name in BUNDLED:
        return load_bundled(name)
    with open(name, "rb") as fh:
        return load_scenario(fh.read())


def write_scenario(path, spec):
    with open(path, "wb") as fh:
        fh.write(save_scenario(spec))


# -- presets ---------------------------------------------------------------------

RANGES = ((7.0, 9.0), (2.0, 4.0), (4.0, 6.0))
BASE = GenerationParams(
    grid_width=16, grid_height=16, time_limit=9,
    entity_counts=(6, 15, 3), task_type_counts=(30, 75, 15),
    duration_counts=((1, 96), (2, 24)), obstacle_count=20,
    move_radius=RANGES, power_consumption=(0.2, 0.4), detect_radius=10.0,
    entity_distribution=UNIFORM_RANDOM, task_distribution=UNIFORM_RANDOM,
)


def _durations(total, weights, values=(1, 2)):
    return tuple(zip(values, split_by_ratio(total, weights)))


def _sce7(tasks, types):
    return replace(BASE, task_type_counts=types, duration_counts=_durations(tasks, (96, 24)))


PRESETS = {
    "sce1": [replace(BASE, entity_distribution=SINGLE_POINT, move_radius=(8.0, 3.0, 5.0),
                     power_consumption=0.3)],
    "sce2": [BASE],
    "sce3": [replace(BASE, entity_distribution=clustered_checkin())],
    "sce4": [replace(BASE, entity_distribution=clustered_checkin(),
                     task_distribution=clustered_checkin())],
    "sce5": [replace(BASE, entity_counts=c) for c in ((4, 10, 2), (6, 15, 3), (8, 20, 4))],
    "sce6": [replace(BASE, grid_width=s, grid_height=s) for s in (12, 16, 20)],
    "sce7": [_sce7(96, (24, 60, 12)), _sce7(120, (30, 75, 15)), _sce7(144, (36, 90, 18))],
    "sce8": [replace(BASE, duration_counts=((1, 72), (2, 48))), BASE,
             replace(BASE, duration_counts=((1, 72), (2, 36), (3, 12)))],
    "sce9": [replace(BASE, task_type_counts=(40, 40, 40)), BASE],
    "sce10": [replace(BASE, obstacle_count=n) for n in (20, 40, 60)],
}
DEFAULT_VARIANT = {"sce5": 2, "sce6": 2, "sce7": 2, "sce8": 2, "sce9": 2, "sce10": 1}

ZHONGFU_PARAMS = GenerationParams(
    grid_width=20, grid_height=20, time_limit=12,
    entity_counts=(2, 2, 2), task_type_counts=(19, 24, 11),
    duration_counts=((1, 45), (2, 9)), obstacle_density=0.15,
    move_radius=(10.0, 3.0, 7.0), power_consumption=0.2, detect_radius=10.0,
    entity_distribution=UNIFORM_RANDOM, task_distribution=clustered_checkin(),
)
ZHONGFU_SEED = 2025

# small fixed map for desk-scale learning checks: 2 workers, 1 UAV, 1 UGV and
# 12 tasks in the 1-/2-period mix, all entities starting together
DESK8_PARAMS = GenerationParams(
    grid_width=8, grid_height=8, time_limit=9,
    entity_counts=(1, 2, 1), task_type_counts=(3, 7, 2),
    duration_counts=((1, 10), (2, 2)), obstacle_count=5,
    move_radius=(3.0, 1.5, 2.0), power_consumption=0.3, detect_radius=4.0,
    entity_distribution=SINGLE_POINT, task_distribution=UNIFORM_RANDOM,
)
DESK8_SEED = 7
BUNDLED = {"zhongfu": "zhongfu.scn", "desk8": "desk8.scn"}
FIXED = {"zhongfu": (ZHONGFU_PARAMS, ZHONGFU_SEED), "desk8": (DESK8_PARAMS, DESK8_SEED)}


def preset_params(name, variant=None):
    """Generation parameters of a named preset; multi-valued presets take a
    1-based ``variant`` (defaults to the base-scenario setting)."""
    if name in FIXED:
        return FIXED[name][0]
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS) + sorted(FIXED))}")
    options = PRESETS[name]
    v = DEFAULT_VARIANT.get(name, 1) if variant is None else int(variant)
    if not 1 <= v <= len(options):
        raise KeyError(f"preset {name} has variants 1..{len(options)}")
    return options[v - 1]


def zhongfu_spec():
    return generate_scenario(ZHONGFU_PARAMS, ZHONGFU_SEED)


def fixed_spec(name):
    """The seed-pinned scenario of a fixed preset (``zhongfu``, ``desk8``)."""
    params, seed = FIXED[name]
    return generate_scenario(params, seed)


def load_bundled(name):
    data = resources.files("hecta").joinpath("data", BUNDLED[name]).read_bytes()
    return load_scenario(data)
