import json
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from hecta.scenario import (
    BASE, EntityClass, GenerationParams, ParseError, PlacementInfeasible, PRESETS, TaskType,
    VariationKind, clustered_checkin, generate_scenario, load_bundled, load_scenario,
    perturb_scenario, preset_params, save_scenario, split_by_ratio, spec_to_dict, zhongfu_spec,
    SINGLE_POINT,
)


def counts(spec):
    out = {}
    for e in spec.entities:
        out[e.entity_class] = out.get(e.entity_class, 0) + 1
    return out


def test_sce2_matches_table():
    spec = generate_scenario(preset_params("sce2"), 7)
    assert (spec.grid_height, spec.grid_width) == (16, 16)
    assert len(spec.tasks) == 120 and len(spec.obstacles) == 20
    assert counts(spec) == {EntityClass.UAV: 6, EntityClass.WORKER: 15, EntityClass.UGV: 3}
    types = [t.task_type for t in spec.tasks]
    assert (types.count(TaskType.AERIAL), types.count(TaskType.DETAILED), types.count(TaskType.GROUND)) == (30, 75, 15)
    durs = [t.duration for t in spec.tasks]
    assert (durs.count(1), durs.count(2)) == (96, 24)
    for e in spec.entities:
        lo, hi = {EntityClass.UAV: (7, 9), EntityClass.WORKER: (2, 4), EntityClass.UGV: (4, 6)}[e.entity_class]
        assert lo <= e.move_radius <= hi
        if e.entity_class is EntityClass.UAV:
            assert 0.2 <= e.power_consumption <= 0.4


def test_density_example():
    p = replace(BASE, obstacle_count=None, obstacle_density=0.078)
    assert len(generate_scenario(p, 1).obstacles) == 20


def test_generation_is_deterministic():
    p = preset_params("sce4")
    assert save_scenario(generate_scenario(p, 3)) == save_scenario(generate_scenario(p, 3))
    assert save_scenario(generate_scenario(p, 3)) != save_scenario(generate_scenario(p, 4))


def test_all_presets_generate():
    for name, variants in PRESETS.items():
        for v in range(1, len(variants) + 1):
            spec = generate_scenario(preset_params(name, v), 0)
            locs = {t.location for t in spec.tasks}
            assert not locs & spec.obstacles
            assert all(e.start not in spec.obstacles for e in spec.entities)
    assert len(generate_scenario(preset_params("sce6", 1), 0).tasks) == 120
    assert generate_scenario(preset_params("sce6", 3), 0).grid_width == 20


def test_single_point_start():
    spec = generate_scenario(preset_params("sce1"), 5)
    assert len({e.start for e in spec.entities}) == 1
    assert {e.move_radius for e in spec.entities if e.entity_class is EntityClass.WORKER} == {3.0}


def test_ratio_mode():
    p = replace(BASE, ratio_mode=True, total_entities=16)
    assert split_by_ratio(16, (2, 5, 1)) == (4, 10, 2)
    c = counts(generate_scenario(p, 0))
    assert (c[EntityClass.UAV], c[EntityClass.WORKER], c[EntityClass.UGV]) == (4, 10, 2)


def test_infeasible_placement():
    p = GenerationParams(grid_width=4, grid_height=4, task_type_counts=(5, 5, 5),
                         duration_counts=((1, 15),), obstacle_count=4)
    with pytest.raises(PlacementInfeasible):
        generate_scenario(p, 0)


def test_bad_params_rejected():
    with pytest.raises(ValueError):
        generate_scenario(replace(BASE, obstacle_count=None, obstacle_density=1.5), 0)
    with pytest.raises(ValueError):
        generate_scenario(replace(BASE, duration_counts=((1, 10),)), 0)


def test_zhongfu_bundle():
    spec = load_bundled("zhongfu")
    assert spec == zhongfu_spec()
    assert (spec.grid_height, spec.grid_width, len(spec.tasks)) == (20, 20, 54)
    assert not spec.has_unreachable_tasks


def test_desk8_bundle():
    from hecta.scenario import fixed_spec
    spec = load_bundled("desk8")
    assert spec == fixed_spec("desk8")
    assert (spec.grid_height, spec.grid_width, spec.time_limit, len(spec.tasks)) == (8, 8, 9, 12)
    assert counts(spec) == {EntityClass.UAV: 1, EntityClass.WORKER: 2, EntityClass.UGV: 1}
    assert sorted(t.duration for t in spec.tasks) == [1] * 10 + [2] * 2


def test_checkin_clusters_tasks():
    p = replace(BASE, task_distribution=clustered_checkin(cluster_count=2, spread=1.0))
    spec = generate_scenario(p, 0)
    assert len({t.location for t in spec.tasks}) == 120


@pytest.mark.parametrize("kind", list(VariationKind))
def test_perturbation_changes_one_field(kind):
    base = generate_scenario(preset_params("sce2"), 11)
    new = perturb_scenario(base, kind, 5)
    a, b = spec_to_dict(base), spec_to_dict(new)
    changed = {k for k in a if a[k] != b[k]}
    if kind is VariationKind.TASK_EXECUTION_TIME:
        assert changed <= {"tasks"}
        assert [t.location for t in base.tasks] == [t.location for t in new.tasks]
        assert sorted(t.duration for t in base.tasks) == sorted(t.duration for t in new.tasks)
        assert [t.task_type for t in base.tasks] == [t.task_type for t in new.tasks]
    elif kind is VariationKind.TASK_TYPE:
        assert changed <= {"tasks"}
        assert [t.duration for t in base.tasks] == [t.duration for t in new.tasks]
        assert sorted(t.task_type for t in base.tasks) == sorted(t.task_type for t in new.tasks)
    elif kind is VariationKind.OBSTACLE_POSITION:
        assert changed == {"obstacles"} and len(new.obstacles) == len(base.obstacles)
    else:
        assert changed == {"entities"}
        assert [e.move_radius for e in base.entities] == [e.move_radius for e in new.entities]
    assert perturb_scenario(base, kind, 5) == new


def test_unknown_variation_kind():
    with pytest.raises(ValueError):
        perturb_scenario(generate_scenario(preset_params("sce2"), 0), "Weather", 0)


def test_parse_errors_carry_paths():
    doc = spec_to_dict(generate_scenario(preset_params("sce1"), 0))
    bad = json.loads(json.dumps(doc))
    bad["tasks"][3]["location"] = doc["obstacles"][0]
    with pytest.raises(ParseError) as e:
        load_scenario(json.dumps(bad))
    assert e.value.path == "tasks[3].location"
    bad = json.loads(json.dumps(doc))
    bad["entities"][0]["start"] = [99, 0]
    with pytest.raises(ParseError) as e:
        load_scenario(json.dumps(bad))
    assert e.value.path == "entities[0].start"
    with pytest.raises(ParseError):
        load_scenario(b"{not json")
    bad = json.loads(json.dumps(doc))
    bad["tasks"] = []
    with pytest.raises(ParseError) as e:
        load_scenario(json.dumps(bad))
    assert e.value.path == "tasks"


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(sorted(PRESETS)))
def test_roundtrip_property(seed, preset):
    spec = generate_scenario(preset_params(preset), seed)
    blob = save_scenario(spec)
    assert load_scenario(blob) == spec
    assert save_scenario(load_scenario(blob)) == blob


def test_unreachable_flag():
    p = GenerationParams(grid_width=6, grid_height=6, entity_counts=(0, 2, 0), task_type_counts=(1, 2, 0),
                         duration_counts=((1, 3),), obstacle_count=0, entity_distribution=SINGLE_POINT)
    assert generate_scenario(p, 0).has_unreachable_tasks
