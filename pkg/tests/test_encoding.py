import numpy as np

from hecta.encoding import (N_GLOBAL, N_LOCAL, dump_planes_csv, encode_global, encode_local,
                            global_planes_batch, local_planes_batch, urge_batch)
from hecta.scenario import EntityClass as C, EntitySpec, ScenarioSpec, TaskSpec, TaskType as TT
from hecta.scenario import generate_scenario, preset_params
from hecta.world import World


def small_world():
    tasks = (TaskSpec((0, 1), TT.DETAILED, 2), TaskSpec((2, 2), TT.AERIAL, 1), TaskSpec((3, 3), TT.GROUND, 1))
    ents = (EntitySpec(C.UAV, (1, 1), 2.0, 0.3), EntitySpec(C.WORKER, (0, 0), 1.0),
            EntitySpec(C.UGV, (1, 1), 1.0, 0.0, 3.0))
    return World(ScenarioSpec(5, 5, 6, frozenset({(4, 4)}), tasks, ents, 0))


def test_global_planes_by_hand():
    w = small_world()
    w.step([(2, 2), (0, 1), (1, 1)])
    g = encode_global(w)
    assert g.shape == (N_GLOBAL, 5, 5)
    assert g[0, 4, 4] == 1 and g[0].sum() == 1
    # aerial task done, detailed task half way and owned, ground task untouched
    assert g[1].sum() == 0
    assert g[2, 0, 1] == 1 and g[2].sum() == 1
    assert g[3, 3, 3] == 1 and g[3].sum() == 1
    assert g[4, 2, 2] == 1 and g[4, 0, 1] == 1 and g[4, 1, 1] == 1 and g[4].sum() == 3
    assert g[5, 0, 1] == 0.5 and g[5, 3, 3] == 1.0 and g[5, 2, 2] == 0
    assert g[6, 0, 1] == 1 and g[6].sum() == 1


def test_occupancy_counts_stack():
    w = small_world()
    assert encode_global(w)[4, 1, 1] == 2


def test_local_obs():
    w = small_world()
    obs = encode_local(w, 0)
    assert obs.planes.shape == (N_LOCAL, 5, 5)
    assert obs.planes[0, 1, 1] == 1 and obs.planes[0].sum() == 1
    assert np.array_equal(obs.planes[1].reshape(-1), w.range_mask(0))
    assert obs.planes[2, 1, 1] == 1.0 and obs.planes[2].sum() == 1.0
    assert list(obs.id_onehot) == [1, 0, 0]
    assert list(obs.urge) == [1.0, 0.3]
    worker = encode_local(w, 1)
    assert worker.planes[2].sum() == 0 and list(worker.urge) == [0, 0]


def test_batch_encoders_match_single():
    spec = generate_scenario(preset_params("sce5", 1), 3)
    w = World(spec)
    rng = np.random.default_rng(0)
    for _ in range(3):
        w.step([int(rng.choice(np.flatnonzero(w.range_mask(k)))) for k in range(w.n_entities)])
    L = w.layout
    lp = local_planes_batch(L, w.pos[None], w.power[None], w.range_masks()[None])[0]
    ur = urge_batch(L, w.power[None])[0]
    for k in range(w.n_entities):
        obs = encode_local(w, k)
        assert np.array_equal(lp[k], obs.planes) and np.array_equal(ur[k], obs.urge)
    g = global_planes_batch(L, w.pos[None], w.remaining[None], w.owner[None])[0]
    assert np.array_equal(g, encode_global(w))


def test_dump_planes(tmp_path):
    p = tmp_path / "g.csv"
    dump_planes_csv(p, encode_global(small_world()))
    lines = p.read_text().splitlines()
    assert lines[0].startswith("plane,row,c0") and len(lines) == 1 + N_GLOBAL * 5
