"""Channel-plane encodings of the world for the networks.

Global state, 7 planes: 0 obstacles; 1-3 incomplete tasks needing a UAV,
worker, UGV; 4 entity occupancy count; 5 remaining/full duration; 6 task
currently owned. Local observation, 3 planes: own position, movable-range
mask, own power at own cell (UAVs only); plus an id one-hot and the
``urge = (power, consumption)`` pair (zeros for non-UAVs).
"""
import csv
from typing import NamedTuple

import numpy as np

from .world import NO_OWNER

N_GLOBAL = 7
N_LOCAL = 3


class LocalObs(NamedTuple):
    planes: np.ndarray
    id_onehot: np.ndarray
    urge: np.ndarray


def global_planes_batch(layout, pos, remaining, owner):
    """``pos`` (N, F), ``remaining``/``owner`` (N, T) -> (N, 7, H, W)."""
    pos = np.asarray(pos)
    N = pos.shape[0]
    P = layout.P
    out = np.zeros((N, N_GLOBAL, P))
    out[:, 0] = layout.obstacle
    rows = np.arange(N)[:, None]
    live = remaining > 0
    cells = np.broadcast_to(layout.task_cell, live.shape)
    planes = np.broadcast_to(1 + layout.task_class, live.shape)
    n_i, t_i = np.nonzero(live)
    out[n_i, planes[n_i, t_i], cells[n_i, t_i]] = 1.0
    out[n_i, 5, cells[n_i, t_i]] = remaining[n_i, t_i] / layout.duration[t_i]
    owned = live & (owner != NO_OWNER)
    n_o, t_o = np.nonzero(owned)
    out[n_o, 6, cells[n_o, t_o]] = 1.0
    np.add.at(out, (np.broadcast_to(rows, pos.shape), 4, pos), 1.0)
    return out.reshape(N, N_GLOBAL, layout.H, layout.W)


def local_planes_batch(layout, pos, power, masks):
    """``pos``/``power`` (N, F), ``masks`` (N, F, P) -> (N, F, 3, H, W)."""
    pos = np.asarray(pos)
    N, F = pos.shape
    out = np.zeros((N, F, N_LOCAL, layout.P))
    n_i, k_i = np.indices((N, F)).reshape(2, -1)
    cell = pos.reshape(-1)
    out[n_i, k_i, 0, cell] = 1.0
    out[:, :, 1] = masks
    out[n_i, k_i, 2, cell] = np.where(layout.is_uav[k_i], power.reshape(-1), 0.0)
    return out.reshape(N, F, N_LOCAL, layout.H, layout.W)


def urge_batch(layout, power):
    """(N, F) power -> (N, F, 2) urge vectors."""
    power = np.asarray(power, dtype=float)
    out = np.zeros(power.shape + (2,))
    out[..., 0] = np.where(layout.is_uav, power, 0.0)
    out[..., 1] = np.where(layout.is_uav, layout.consumption, 0.0)
    return out


def encode_global(world):
    L = world.layout
    return global_planes_batch(L, world.pos[None], world.remaining[None], world.owner[None])[0]


def encode_local(world, entity_id):
    k = world._check_entity(entity_id)
    L = world.layout
    mask = world.range_mask(k)
    planes = np.zeros((N_LOCAL, L.P))
    planes[0, world.pos[k]] = 1.0
    planes[1] = mask
    if L.is_uav[k]:
        planes[2, world.pos[k]] = world.power[k]
    onehot = np.zeros(L.n_entities)
    onehot[k] = 1.0
    urge = urge_batch(L, world.power)[k]
    return LocalObs(planes.reshape(N_LOCAL, L.H, L.W), onehot, urge)


def observe(world, entity_id, action=None):
    """Deterministic observation function: the post-step local encoding."""
    return encode_local(world, entity_id)


def dump_planes_csv(path, planes):
    """Write a (C, H, W) stack as CSV rows ``plane,row,v0,...,vW-1``."""
    planes = np.asarray(planes)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plane", "row"] + [f"c{j}" for j in range(planes.shape[2])])
        for p in range(planes.shape[0]):
            for r in range(planes.shape[1]):
                w.writerow([p, r] + [repr(float(v)) for v in planes[p, r]])
