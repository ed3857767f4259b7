import numpy as np
import pytest

from cmt_balance.comm import RankEnsemble
from cmt_balance.mesh import build_mesh, order_elements
from cmt_balance.migration import (
    RankState,
    StaleStaticData,
    execute_migration,
    new_rank_state,
    pack_element,
    plan_transfers,
    reinitialize_static,
    unpack_element,
)
from cmt_balance.particles import init_particles
from cmt_balance.partition import ElementProcessorMap

UNIFORM = ElementProcessorMap((1, 5, 9), 12)
CENTRALIZED = ElementProcessorMap((1, 6, 8), 12)
DISTRIBUTED = ElementProcessorMap((1, 5, 8), 12)


@pytest.fixture
def mesh():
    return order_elements(build_mesh((-2.208, 0, 0), (6.0, 0.0802, 0.0802), (12, 1, 1), 3))


def make_states(mesh, emap, n_particles=60, seed=0):
    ps = init_particles(mesh, mesh.extent_lo, mesh.extent_hi, n_particles, seed)
    owner = emap.owner(ps.elem)
    rng = np.random.default_rng(seed)
    states = []
    for r in range(emap.np):
        rg = emap.range_of(r)
        st = new_rank_state(r, np.arange(rg.start, rg.stop), mesh, ps.subset(owner == r))
        st.fields = rng.standard_normal(st.fields.shape)
        states.append(st)
    return states


def snapshot(states):
    blocks = {int(g): f.tobytes() for st in states for g, f in zip(st.gids, st.fields)}
    parts = {}
    for st in states:
        for i in range(len(st.particles)):
            parts[int(st.particles.ids[i])] = (st.particles.data[i].tobytes(), int(st.particles.elem[i]))
    return blocks, parts


def test_plan_examples():
    assert plan_transfers(UNIFORM, CENTRALIZED).moves == [(5, 1, 0), (8, 1, 2)]
    assert plan_transfers(UNIFORM, DISTRIBUTED).moves == [(8, 1, 2)]
    assert len(plan_transfers(UNIFORM, UNIFORM)) == 0


def test_plan_rejects_mismatched_maps():
    with pytest.raises(ValueError):
        plan_transfers(UNIFORM, ElementProcessorMap((1, 7), 12))


def test_wire_round_trip(mesh):
    states = make_states(mesh, UNIFORM)
    st = states[1]
    gid = int(st.gids[0])
    carried = st.particles.subset(st.particles.elem == gid)
    buf = pack_element(gid, st.fields[0], carried)
    g2, block, ps = unpack_element(buf, mesh.n_per_axis)
    assert g2 == gid
    assert block.tobytes() == st.fields[0].tobytes()
    assert ps.data.tobytes() == carried.data.tobytes()
    assert ps.ids.tolist() == carried.ids.tolist()
    with pytest.raises(ValueError):
        unpack_element(buf + b"\0", mesh.n_per_axis)
    with pytest.raises(ValueError):
        unpack_element(buf, mesh.n_per_axis + 1)
    with pytest.raises(ValueError):
        unpack_element(b"\x07" + buf[1:], mesh.n_per_axis)


@pytest.mark.parametrize("mode", ["sequential", "threaded"])
@pytest.mark.parametrize("new", [CENTRALIZED, DISTRIBUTED, ElementProcessorMap((1, 1, 13), 12)])
def test_migration_conserves_state(mesh, mode, new):
    states = make_states(mesh, UNIFORM)
    before = snapshot(states)
    plan = plan_transfers(UNIFORM, new)
    carried = plan.particle_manifest(states)
    states = execute_migration(RankEnsemble(3, mode), states, plan, mesh.n_per_axis)
    assert snapshot(states) == before
    for st in states:
        reinitialize_static(st, mesh)
        st.check_invariants(mesh, new)
    for pid, _, dest in carried:
        assert pid in states[dest].particles.ids


def test_empty_plan_leaves_state_unchanged(mesh):
    states = make_states(mesh, UNIFORM)
    before = snapshot(states)
    gens = [st.ownership_generation for st in states]
    states = execute_migration(RankEnsemble(3), states, plan_transfers(UNIFORM, UNIFORM), mesh.n_per_axis)
    assert snapshot(states) == before
    assert [st.ownership_generation for st in states] == gens


def test_migration_rejects_state_not_matching_plan(mesh):
    states = make_states(mesh, DISTRIBUTED)
    with pytest.raises(ValueError):
        execute_migration(RankEnsemble(3), states, plan_transfers(UNIFORM, CENTRALIZED), mesh.n_per_axis)


def test_reinitialized_geometry_matches_local_computation(mesh):
    states = make_states(mesh, UNIFORM)
    states = execute_migration(RankEnsemble(3), states, plan_transfers(UNIFORM, CENTRALIZED), mesh.n_per_axis)
    st0 = states[0]
    assert np.isnan(st0.geometry[-1]).all()  # element 5 arrived without static data
    with pytest.raises(StaleStaticData):
        st0.require_static_current()
    reinitialize_static(st0, mesh)
    st0.require_static_current()
    fresh = new_rank_state(9, [5], mesh, st0.particles.subset(st0.particles.elem == 5))
    assert st0.geometry[list(st0.gids).index(5)].tobytes() == fresh.geometry[0].tobytes()
    again = reinitialize_static(st0, mesh)
    assert again.geometry.tobytes() == st0.geometry.tobytes()


def test_rank_state_invariant_check(mesh):
    st = make_states(mesh, UNIFORM)[0]
    st.check_invariants(mesh, UNIFORM)
    with pytest.raises(AssertionError):
        st.check_invariants(mesh, CENTRALIZED)
    assert isinstance(st, RankState)
