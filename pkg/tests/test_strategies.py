import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drtdiff.data import PartitionSpec, make_gaussian_blobs, partition
from drtdiff.diagnostics import centroid, network_disagreement, uniform_phi
from drtdiff.errors import ContractViolation
from drtdiff.mixing import DrtConfig, build_mixing_tensor
from drtdiff.nn import Architecture, Batch, init_params
from drtdiff.strategies import (
    AgentState,
    RoundSpec,
    StrategyKind,
    adapt_step,
    combine_classical,
    combine_drt,
    run_round,
)
from drtdiff.topology import BaseWeights, build_erdos_renyi, build_ring, metropolis_weights


def _random_params(k, sizes, seed):
    rng = np.random.default_rng(seed)
    return [[rng.standard_normal(s) for s in sizes] for _ in range(k)]


def test_adapt_step_hand_value():
    # single logit difference: grad of -log softmax_0 for logits (w, 0) at x=1
    arch = Architecture((1, 2), activation="identity")
    params = [np.array([0.0, 0.0])]
    batch = Batch(np.array([[1.0]]), np.array([0]))
    value, psi = adapt_step(arch, params, batch, 0.5)
    assert value == pytest.approx(np.log(2))
    np.testing.assert_allclose(psi[0], [0.25, -0.25])


def test_adapt_step_zero_mu_is_identity():
    arch = Architecture((2, 3))
    params = init_params(arch, 0)
    _, psi = adapt_step(arch, params, Batch(np.ones((2, 2)), np.array([0, 2])), 0.0)
    np.testing.assert_array_equal(psi[0], params[0])


def test_combine_classical_two_agent_mean():
    psis = [[np.array([1.0, 2.0])], [np.array([3.0, -2.0])]]
    out = combine_classical(psis, np.full((2, 2), 0.5))
    for agent in out:
        np.testing.assert_allclose(agent[0], [2.0, 0.0])


def test_combine_classical_identity():
    psis = _random_params(3, [2, 4], 0)
    out = combine_classical(psis, BaseWeights(np.eye(3)))
    for a, b in zip(out, psis):
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


def test_combine_rejects_shape_mismatch():
    with pytest.raises(ContractViolation):
        combine_classical([[np.ones(2)], [np.ones(3)]], np.full((2, 2), 0.5))
    with pytest.raises(ContractViolation):
        combine_classical([[np.ones(2)], [np.ones(2)]], np.eye(3))


def test_combine_drt_k3_matches_dense_loop():
    topo = build_ring(3)
    base = metropolis_weights(topo)
    psis = _random_params(3, [4, 2, 3], 1)
    cfg = DrtConfig(clip_N=6.0)
    out, tensor = combine_drt(psis, base, topo, cfg, iteration=2)
    assert tensor.iteration_index == 2
    ref = build_mixing_tensor(psis, base, topo, cfg)
    for k in range(3):
        for p in range(3):
            expected = sum(ref.layer(p)[l, k] * psis[l][p] for l in range(3))
            np.testing.assert_allclose(out[k][p], expected, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000), st.booleans())
def test_consensus_is_preserved(k, seed, drt):
    topo = build_erdos_renyi(k, 0.5, seed)
    base = metropolis_weights(topo)
    w = _random_params(1, [3, 5], seed)[0]
    psis = [[layer.copy() for layer in w] for _ in range(k)]
    out = combine_drt(psis, base, topo, DrtConfig(clip_N=2.0 * k))[0] if drt else combine_classical(psis, base)
    for agent in out:
        for a, b in zip(agent, w):
            np.testing.assert_allclose(a, b, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000), st.booleans())
def test_convex_hull_containment(k, seed, drt):
    topo = build_erdos_renyi(k, 0.4, seed)
    base = metropolis_weights(topo)
    psis = _random_params(k, [3, 2], seed)
    out = combine_drt(psis, base, topo, DrtConfig(clip_N=2.0 * k))[0] if drt else combine_classical(psis, base)
    for j, hood in enumerate(topo.neighborhoods):
        for p in range(2):
            local = np.stack([psis[l][p] for l in hood])
            assert np.all(out[j][p] >= local.min(axis=0) - 1e-12)
            assert np.all(out[j][p] <= local.max(axis=0) + 1e-12)


def test_drt_steps_contract_disagreement():
    k = 6
    topo = build_ring(k)
    base = metropolis_weights(topo)
    psis = _random_params(k, [4, 3], 5)
    cfg = DrtConfig(clip_N=2.0 * k)

    def dis(ps):
        return network_disagreement(ps, centroid(ps, uniform_phi(k, 2)))

    start = dis(psis)
    for _ in range(60):
        psis, _ = combine_drt(psis, base, topo, cfg)
    assert dis(psis) < 1e-3 * start


def _setup(k=4, iid=False):
    ds = make_gaussian_blobs(3, 2, 40, 0.8, seed=0)
    arch = Architecture((2, 5, 3), activation="tanh", bias=True)
    topo = build_ring(k)
    spec = PartitionSpec(k, classes_per_agent=(1, 2), samples_per_agent=(10, 15), iid=iid, seed=0)
    parts = partition(ds, spec)
    states = [AgentState(j, init_params(arch, 100 + j), master_seed=9) for j in range(k)]
    return ds, arch, topo, metropolis_weights(topo), parts, states


def test_zero_consensus_steps_lets_agents_drift():
    ds, arch, topo, base, parts, _ = _setup()
    w = init_params(arch, 0)
    states = [AgentState(j, [x.copy() for x in w], 0) for j in range(4)]
    spec = RoundSpec(mu=0.1, batch_size=4, consensus_steps=0)
    new, tel = run_round(arch, states, ds, parts, spec, "drt", base, topo)
    ps = [s.params for s in new]
    assert network_disagreement(ps, centroid(ps, uniform_phi(4, 2))) > 0
    assert tel.tensors == []


def test_round_records_tensors_with_global_index():
    ds, arch, topo, base, parts, states = _setup()
    spec = RoundSpec(mu=0.05, batch_size=4, consensus_steps=3)
    _, tel = run_round(arch, states, ds, parts, spec, StrategyKind.DRT, base, topo, round_index=2, record_tensors=True)
    assert [t.iteration_index for t in tel.tensors] == [6, 7, 8]
    _, tel = run_round(arch, states, ds, parts, spec, "classical", base, topo, round_index=1, record_tensors=True)
    np.testing.assert_array_equal(tel.tensors[0].layer(1), base.matrix)
    assert len(tel.agent_losses) == 4


def test_frozen_weights_repeat_one_tensor():
    ds, arch, topo, base, parts, states = _setup()
    spec = RoundSpec(mu=0.05, batch_size=4, consensus_steps=3, freeze_weights_within_round=True)
    _, tel = run_round(arch, states, ds, parts, spec, "drt", base, topo, record_tensors=True)
    np.testing.assert_array_equal(tel.tensors[0].per_layer, tel.tensors[2].per_layer)
    spec = RoundSpec(mu=0.05, batch_size=4, consensus_steps=3)
    _, tel = run_round(arch, states, ds, parts, spec, "drt", base, topo, record_tensors=True)
    assert not np.array_equal(tel.tensors[0].per_layer, tel.tensors[2].per_layer)


@pytest.mark.parametrize("kind", ["classical", "drt"])
def test_round_is_deterministic_and_thread_independent(kind):
    ds, arch, topo, base, parts, states = _setup()
    spec = RoundSpec(mu=0.05, batch_size=4)
    a, _ = run_round(arch, states, ds, parts, spec, kind, base, topo, round_index=3)
    b, _ = run_round(arch, states, ds, parts, spec, kind, base, topo, round_index=3)
    c, _ = run_round(arch, states, ds, parts, spec, kind, base, topo, round_index=3, threads=4)
    for x, y, z in zip(a, b, c):
        for p in range(2):
            np.testing.assert_array_equal(x.params[p], y.params[p])
            np.testing.assert_array_equal(x.params[p], z.params[p])


def test_fixed_point_identical_for_both_strategies():
    ds, arch, topo, base, parts, _ = _setup()
    w = init_params(arch, 0)
    states = [AgentState(j, [x.copy() for x in w], 0) for j in range(4)]
    spec = RoundSpec(mu=0.0, batch_size=4)
    a, _ = run_round(arch, states, ds, parts, spec, "classical", base, topo)
    b, _ = run_round(arch, states, ds, parts, spec, "drt", base, topo)
    for x, y in zip(a, b):
        for p in range(2):
            np.testing.assert_allclose(x.params[p], w[p], atol=1e-12)
            np.testing.assert_allclose(y.params[p], w[p], atol=1e-12)


def test_local_steps_default_is_one_epoch():
    assert RoundSpec(mu=0.1, batch_size=16).steps_for(70) == 5
    assert RoundSpec(mu=0.1, batch_size=16, local_steps=2).steps_for(70) == 2


def test_round_spec_validation():
    with pytest.raises(ContractViolation):
        RoundSpec(mu=-0.1)
    with pytest.raises(ContractViolation):
        RoundSpec(mu=0.1, batch_size=0)


def test_agent_rng_keyed_on_round():
    s = AgentState(2, [], master_seed=5)
    assert s.rng(1).integers(1 << 30) == s.rng(1).integers(1 << 30)
    assert s.rng(1).integers(1 << 30) != s.rng(2).integers(1 << 30)
