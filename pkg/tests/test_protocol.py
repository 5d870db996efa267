import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcconsensus.constraints import Ball, ConstraintSet
from vcconsensus.errors import (
    BufferUnderflow,
    FloorConflict,
    GainOutOfRange,
    PolicyViolation,
    StepError,
)
from vcconsensus.graphs import GraphSnapshot, PeriodicSchedule
from vcconsensus.protocol import (
    DelayBuffer,
    World,
    blend,
    consensus_diameter,
    consensus_term,
    consensus_terms,
    control_input,
    design_initial_gains,
    initial_world,
    normalize_weights,
    simulate,
    step,
    update_gain,
)

from .conftest import RANDOM_SEEDS, ring_case, random_case


def ring_reach(d):
    c, s = d
    box = min(0.5 / abs(c) if c else math.inf, 1.5 / s) if s > 0 else 0.0
    return max(1.0, box)


def naive_ring_simulation(x0, horizon, p0=1.5, T=0.2):
    """Plain-loop re-implementation of the ring example, closed-form reach."""
    n = 4
    ring = [(0, 1, 1), (1, 2, 2), (2, 3, 3), (3, 0, 3)]
    hist = [[list(x) for x in x0]] * 4  # hist[-1 - age]
    x = [list(p) for p in x0]
    v = [[0.0, 0.0] for _ in range(n)]
    p = [p0] * n
    xs = [np.array(x)]
    for k in range(horizon):
        src, dst, tau = ring[k % 4]
        u, b = [], []
        for i in range(n):
            pi = [0.0, 0.0]
            if i == dst:
                xj = hist[-1 - tau][src]
                pi = [0.5 * (xj[a] - x[i][a]) * T for a in range(2)]
            w = [v[i][a] - p[i] * v[i][a] * T + pi[a] for a in range(2)]
            nw = math.hypot(*w)
            e = 1.0
            if nw > 0:
                beta = ring_reach((w[0] / nw, w[1] / nw))
                if nw > beta:
                    e = beta / nw
            u.append([e * w[0], e * w[1]])
            b.append((1 - e * (1 - p[i] * T)) / T)
        x = [[x[i][a] + v[i][a] * T for a in range(2)] for i in range(n)]
        v = u
        p = b
        hist = hist[1:] + [x]
        xs.append(np.array(x))
    return np.array(xs)


# ---------------------------------------------------------------- gains

def test_initial_gains_ring_example():
    p0, d = design_initial_gains(0.2, [1.5] * 4)
    np.testing.assert_array_equal(p0, 1.5)
    np.testing.assert_allclose(d, 0.55125, rtol=1e-15)


def test_initial_gains_unit_period():
    _, d = design_initial_gains(1.0, [0.5])
    assert d[0] == pytest.approx(0.06125, rel=1e-15)


def test_initial_gains_out_of_range():
    with pytest.raises(GainOutOfRange):
        design_initial_gains(0.2, [5.1])
    with pytest.raises(GainOutOfRange):
        design_initial_gains(0.2, [0.0])


def test_update_gain_default_and_fixed_point():
    assert update_gain(1.5, 3.25, 0.2) == 3.25
    assert update_gain(1.5, 1.5, 0.2) == 1.5


def test_update_gain_rejects_bad_policy():
    with pytest.raises(PolicyViolation):
        update_gain(1.5, 3.25, 0.2, lambda p, b, T: b - 0.1)
    with pytest.raises(PolicyViolation):
        update_gain(1.5, 3.25, 0.2, lambda p, b, T: 1 / T)


def test_blend_policy_stays_in_bracket():
    pol = blend(0.5)
    assert update_gain(1.5, 3.0, 0.2, pol) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        blend(1.0)


# ---------------------------------------------------------------- weights

def test_normalize_leaves_ring_alone(ring):
    g = ring.snapshot(0)
    assert normalize_weights(g, [0.55] * 4) is g


def test_normalize_scales_heavy_row():
    g = GraphSnapshot.from_edges(3, [(1, 0, 0.5, 0), (2, 0, 0.5, 0)])
    out = normalize_weights(g, [0.55] * 3)
    np.testing.assert_allclose(out.weights[0], [0, 0.275, 0.275])
    assert out.weights.sum(axis=1)[0] == pytest.approx(0.55)


def test_normalize_empty_row():
    g = GraphSnapshot.empty(2)
    assert normalize_weights(g, [0.1, 0.1]) is g


def test_normalize_floor_conflict():
    g = GraphSnapshot.from_edges(3, [(1, 0, 0.5, 0), (2, 0, 0.5, 0)])
    with pytest.raises(FloorConflict):
        normalize_weights(g, [0.55] * 3, mu_c=0.3)


# ---------------------------------------------------------------- consensus term

def test_consensus_term_no_edges():
    buf = DelayBuffer(2, np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(consensus_term(0, GraphSnapshot.empty(2), buf, 0.2), [0, 0])


def test_consensus_term_single_edge():
    buf = DelayBuffer(3, np.array([[0.0, 0.0], [2.0, 0.0]]))
    g = GraphSnapshot.from_edges(2, [(1, 0, 0.5, 0)])
    np.testing.assert_allclose(consensus_term(0, g, buf, 0.2), [0.2, 0.0], atol=1e-15)
    g3 = GraphSnapshot.from_edges(2, [(1, 0, 0.5, 3)])
    np.testing.assert_allclose(consensus_term(0, g3, buf, 0.2), [0.2, 0.0], atol=1e-15)


def test_consensus_term_uses_delayed_neighbor_current_self():
    buf = DelayBuffer(2, np.zeros((2, 1)))
    buf.push(np.array([[1.0], [10.0]]))
    buf.push(np.array([[2.0], [20.0]]))
    g = GraphSnapshot.from_edges(2, [(1, 0, 1.0, 2)])
    # x_1 two steps ago is 0, x_0 now is 2
    assert consensus_term(0, g, buf, 1.0)[0] == pytest.approx(-2.0)


def test_buffer_underflow():
    buf = DelayBuffer(1, np.zeros((2, 1)))
    with pytest.raises(BufferUnderflow):
        buf.at(2)
    with pytest.raises(BufferUnderflow):
        consensus_terms(GraphSnapshot.from_edges(2, [(1, 0, 1.0, 2)]), buf, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 7), st.integers(0, 4), st.integers(1, 3), st.integers(0, 2**31))
def test_vectorised_terms_match_reference(n, M, r, seed):
    rng = np.random.default_rng(seed)
    buf = DelayBuffer(M, rng.normal(size=(n, r)))
    for _ in range(M):
        buf.push(rng.normal(size=(n, r)))
    w = rng.uniform(0.1, 1, (n, n)) * (rng.random((n, n)) < 0.5)
    np.fill_diagonal(w, 0)
    g = GraphSnapshot(w, rng.integers(0, M + 1, (n, n)))
    ref = np.array([consensus_term(i, g, buf, 0.3) for i in range(n)])
    np.testing.assert_allclose(consensus_terms(g, buf, 0.3), ref, atol=1e-12)


# ---------------------------------------------------------------- control

def test_control_zero_raw_vector(vset):
    u, e, b = control_input(np.zeros(2), 1.5, np.zeros(2), vset, 0.2)
    assert not u.any() and e == 1.0 and b == 1.5


def test_control_identity_branch(vset):
    u, e, b = control_input(np.zeros(2), 1.5, np.array([0.0, 1.2]), vset, 0.2)
    np.testing.assert_array_equal(u, [0.0, 1.2])
    assert e == 1.0 and b == 1.5


def test_control_truncation_gain(vset):
    u, e, b = control_input(np.zeros(2), 1.5, np.array([0.0, 3.0]), vset, 0.2)
    np.testing.assert_allclose(u, [0.0, 1.5], atol=1e-12)
    assert e == pytest.approx(0.5, abs=1e-12)
    assert b == pytest.approx(3.25, abs=1e-12)


# ---------------------------------------------------------------- stepping

def _single_world(x, v, p, M=0):
    return World(0, np.array([x], float), np.array([v], float), np.array([p], float),
                 DelayBuffer(M, np.array([x], float)))


def test_step_consensus_fixed_point(vset, ring):
    x = np.ones((4, 2))
    world = World(0, x, np.zeros((4, 2)), np.full(4, 1.5), DelayBuffer(3, x))
    for k in range(8):
        world, e, b = step(world, ring.snapshot(k), [vset] * 4, 0.2)
    np.testing.assert_array_equal(world.x, x)
    assert not world.v.any() and np.all(world.p == 1.5)


def test_step_single_agent():
    ball = ConstraintSet(Ball(1.0), 2)
    world = _single_world([0.3, -0.1], [1.0, 0.0], 1.5)
    nxt, e, b = step(world, GraphSnapshot.empty(1), [ball], 0.2)
    np.testing.assert_allclose(nxt.v, [[0.7, 0.0]], atol=1e-15)
    np.testing.assert_allclose(nxt.x, [[0.5, -0.1]], atol=1e-15)
    assert e[0] == 1.0 and b[0] == 1.5


def test_initial_velocity_is_clamped(vset):
    w = initial_world(np.zeros((1, 2)), np.array([[0.0, 3.0]]), [vset], np.array([1.5]), 0)
    np.testing.assert_allclose(w.v, [[0.0, 1.5]], atol=1e-12)


def test_horizon_zero(ring, vset):
    tr = simulate(np.eye(4, 2), np.zeros((4, 2)), [vset] * 4, 1.5, ring, 0.2, 0)
    assert tr.horizon == 0 and tr.x.shape == (1, 4, 2)


def test_step_error_carries_index(vset):
    g_bad = GraphSnapshot.from_edges(2, [(1, 0, 0.5, 5)])
    sch = PeriodicSchedule([GraphSnapshot.empty(2), g_bad], eta=2, mu_c=0.5, max_delay=1)
    with pytest.raises(StepError) as info:
        simulate(np.zeros((2, 1)), np.zeros((2, 1)), [ConstraintSet(Ball(1.0), 1)] * 2, 1.5,
                 sch, 0.2, 10)
    assert info.value.step == 1


def test_mirror_symmetry():
    ball = ConstraintSet(Ball(0.3), 2)
    g = GraphSnapshot.from_edges(2, [(0, 1, 0.4, 1), (1, 0, 0.4, 1)])
    sch = PeriodicSchedule([g], eta=1, mu_c=0.4, max_delay=1)
    x0 = np.array([[1.0, 2.0], [-1.0, -2.0]])
    v0 = np.array([[0.1, 0.0], [-0.1, 0.0]])
    tr = simulate(x0, v0, [ball, ball], 1.5, sch, 0.2, 300)
    np.testing.assert_allclose(tr.x[:, 0], -tr.x[:, 1], atol=1e-13)
    np.testing.assert_allclose(tr.v[:, 0], -tr.v[:, 1], atol=1e-13)


def test_deterministic(ring, vset):
    x0 = np.random.default_rng(3).uniform(-5, 5, (4, 2))
    a = simulate(x0, np.zeros((4, 2)), [vset] * 4, 1.5, ring, 0.2, 200)
    b = simulate(x0, np.zeros((4, 2)), [vset] * 4, 1.5, ring, 0.2, 200)
    assert a.x.tobytes() == b.x.tobytes() and a.v.tobytes() == b.v.tobytes()


def test_ring_matches_naive_reimplementation():
    cfg, traj, _ = ring_case(0)
    ref = naive_ring_simulation(cfg.positions, cfg.horizon)
    np.testing.assert_allclose(traj.x, ref, atol=1e-10)


def test_diameter_definition():
    x = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 3.0]])
    c = x.mean(axis=0)
    assert consensus_diameter(x) == pytest.approx(max(np.linalg.norm(x - c, axis=1)))


# ---------------------------------------------------------------- invariants

def _check_invariants(cfg, traj):
    n = traj.n
    for k in range(traj.horizon + 1):
        for i in range(n):
            assert cfg.agent_sets[i].contains(traj.v[k, i])
    T = traj.T
    p, b = traj.p, traj.b
    assert np.all(p * T > 0)
    assert np.all(p <= b)
    assert np.all(b[:-1] <= p[1:])
    assert np.all(b * T < 1)
    assert np.all(p**2 > 4 * traj.d)
    assert np.all((traj.e > 0) & (traj.e <= 1))


def test_ring_runs_are_feasible(ring_runs):
    for cfg, traj, _ in ring_runs:
        _check_invariants(cfg, traj)
        assert traj.feasibility_violations == 0 and traj.gain_violations == 0


@pytest.mark.parametrize("seed", RANDOM_SEEDS[:8])
def test_random_runs_are_feasible(seed):
    cfg, traj, _ = random_case(seed)
    _check_invariants(cfg, traj)


def test_ring_reaches_consensus(ring_runs):
    for _, traj, _ in ring_runs:
        assert traj.diameter[-1] < 1e-3
        assert np.abs(traj.v[-1]).max() < 1e-2
