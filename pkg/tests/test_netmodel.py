import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eulerq.netmodel import (
    GridMisalignment,
    NetworkError,
    NetworkSpec,
    NodeSpec,
    NotFeedforward,
    NotMultiLayer,
    RoutingMatrix,
    Schedule,
    Unstable,
    check_grid,
    decompose_layers,
    erlang_c,
    mmm_mean,
    single_node,
    solve_traffic_equations,
    stationary_pmf,
    steady_state_means,
    tandem,
    validate_network,
)


def net(n, edges, lam=None, m=5, mu=1.0, horizon=10.0):
    lam = lam if lam is not None else [1.0] + [0.0] * (n - 1)
    nodes = tuple(NodeSpec.constant(mu, m, a) for a in lam)
    return NetworkSpec(nodes, RoutingMatrix(n, edges), horizon)


class TestValidation:
    def test_tandem_layers(self):
        s = validate_network(net(2, [(0, 1, 1.0)]))
        assert s.is_feedforward and s.is_multilayer
        assert s.layers == ((0,), (1,))

    def test_self_loop_is_cycle(self):
        s = validate_network(net(1, [(0, 0, 0.5)]))
        assert not s.is_feedforward
        assert s.layers is None

    def test_skip_edge_is_feedforward_not_multilayer(self):
        s = validate_network(net(3, [(0, 1, 0.4), (0, 2, 0.6), (1, 2, 0.5)]))
        assert s.is_feedforward
        assert not s.is_multilayer
        assert s.levels == ((0,), (1,), (2,))

    def test_constant_flag(self):
        sched = Schedule((0.0, 5.0), (2.0, 3.0))
        spec = NetworkSpec((NodeSpec(1.0, Schedule.constant(3), sched),), RoutingMatrix.empty(1), 10.0)
        assert not validate_network(spec).is_constant
        assert validate_network(single_node(1.0, 2)).is_constant

    def test_negative_rate_rejected(self):
        with pytest.raises(NetworkError):
            NodeSpec.constant(1.0, 2, -1.0)

    def test_zero_service_rate_rejected(self):
        with pytest.raises(NetworkError):
            NodeSpec.constant(0.0, 2, 1.0)

    def test_fractional_staffing_rejected(self):
        with pytest.raises(NetworkError):
            NodeSpec(1.0, Schedule.constant(2.5), Schedule.constant(1.0))

    def test_row_sum_above_one_rejected(self):
        with pytest.raises(NetworkError, match="sums to"):
            RoutingMatrix(2, [(0, 1, 0.7), (0, 0, 0.4)])

    def test_row_sum_tolerance(self):
        r = RoutingMatrix(3, [(0, 1, 0.5), (0, 2, 0.5 + 5e-13)])
        assert r.exit_prob[0] == 0.0

    def test_schedule_must_start_at_zero(self):
        with pytest.raises(NetworkError):
            Schedule((1.0,), (2.0,))

    def test_schedule_breakpoints_increasing(self):
        with pytest.raises(NetworkError):
            Schedule((0.0, 3.0, 3.0), (1.0, 2.0, 3.0))

    def test_breakpoint_beyond_horizon(self):
        with pytest.raises(NetworkError):
            NetworkSpec((NodeSpec(1.0, Schedule.constant(1), Schedule((0.0, 20.0), (1.0, 2.0))),), RoutingMatrix.empty(1), 10.0)

    def test_routing_dimension_mismatch(self):
        with pytest.raises(NetworkError):
            NetworkSpec((NodeSpec.constant(1.0, 1),), RoutingMatrix.empty(2), 1.0)


class TestLayers:
    def test_tandem_of_three(self):
        assert decompose_layers(tandem(1.0, [2, 2, 2])) == ((0,), (1,), (2,))

    def test_fan(self):
        spec = net(4, [(0, 1, 0.4), (0, 2, 0.4), (1, 3, 1.0), (2, 3, 1.0)])
        assert decompose_layers(spec) == ((0,), (1, 2), (3,))

    def test_skip_edge(self):
        with pytest.raises(NotMultiLayer):
            decompose_layers(net(3, [(0, 1, 0.5), (1, 2, 1.0), (0, 2, 0.5)]))

    def test_cycle(self):
        with pytest.raises(NotFeedforward):
            decompose_layers(net(2, [(0, 1, 1.0), (1, 0, 0.5)]))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 6), st.data())
    def test_layering_sound_on_random_dags(self, n, data):
        edges = []
        for i in range(n):
            for j in range(i + 1, n):
                if data.draw(st.booleans()):
                    edges.append((i, j, 1.0 / n))
        spec = net(n, edges)
        try:
            layers = decompose_layers(spec)
        except NotMultiLayer:
            # Exhaustive search: no assignment with sources in the first layer and
            # layer(j) = layer(i) + 1 on every edge.
            assert not _layering_exists(n, edges)
            return
        where = {i: k for k, layer in enumerate(layers) for i in layer}
        assert sorted(where) == list(range(n))
        assert all(where[j] == where[i] + 1 for i, j, _ in edges)


def _layering_exists(n, edges):
    import itertools

    sources = set(range(n)) - {j for _, j, _ in edges}
    for assign in itertools.product(range(n), repeat=n):
        if any(assign[i] != 0 for i in sources):
            continue
        if all(assign[j] == assign[i] + 1 for i, j, _ in edges):
            return True
    return False


class TestTraffic:
    def test_tandem(self):
        spec = net(2, [(0, 1, 1.0)], lam=[2.0, 0.0])
        np.testing.assert_allclose(solve_traffic_equations(spec), [2.0, 2.0])

    def test_split(self):
        spec = net(3, [(0, 1, 0.4), (0, 2, 0.6)], lam=[3.0, 0.0, 0.0])
        np.testing.assert_allclose(solve_traffic_equations(spec), [3.0, 1.2, 1.8])

    def test_two_inputs(self):
        spec = net(2, [(0, 1, 0.5)], lam=[1.0, 1.0])
        np.testing.assert_allclose(solve_traffic_equations(spec), [1.0, 1.5])

    def test_cycle_solved_linearly(self):
        spec = net(2, [(0, 1, 1.0), (1, 0, 0.5)], lam=[2.0, 0.0])
        np.testing.assert_allclose(solve_traffic_equations(spec), [4.0, 4.0])

    def test_closed_cycle_singular(self):
        spec = net(2, [(0, 1, 1.0), (1, 0, 1.0)], lam=[1.0, 0.0])
        with pytest.raises(NetworkError, match="singular"):
            solve_traffic_equations(spec)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 7), st.data())
    def test_residual(self, n, data):
        P = np.zeros((n, n))
        for i in range(n):
            w = np.array(data.draw(st.lists(st.floats(0, 1), min_size=n, max_size=n)))
            scale = data.draw(st.floats(0, 0.95))
            if w.sum() > 0:
                P[i] = w / w.sum() * scale
        lam = np.array(data.draw(st.lists(st.floats(0, 10), min_size=n, max_size=n)))
        spec = NetworkSpec(tuple(NodeSpec.constant(1.0, 1, a) for a in lam), RoutingMatrix.from_dense(P), 1.0)
        tot = solve_traffic_equations(spec)
        resid = np.abs(tot - lam - spec.routing.to_dense().T @ tot).max()
        assert resid <= 1e-10 * max(1.0, np.abs(tot).max())


def erlang_c_exact(m, rho):
    rho = Fraction(rho).limit_denominator(10**9)
    a = m * rho
    term = Fraction(1)
    head = Fraction(0)
    for k in range(m):
        head += term
        term = term * a / (k + 1)
    tail = term / (1 - rho)
    return tail / (head + tail)


class TestErlangC:
    def test_mm1(self):
        assert erlang_c(1, 0.5) == pytest.approx(0.5, abs=1e-15)

    def test_m2(self):
        assert erlang_c(2, 0.5) == pytest.approx(1 / 3, abs=1e-15)

    @pytest.mark.parametrize("m,rho", [(10, 0.8), (3, 0.2), (50, 0.95), (200, 0.8)])
    def test_against_rational_sum(self, m, rho):
        assert erlang_c(m, rho) == pytest.approx(float(erlang_c_exact(m, rho)), rel=1e-12)

    def test_large_m(self):
        c = erlang_c(100000, 0.999)
        assert 0.0 < c < 1.0

    @pytest.mark.parametrize("rho", [0.0, 1.0, 1.2, -0.1])
    def test_domain(self, rho):
        with pytest.raises(ValueError):
            erlang_c(3, rho)

    def test_monotone_in_rho(self):
        vals = [erlang_c(7, r) for r in np.linspace(0.05, 0.95, 19)]
        assert all(b > a for a, b in zip(vals, vals[1:]))


def brute_mean(m, rho, tail=1e-12):
    # Unnormalised birth-death weights, summed until the remaining tail is negligible.
    a = m * rho
    w, k, total, weighted = 1.0, 0, 1.0, 0.0
    while True:
        k += 1
        w *= a / min(k, m)
        total += w
        weighted += k * w
        if k > m and w / total < tail * (1 - rho):
            break
    return weighted / total


class TestMeans:
    def test_mm1(self):
        assert steady_state_means(single_node(0.5, 1)).system_mean == pytest.approx(1.0)

    def test_mm2(self):
        assert steady_state_means(single_node(1.0, 2)).system_mean == pytest.approx(4 / 3)

    def test_tandem_symmetry(self):
        sol = steady_state_means(tandem(2.0, [5, 5]))
        assert sol.system_mean == pytest.approx(2 * sol.node_means[0])
        assert sol.node_means[0] == pytest.approx(sol.node_means[1])

    @pytest.mark.parametrize("m", [1, 2, 5, 13, 30, 50])
    @pytest.mark.parametrize("rho", [0.1, 0.5, 0.8, 0.95])
    def test_against_birth_death_sum(self, m, rho):
        assert mmm_mean(m, rho) == pytest.approx(brute_mean(m, rho), rel=1e-8)

    def test_unstable(self):
        with pytest.raises(Unstable):
            steady_state_means(single_node(2.0, 2))

    def test_time_varying_rejected(self):
        spec = NetworkSpec((NodeSpec(1.0, Schedule.constant(3), Schedule((0.0, 5.0), (1.0, 2.0))),), RoutingMatrix.empty(1), 10.0)
        with pytest.raises(NetworkError):
            steady_state_means(spec)

    def test_stationary_pmf_mean(self):
        p = stationary_pmf(10, 0.8)
        assert p.sum() == pytest.approx(1.0)
        assert (np.arange(p.size) * p).sum() == pytest.approx(mmm_mean(10, 0.8), rel=1e-10)


class TestGrid:
    def test_aligned(self):
        assert check_grid(single_node(1.0, 2, horizon=10.0), 0.1) == 100

    def test_horizon_misaligned(self):
        with pytest.raises(GridMisalignment):
            check_grid(single_node(1.0, 2, horizon=10.0), 0.3)

    def test_breakpoint_misaligned(self):
        spec = NetworkSpec((NodeSpec(1.0, Schedule((0.0, 1.25), (1, 2)), Schedule.constant(1.0)),), RoutingMatrix.empty(1), 10.0)
        with pytest.raises(GridMisalignment):
            check_grid(spec, 0.5)
        assert check_grid(spec, 0.25) == 40


class TestSerialisation:
    def test_round_trip(self):
        spec = NetworkSpec(
            (
                NodeSpec(2.0, Schedule((0.0, 4.0), (3, 1)), Schedule((0.0, 2.0), (1.5, 0.0)), "a"),
                NodeSpec.constant(1.0, 2),
            ),
            RoutingMatrix(2, [(0, 1, 0.3)]),
            8.0,
        )
        back = NetworkSpec.from_dict(spec.to_dict())
        assert back.to_dict() == spec.to_dict()
        assert back.routing == spec.routing

    def test_bare_number_schedules(self):
        spec = NetworkSpec.from_dict({"nodes": [{"service_rate": 1, "staffing": 3, "external_rate": 2}], "routing": [], "horizon": 5})
        assert spec.servers()[0] == 3
        assert spec.arrival_rates()[0] == 2.0

    def test_malformed(self):
        with pytest.raises(NetworkError):
            NetworkSpec.from_dict({"nodes": [{"staffing": 1}], "horizon": 1})

    def test_schedule_integral(self):
        s = Schedule((0.0, 1.0), (1.0, 3.0))
        assert s.integral(0.5, 1.5) == pytest.approx(0.5 + 1.5)
        assert math.isclose(s.integral(0.0, 2.0), 4.0)
