"""Vector fields, chart maps, derived channels, and predicted limits."""

from __future__ import annotations

import math

import numpy as np
import pytest

from chemostat_cep import (
    ChartError,
    ChemostatParams,
    DomainError,
    Monod,
    ParameterError,
    State,
    TransformedState,
    derive_channels,
    from_transformed,
    mass_closed_form,
    order_species,
    predicted_limit,
    rhs_original,
    rhs_transformed,
    simulate,
    to_transformed,
)
from chemostat_cep.dynamics import vector_field

from conftest import CANONICAL_SPECIES, LAM

PARAMS = ChemostatParams(d=1.0, s_in=10.0)
GROWTHS = [g for _, g in CANONICAL_SPECIES]


def _random_positive_states(n_species, count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        s = float(rng.uniform(0.01, 12.0))
        x = rng.uniform(0.01, 5.0, size=n_species)
        yield State(s=s, x=x)


class TestOriginalField:
    def test_washout_equilibrium(self):
        ds, dx = rhs_original(PARAMS, GROWTHS, State(s=10.0, x=np.zeros(3)))
        assert ds == 0.0
        np.testing.assert_array_equal(dx, np.zeros(3))

    def test_single_species_equilibrium(self):
        # (lambda_1, s_in - lambda_1) is a rest point of the one-species model
        g = Monod(3.0, 1.0)
        ds, dx = rhs_original(PARAMS, [g], State(s=0.5, x=np.array([9.5])))
        assert abs(ds) < 1e-14
        assert abs(dx[0]) < 1e-14

    def test_direct_evaluation(self):
        state = State(s=10.0, x=np.ones(3))
        ds, dx = rhs_original(PARAMS, GROWTHS, state)
        mus = np.array([g(10.0) for g in GROWTHS])
        assert ds == pytest.approx(-float(mus.sum()), rel=1e-14)
        np.testing.assert_allclose(dx, mus - 1.0, rtol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            rhs_original(PARAMS, GROWTHS, State(s=1.0, x=np.ones(2)))

    def test_state_rejects_negative_components(self):
        with pytest.raises(DomainError):
            State(s=-1.0, x=np.ones(2))
        with pytest.raises(DomainError):
            State(s=1.0, x=np.array([1.0, -0.5]))


class TestTransformedField:
    def test_single_species_proportion_frozen(self):
        t = TransformedState(s=2.0, b=1.5, p=np.array([1.0]))
        _, _, dp = rhs_transformed(PARAMS, [Monod(3, 1)], t)
        assert dp[0] == 0.0

    def test_identical_species_keep_proportions(self):
        g = Monod(3, 1)
        t = TransformedState(s=2.0, b=1.5, p=np.array([0.5, 0.5]))
        _, _, dp = rhs_transformed(PARAMS, [g, g], t)
        np.testing.assert_array_equal(dp, np.zeros(2))

    def test_proportion_derivatives_sum_to_zero(self):
        for state in _random_positive_states(3, 50, seed=7):
            t = to_transformed(state)
            _, _, dp = rhs_transformed(PARAMS, GROWTHS, t)
            assert abs(float(np.sum(dp))) <= 1e-13

    def test_chart_consistency(self):
        # pushing the original field through the chart differential must
        # reproduce the transformed field
        for state in _random_positive_states(3, 100, seed=11):
            ds, dx = rhs_original(PARAMS, GROWTHS, state)
            b = float(np.sum(state.x))
            db = float(np.sum(dx))
            dp = dx / b - state.x * db / b**2
            t = to_transformed(state)
            ds2, db2, dp2 = rhs_transformed(PARAMS, GROWTHS, t)
            assert ds2 == pytest.approx(ds, rel=1e-10, abs=1e-12)
            assert db2 == pytest.approx(db, rel=1e-10, abs=1e-12)
            np.testing.assert_allclose(dp2, dp, rtol=1e-10, atol=1e-12)

    def test_mass_identity(self):
        # ds + sum(dx) collapses to the linear mass balance algebraically
        for state in _random_positive_states(3, 50, seed=13):
            ds, dx = rhs_original(PARAMS, GROWTHS, state)
            m = state.s + float(np.sum(state.x))
            assert ds + float(np.sum(dx)) == pytest.approx(
                PARAMS.d * (PARAMS.s_in - m), rel=1e-13, abs=1e-13
            )


class TestChartMaps:
    def test_symmetric_pair(self):
        t = to_transformed(State(s=1.0, x=np.array([2.0, 2.0])))
        assert t.b == 4.0
        np.testing.assert_array_equal(t.p, [0.5, 0.5])

    def test_round_trip(self):
        for state in _random_positive_states(4, 50, seed=17):
            back = from_transformed(to_transformed(state))
            assert back.s == state.s
            np.testing.assert_allclose(back.x, state.x, rtol=1e-14)

    def test_zero_biomass_rejected(self):
        with pytest.raises(ChartError):
            to_transformed(State(s=1.0, x=np.zeros(2)))
        with pytest.raises(ChartError):
            TransformedState(s=1.0, b=0.0, p=np.array([1.0]))

    def test_simplex_enforced(self):
        with pytest.raises(ChartError):
            TransformedState(s=1.0, b=1.0, p=np.array([0.6, 0.6]))


class TestDerivedChannels:
    def test_mass_and_ratios(self):
        ch = derive_channels(State(s=1.0, x=np.array([2.0, 4.0, 1.0])))
        assert ch.m == 8.0
        np.testing.assert_allclose(ch.r, [2.0, 0.5])

    def test_ratios_undefined_without_lead_species(self):
        ch = derive_channels(State(s=1.0, x=np.array([0.0, 4.0])))
        assert ch.r is None


class TestPredictedLimit:
    def test_canonical(self, canonical_ordered):
        lim = predicted_limit(PARAMS, canonical_ordered)
        assert lim.s == pytest.approx(LAM[0], abs=1e-10)
        np.testing.assert_allclose(lim.x, [9.5, 0.0, 0.0], atol=1e-10)

    def test_washout(self):
        ordered = order_species(CANONICAL_SPECIES, 1.0)
        lim = predicted_limit(ChemostatParams(d=1.0, s_in=0.4), ordered)
        assert lim.s == 0.4
        np.testing.assert_array_equal(lim.x, np.zeros(3))

    def test_minimal_pack_shares_the_biomass(self):
        ordered = order_species(
            [("u", Monod(3, 1)), ("v", Monod(3, 1)), ("w", Monod(4, 2))], 1.0
        )
        lim = predicted_limit(PARAMS, ordered)
        assert lim.x[0] == pytest.approx(lim.x[1])
        assert lim.x[0] + lim.x[1] == pytest.approx(10.0 - 0.5, abs=1e-9)
        assert lim.x[2] == 0.0


class TestMassClosedForm:
    def test_equilibrium_start(self):
        assert mass_closed_form(10.0, PARAMS, 5.0) == 10.0

    def test_initial_condition(self):
        assert mass_closed_form(3.0, PARAMS, 0.0) == 3.0

    def test_half_life(self):
        assert mass_closed_form(0.0, PARAMS, math.log(2.0)) == pytest.approx(5.0, rel=1e-15)

    def test_vectorized(self):
        t = np.array([0.0, 1.0, 2.0])
        out = mass_closed_form(4.0, PARAMS, t)
        np.testing.assert_allclose(out, 10.0 - 6.0 * np.exp(-t))


class TestLogRatioLaw:
    def test_against_finite_differences(self):
        # d/dt log r_i = mu_i(s) - mu_1(s) along a simulated trajectory
        traj = simulate(
            PARAMS,
            GROWTHS,
            State(s=10.0, x=np.array([0.01, 0.01, 0.01])),
            20.0,
            rel_tol=1e-10,
            abs_tol=1e-12,
        )
        h = 1e-4
        for t in (1.0, 3.0, 7.5, 15.0):
            fwd = derive_channels(traj.sample(t + h))
            bwd = derive_channels(traj.sample(t - h))
            fd = (np.log(fwd.r) - np.log(bwd.r)) / (2 * h)
            s_mid = traj.sample(t).s
            expected = np.array([g(s_mid) - GROWTHS[0](s_mid) for g in GROWTHS[1:]])
            np.testing.assert_allclose(fd, expected, atol=5e-6)

    def test_vector_field_clamps_substrate(self):
        f = vector_field(PARAMS, GROWTHS)
        dy = f(0.0, np.array([-1e-12, 1.0, 1.0, 1.0]))
        assert np.all(np.isfinite(dy))
