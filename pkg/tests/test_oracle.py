import itertools
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rwre_ldp.environment import deterministic_law, kernel_d1, make_kernel, make_law, step_vectors
from rwre_ldp.errors import NotTransientRight, TooLarge
from rwre_ldp.oracle import (
    cramer_closed_form,
    exact_annealed_expectation,
    finite_n_lambda,
    independent_steps_expectation,
    path_weight,
    read_oracle_fixture,
    solomon_velocity,
)

FIXTURE = Path(__file__).parent / "fixtures" / "oracle_values.csv"
TWO_ATOM = make_law(1, [kernel_d1(0.3), kernel_d1(0.7)], [0.5, 0.5])


def brute_force(law, theta, n):
    vecs = step_vectors(law.d)
    return math.fsum(
        path_weight(law, p) * math.exp(float(vecs[list(p)].sum(0) @ np.atleast_1d(theta)))
        for p in itertools.product(range(2 * law.d), repeat=n))


def laws(d):
    k = st.lists(st.floats(0.02, 1.0), min_size=2 * d, max_size=2 * d).map(lambda v: np.array(v) / sum(v))
    return st.lists(k, min_size=1, max_size=3).map(lambda ks: make_law(d, ks))


class TestExact:
    def test_one_step(self):
        law = make_law(2, [[0.4, 0.2, 0.25, 0.15], [0.1, 0.3, 0.3, 0.3]])
        th = np.array([0.3, -0.7])
        want = law.mean_kernel() @ np.exp(step_vectors(2) @ th)
        assert exact_annealed_expectation(law, th, 1).value == pytest.approx(want, rel=1e-15)

    def test_hand_enumeration(self):
        v = exact_annealed_expectation(TWO_ATOM, 1.0, 2).value
        assert abs(v - (0.25 * math.e**2 + 0.5 + 0.25 * math.e**-2)) <= 1e-12
        assert abs(v - 2.3811) < 1e-4

    @pytest.mark.parametrize("n", [1, 5, 12, 16])
    def test_mass(self, n):
        assert abs(exact_annealed_expectation(TWO_ATOM, 0.0, n).value - 1) <= 1e-12

    @settings(max_examples=15, deadline=None)
    @given(st.integers(1, 2).flatmap(laws), st.integers(1, 5), st.floats(-1, 1))
    def test_against_brute_force(self, law, n, t):
        th = np.full(law.d, t)
        assert exact_annealed_expectation(law, th, n).value == pytest.approx(
            brute_force(law, th, n), rel=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(st.lists(st.floats(0.02, 1), min_size=4, max_size=4), st.integers(1, 7), st.floats(-1, 1))
    def test_single_atom_factorises(self, probs, n, t):
        k = make_kernel(np.array(probs) / sum(probs))
        th = np.array([t, -0.5 * t])
        one = k.probs @ np.exp(step_vectors(2) @ th)
        assert exact_annealed_expectation(deterministic_law(k), th, n).value == pytest.approx(one**n, rel=1e-12)

    def test_lower_bound(self):
        th = 0.8
        for n in (4, 9):
            v = exact_annealed_expectation(TWO_ATOM, th, n).value
            assert v >= (2 * TWO_ATOM.kappa * math.exp(-th)) ** n

    def test_cap(self):
        with pytest.raises(TooLarge):
            exact_annealed_expectation(TWO_ATOM, 0.5, 27)
        with pytest.raises(TooLarge):
            finite_n_lambda(TWO_ATOM, 0.5, [10, 30])

    def test_superposition(self):
        # revisits first appear at n = 3
        mean = TWO_ATOM.mean_kernel()
        for n in (1, 2):
            for p in itertools.product(range(2), repeat=n):
                assert path_weight(TWO_ATOM, p) == pytest.approx(np.prod(mean[list(p)]))
        diffs = {}
        for p in itertools.product(range(2), repeat=3):
            diffs[p] = path_weight(TWO_ATOM, p) - np.prod(mean[list(p)])
        # same exit twice from the origin: E[p^2] > E[p]^2; opposite exits: E[p(1-p)] < E[p]E[1-p]
        assert diffs[(0, 1, 0)] > 0 and diffs[(1, 0, 1)] > 0
        assert diffs[(0, 1, 1)] < 0 and diffs[(1, 0, 0)] < 0
        assert all(abs(v) < 1e-15 for k, v in diffs.items() if k[:2] not in ((0, 1), (1, 0)))
        law = make_law(1, [kernel_d1(0.6), kernel_d1(0.9)])
        assert exact_annealed_expectation(law, 0.4, 2).value == pytest.approx(
            independent_steps_expectation(law, 0.4, 2), rel=1e-14)
        assert exact_annealed_expectation(law, 0.4, 3).value != pytest.approx(
            independent_steps_expectation(law, 0.4, 3), rel=1e-9)

    def test_fixture(self):
        known = {TWO_ATOM.fingerprint(): TWO_ATOM,
                 deterministic_law(kernel_d1(0.6)).fingerprint(): deterministic_law(kernel_d1(0.6)),
                 }
        planar = make_law(2, [[0.4, 0.2, 0.25, 0.15], [0.1, 0.3, 0.3, 0.3]], [0.5, 0.5])
        known[planar.fingerprint()] = planar
        rows = read_oracle_fixture(FIXTURE)
        assert len(rows) >= 10
        for r in rows:
            law = known[r["law_hash"]]
            assert exact_annealed_expectation(law, r["theta"], r["n"]).value == r["value"]


class TestFiniteN:
    def test_classical(self):
        fit = finite_n_lambda(deterministic_law(kernel_d1(0.6)), 0.5, [8, 10, 12, 14, 16])
        assert abs(fit.lam - 0.20851) <= 1e-3
        assert fit.residual < 1e-12

    def test_zero(self):
        lam, resid = finite_n_lambda(TWO_ATOM, 0.0, [8, 10, 12, 14])
        assert lam == 0.0 and resid == 0.0

    def test_two_atom_value(self):
        fit = finite_n_lambda(TWO_ATOM, 0.5, [8, 10, 12, 14, 16])
        assert fit.lam == pytest.approx(0.117242, abs=1e-6)
        assert fit.residual < 1e-4
        assert np.all(np.diff(fit.lambda_n) < 0)


class TestCramer:
    def test_p06(self):
        c = cramer_closed_form(kernel_d1(0.6), 0.5)
        assert c.lam == pytest.approx(0.20851, abs=1e-5)
        assert c.grad[0] == pytest.approx(0.6061, abs=1e-4)
        assert c.hessian[0, 0] == pytest.approx(0.6327, abs=1e-4)
        assert c.rate_fn(0.5) == pytest.approx(0.04985, abs=1e-5)
        assert c.rate_fn(0.5) == pytest.approx(0.75 * math.log(1.25) + 0.25 * math.log(0.625), rel=1e-14)

    def test_symmetric(self):
        c = cramer_closed_form(kernel_d1(0.5), 0.0)
        assert (c.lam, c.grad[0], c.hessian[0, 0]) == (0.0, 0.0, 1.0)

    def test_endpoints(self):
        r = cramer_closed_form(kernel_d1(0.6), 0.0).rate_fn
        assert r(1.0) == pytest.approx(-math.log(0.6)) and r(1.2) == math.inf

    @settings(max_examples=10, deadline=None)
    @given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8))
    def test_d2_legendre(self, a, b):
        k = make_kernel([0.4, 0.2, 0.25, 0.15])
        c = cramer_closed_form(k, [a, b])
        assert c.rate_fn(c.grad) == pytest.approx(np.array([a, b]) @ c.grad - c.lam, abs=1e-9)

    def test_finite_differences(self):
        k = make_kernel([0.4, 0.2, 0.25, 0.15])
        th, h = np.array([0.2, -0.3]), 1e-5
        c = cramer_closed_form(k, th)
        for i in range(2):
            e = np.eye(2)[i] * h
            fd = (cramer_closed_form(k, th + e).lam - cramer_closed_form(k, th - e).lam) / (2 * h)
            assert fd == pytest.approx(c.grad[i], abs=1e-8)


class TestSolomon:
    def test_examples(self):
        assert solomon_velocity(make_law(1, [kernel_d1(0.7), kernel_d1(0.8)])) == pytest.approx(0.49333, abs=1e-5)
        assert solomon_velocity(deterministic_law(kernel_d1(0.6))) == pytest.approx(0.2, abs=1e-15)
        assert solomon_velocity(make_law(1, [kernel_d1(0.85), kernel_d1(0.4)])) == pytest.approx(0.0880, abs=1e-4)

    def test_not_transient(self):
        with pytest.raises(NotTransientRight):
            solomon_velocity(TWO_ATOM)
