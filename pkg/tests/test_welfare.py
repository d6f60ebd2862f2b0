import os
import unittest
import numpy as np
from unittest import mock
from pyfpa.welfare import *
from pyfpa.model import AuctionInstance, BidStrategy, UniformDistribution, PiecewiseDistribution, PowerDistribution
from pyfpa.equilibrium import EquilibriumSolution, ShootingOptions, solve, solve_asymmetric_two, solve_symmetric
from pyfpa.numerics import BracketError

U01 = UniformDistribution(0.0, 1.0)
U02 = UniformDistribution(0.0, 2.0)

def linear(dist, slope):
    return BidStrategy([ dist.lo, dist.hi ], [ slope*dist.lo, slope*dist.hi ])

class TestOptimalWelfare(unittest.TestCase):
    def test_two_uniform(self):
        self.assertAlmostEqual(optimal_welfare(AuctionInstance([ U01, U01 ])), 2.0/3.0, delta=1e-9)

    def test_asymmetric_uniform(self):
        self.assertAlmostEqual(optimal_welfare(AuctionInstance([ U01, U02 ])), 13.0/12.0, delta=1e-9)

    def test_narrow(self):
        narrow = PiecewiseDistribution([ [ 0.99, 0.0 ], [ 1.0, 1.0 ] ])
        self.assertAlmostEqual(optimal_welfare(AuctionInstance([ narrow, narrow ])), 1.0, delta=0.01)

    def test_monte_carlo(self):
        value = optimal_welfare(AuctionInstance([ U01, U02 ]), method="monte-carlo", seed=3, samples=10**5)
        self.assertAlmostEqual(value, 13.0/12.0, delta=0.01)

    def test_monte_carlo_needs_seed(self):
        with self.assertRaises(ValueError):
            optimal_welfare(AuctionInstance([ U01, U01 ]), method="monte-carlo")

    def test_unknown_method(self):
        with self.assertRaises(ValueError):
            optimal_welfare(AuctionInstance([ U01, U01 ]), method="simulation")


class TestEquilibriumWelfare(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.asymmetric = AuctionInstance([ U01, U02 ])
        cls.solution = solve_asymmetric_two(U01, U02)

    def test_symmetric_is_efficient(self):
        inst = AuctionInstance([ U01, U01 ])
        est = equilibrium_welfare(inst, solve_symmetric(U01, 2, knots=256).strategies)
        self.assertAlmostEqual(est.ratio, 1.0, delta=1e-6)
        self.assertEqual(est.ci_halfwidth, 0.0)
        self.assertEqual(est.method, "quadrature")

    def test_zero_bids_go_to_first_bidder(self):
        inst = AuctionInstance([ U01, U01 ])
        zero = [ linear(U01, 0.0) ]*2
        self.assertAlmostEqual(equilibrium_welfare(inst, zero).welf, 0.5, delta=1e-6)
        est = equilibrium_welfare(inst, zero, method="monte-carlo", seed=9, samples=10**5)
        self.assertLess(abs(est.welf - 0.5), 4*est.ci_halfwidth)

    def test_asymmetric_ratio(self):
        est = equilibrium_welfare(self.asymmetric, self.solution.strategies)
        self.assertGreaterEqual(est.ratio, 0.743)
        self.assertLessEqual(est.ratio, 1.0)
        self.assertLess(est.welf, est.opt)

    def test_methods_agree(self):
        quad = equilibrium_welfare(self.asymmetric, self.solution.strategies)
        mc = equilibrium_welfare(self.asymmetric, self.solution.strategies, method="monte-carlo", seed=1, samples=10**5)
        self.assertLess(abs(quad.welf - mc.welf), 4*mc.ci_halfwidth/1.96)
        self.assertEqual(mc.samples, 10**5)

    def test_json(self):
        data = WelfareEstimate(welf=0.5, opt=1.0, method="quadrature").to_json()
        self.assertEqual(data["ratio"], 0.5)
        self.assertEqual(data["ci"], 0.0)

    def test_audit(self):
        report = audit_lemmas(self.asymmetric, self.solution, seed=17, samples=10**5)
        self.assertEqual(report.violations, 0, msg=str(report.to_json()))
        self.assertGreater(report.lemmas["lemma_b"].checks, 0)
        self.assertGreater(report.lemmas["lemma_c"].checks, 0)


class TestDecomposition(unittest.TestCase):
    def test_symmetric(self):
        inst = AuctionInstance([ U01, U01 ])
        strategies = [ linear(U01, 0.5) ]*2
        lhs, rhs, se = decomposition_terms(inst, strategies, seed=5, samples=10**5)
        self.assertLess(abs(lhs - rhs), 4*se)
        self.assertAlmostEqual(lhs, 2.0/3.0, delta=0.01)
        self.assertAlmostEqual(rhs, 2.0/3.0, delta=0.01)

    def test_non_equilibrium(self):
        inst = AuctionInstance([ U01, U02 ])
        strategies = [ linear(U01, 0.9), linear(U02, 0.3) ]
        lhs, rhs, se = decomposition_terms(inst, strategies, seed=6, samples=10**5)
        self.assertLess(abs(lhs - rhs), 4*se)

    def test_deterministic(self):
        inst = AuctionInstance([ U01, U02 ])
        strategies = [ linear(U01, 0.6), linear(U02, 0.4) ]
        self.assertEqual(decomposition_check(inst, strategies, 8, 10**4), decomposition_check(inst, strategies, 8, 10**4))

    def test_shrinks_with_samples(self):
        inst = AuctionInstance([ U01, U02 ])
        strategies = [ linear(U01, 0.6), linear(U02, 0.4) ]
        _, _, small = decomposition_terms(inst, strategies, 2, 10**4)
        _, _, large = decomposition_terms(inst, strategies, 2, 10**6)
        self.assertAlmostEqual(small/large, 10.0, delta=1.0)


class TestGamma(unittest.TestCase):
    def test_values(self):
        inst = AuctionInstance([ U01, U01 ])
        self.assertEqual(gamma(inst, 0, 0.0), 0.0)
        self.assertEqual(gamma(inst, 0, 1.0), 1.0)
        self.assertAlmostEqual(gamma(inst, 1, 0.5), 0.25)

    def test_range(self):
        with self.assertRaises(ValueError):
            gamma(AuctionInstance([ U01, U01 ]), 0, 1.5)

    def test_total_is_optimal_welfare(self):
        for inst in [ AuctionInstance([ U01, U02 ]),
                      AuctionInstance([ PowerDistribution(2.0, 1.0), U01, U01 ]),
                      AuctionInstance([ PiecewiseDistribution([ [ 0.0, 0.0 ], [ 0.5, 0.8 ], [ 1.0, 1.0 ] ]), UniformDistribution(0.0, 1.5) ]) ]:
            self.assertAlmostEqual(gamma_total(inst), optimal_welfare(inst), delta=1e-6)


class TestAudit(unittest.TestCase):
    def setUp(self):
        self.inst = AuctionInstance([ U01, U01 ])

    def test_exact_equilibrium(self):
        solution = EquilibriumSolution([ linear(U01, 0.5) ]*2, 0.0)
        report = audit_lemmas(self.inst, solution, seed=4, samples=10**5)
        self.assertTrue(report.passed(), msg=str(report.to_json()))
        self.assertGreater(report.lemmas["lemma_a"].checks, 0)
        self.assertGreater(report.lemmas["lemma_d_old"].checks, 0)
        self.assertGreater(report.lemmas["lemma_d_new"].checks, 0)

    def test_corrupted_strategy(self):
        honest = linear(U01, 0.5)
        solution = EquilibriumSolution([ honest.shifted(0.2), honest ], 0.0)
        report = audit_lemmas(self.inst, solution, seed=4, samples=10**4)
        self.assertGreater(report.lemmas["lemma_a"].violations, 0)
        self.assertLess(report.lemmas["lemma_a"].worst_margin, -0.1)

    def test_corrupted_strategy_reaches_every_lemma(self):
        honest = linear(U01, 0.5)
        solution = EquilibriumSolution([ honest.shifted(0.2), honest ], 0.0)
        report = audit_lemmas(self.inst, solution, seed=4, samples=10**4)
        self.assertGreater(report.lemmas["lemma_c"].checks, 0)
        self.assertFalse(report.passed())

    @mock.patch("pyfpa.welfare.threshold_quantile", side_effect=BracketError("no sign change"))
    def test_unbracketed_thresholds_are_skipped(self, _threshold_quantile):
        solution = EquilibriumSolution([ linear(U01, 0.5) ]*2, 0.0)
        report = audit_lemmas(self.inst, solution, seed=4, samples=10**4)
        self.assertEqual(report.lemmas["lemma_c"].checks, 0)
        self.assertGreater(report.lemmas["lemma_a"].checks, 0)

    def test_report_keys(self):
        solution = EquilibriumSolution([ linear(U01, 0.5) ]*2, 1e-5)
        data = audit_lemmas(self.inst, solution, seed=4, samples=10**4, tol=1e-3).to_json()
        for key in [ "lemma_a", "lemma_b", "lemma_c", "lemma_d_old", "lemma_d_new", "seed", "slack", "residual", "samples", "tolerance" ]:
            self.assertIn(key, data)
        self.assertAlmostEqual(data["slack"], 1e-3 + 10*1e-5)
        self.assertEqual(data["seed"], 4)

    def test_lemma_check(self):
        check = LemmaCheck()
        check.record([], 0.1)
        self.assertIsNone(check.worst_margin)
        check.record([ 0.5, -0.05, -0.2 ], 0.1)
        self.assertEqual((check.checks, check.violations, check.worst_margin), (3, 1, -0.2))


class TestSuite(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.suite = load_suite()
        cls.solutions = { name : solve(inst) for (name, inst) in cls.suite }

    def test_load(self):
        self.assertEqual(len(self.suite), 7)
        names = [ name for (name, _) in self.suite ]
        self.assertEqual(names, sorted(names))
        kinds = set(d.kind for (_, inst) in self.suite for d in inst)
        self.assertEqual(kinds, { "uniform", "power", "piecewise" })

    def test_default_solutions(self):
        for (name, inst) in self.suite:
            solution = self.solutions[name]
            self.assertLess(solution.residual, ShootingOptions().residual_tol, msg=name)
            self.assertTrue(all(len(s.values) >= 2 for s in solution.strategies), msg=name)

    def test_welfare_guarantee(self):
        for (name, inst) in self.suite:
            ratio = equilibrium_welfare(inst, self.solutions[name].strategies).ratio
            self.assertGreaterEqual(ratio, 0.743, msg=name)
            self.assertLessEqual(ratio, 1.0 + 1e-9, msg=name)
            if inst.is_symmetric():
                self.assertAlmostEqual(ratio, 1.0, delta=1e-4, msg=name)

    def _audit_suite(self, samples):
        for (name, inst) in self.suite:
            report = audit_lemmas(inst, self.solutions[name], seed=1, samples=samples)
            self.assertEqual(report.violations, 0, msg="{}: {}".format(name, report.to_json()))
            self.assertGreater(report.lemmas["lemma_c"].checks, 0, msg=name)

    def test_audit(self):
        self._audit_suite(10**5)

    @unittest.skipUnless(os.environ.get("PYFPA_SLOW"), "set PYFPA_SLOW=1 for the full-size audit")
    def test_audit_full_size(self):
        self._audit_suite(DEFAULT_SAMPLES)
