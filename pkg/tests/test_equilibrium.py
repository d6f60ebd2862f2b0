import unittest
import numpy as np
from pyfpa.equilibrium import *
from pyfpa.model import (AuctionInstance, BidStrategy, UniformDistribution, PowerDistribution, PiecewiseDistribution,
                         InvalidInstanceError, bid_win_probability)
from unittest import mock

U01 = UniformDistribution(0.0, 1.0)
U02 = UniformDistribution(0.0, 2.0)

def linear(dist, slope):
    return BidStrategy([ dist.lo, dist.hi ], [ slope*dist.lo, slope*dist.hi ])

class TestSymmetric(unittest.TestCase):
    def test_two_uniform(self):
        sol = solve_symmetric(U01, 2)
        s = sol.strategies[0]
        self.assertLessEqual(np.max(np.abs(s.bids - s.values/2.0)), 1e-6)
        self.assertLess(sol.residual, 1e-4)
        self.assertEqual(s.bid(0.0), 0.0)
        self.assertEqual(len(sol.strategies), 2)

    def test_three_uniform(self):
        sol = solve_symmetric(U01, 3)
        s = sol.strategies[0]
        self.assertLessEqual(np.max(np.abs(s.bids - 2.0*s.values/3.0)), 1e-6)
        self.assertLess(sol.residual, 1e-4)

    def test_power(self):
        s = solve_symmetric(PowerDistribution(2.0, 1.0), 2).strategies[0]
        self.assertLessEqual(np.max(np.abs(s.bids - 2.0*s.values/3.0)), 1e-6)

    def test_more_bidders_bid_more(self):
        two = solve_symmetric(U01, 2, knots=128).strategies[0]
        three = solve_symmetric(U01, 3, knots=128).strategies[0]
        inner = np.linspace(0.05, 0.95, 19)
        self.assertTrue(np.all(three.bid(inner) > two.bid(inner)))

    def test_bottom_of_support(self):
        s = solve_symmetric(UniformDistribution(0.5, 1.5), 2, knots=64).strategies[0]
        self.assertEqual(s.bid(0.5), 0.5)
        self.assertAlmostEqual(s.bid(1.5), 1.0, delta=1e-9)

    def test_piecewise_default_knots(self):
        # F has a density jump at 0.5; b(v) = v - int_0^v F / F(v)
        dist = PiecewiseDistribution([ [ 0.0, 0.0 ], [ 0.5, 0.8 ], [ 1.0, 1.0 ] ])
        sol = solve_symmetric(dist, 2)
        s = sol.strategies[0]
        self.assertEqual(len(s.values), 1024)
        v = s.values
        above = v - (0.2 + 0.8*(v - 0.5) + 0.2*(v - 0.5)**2)/(0.8 + 0.4*(v - 0.5))
        np.testing.assert_allclose(s.bids, np.where(v <= 0.5, v/2.0, above), rtol=0.0, atol=1e-8)
        self.assertAlmostEqual(s.bid(1.0), 0.35, delta=1e-9)
        self.assertLess(sol.residual, 1e-3)

    def test_piecewise_three_bidders(self):
        dist = PiecewiseDistribution([ [ 0.0, 0.0 ], [ 0.3, 0.1 ], [ 0.7, 0.8 ], [ 1.0, 1.0 ] ])
        sol = solve_symmetric(dist, 3)
        self.assertLess(sol.residual, 1e-3)

    def test_one_bidder(self):
        with self.assertRaises(InvalidInstanceError):
            solve_symmetric(U01, 1)

    @mock.patch.object(UniformDistribution, "pdf", side_effect=lambda v : np.zeros_like(v))
    def test_zero_density(self, _pdf):
        with self.assertRaises(UnsupportedInstanceError):
            solve_symmetric(U01, 2)

    def test_json(self):
        data = solve_symmetric(U01, 2, knots=16).to_json()
        self.assertEqual(data["knots_per_bidder"], [ 16, 16 ])
        self.assertAlmostEqual(data["b_bar"], 0.5)
        self.assertEqual(data["solver"], "symmetric")


class TestAsymmetric(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.solution = solve_asymmetric_two(U01, U02)

    def test_residual(self):
        self.assertLess(self.solution.residual, 1e-3)

    def test_top_bid(self):
        self.assertAlmostEqual(max(s.max_bid() for s in self.solution.strategies), 2.0/3.0, delta=1e-3)

    def test_inverse_bids(self):
        # known inverse bids for this pair: 2b/(1 + 3b^2/4) and 2b/(1 - 3b^2/4)
        weak, strong = self.solution.strategies
        for b in [ 0.2, 0.4, 0.6 ]:
            self.assertAlmostEqual(weak.bid(2*b/(1 + 0.75*b*b)), b, delta=2e-3)
            self.assertAlmostEqual(strong.bid(2*b/(1 - 0.75*b*b)), b, delta=2e-3)

    def test_weak_bidder_bids_more(self):
        weak, strong = self.solution.strategies
        v = np.linspace(0.1, 1.0, 91)
        self.assertTrue(np.all(weak.bid(v) >= strong.bid(v) - 1e-6))

    def test_shape(self):
        for (s, d) in zip(self.solution.strategies, (U01, U02)):
            self.assertTrue(np.all(np.diff(s.bids) >= 0.0))
            self.assertTrue(np.all(s.bids <= s.values))
            s.check_domain(d)
            self.assertEqual(len(s.values), 1024)

    def test_discrete_oracle(self):
        oracle = discrete_best_response(AuctionInstance([ U01, U02 ]))
        for (grid, bids, s) in zip(oracle.value_grids, oracle.bids, self.solution.strategies):
            self.assertLessEqual(np.max(np.abs(bids - s.bid(grid))), 0.05)

    def test_meta(self):
        meta = self.solution.solver_meta
        self.assertEqual(meta["solver"], "shooting")
        low, high = meta["b_bar_bracket"]
        self.assertLessEqual(low, high)


class TestAsymmetricSmall(unittest.TestCase):
    def setUp(self):
        self.opts = ShootingOptions(steps=200, knots=64, value_grid_size=41, bid_grid_size=81)

    def test_symmetric_pair(self):
        sol = solve_asymmetric_two(U01, U01, ShootingOptions())
        self.assertLess(sol.residual, 1e-4)
        for s in sol.strategies:
            self.assertLessEqual(np.max(np.abs(s.bids - s.values/2.0)), 1e-3)

    def test_deterministic(self):
        a = solve_asymmetric_two(U01, U02, self.opts)
        b = solve_asymmetric_two(U01, U02, self.opts)
        for (s, t) in zip(a.strategies, b.strategies):
            np.testing.assert_array_equal(s.bids, t.bids)
        self.assertEqual(a.residual, b.residual)

    def test_different_lower_bounds(self):
        with self.assertRaises(UnsupportedInstanceError):
            solve_asymmetric_two(U01, UniformDistribution(0.5, 1.0), self.opts)

    @mock.patch("pyfpa.equilibrium.best_response_residual", return_value=0.5)
    def test_uncertified(self, _residual):
        with self.assertRaises(ShootingError) as cm:
            solve_asymmetric_two(U01, U02, self.opts)
        self.assertEqual(cm.exception.residual, 0.5)
        self.assertLess(cm.exception.bracket[0], cm.exception.bracket[1])
        _residual.assert_called_once()

    def test_options(self):
        with self.assertRaises(ValueError):
            ShootingOptions(low_eps=0.0)


class TestSolve(unittest.TestCase):
    def test_dispatch(self):
        opts = ShootingOptions(steps=200, knots=64, value_grid_size=41, bid_grid_size=81)
        self.assertEqual(solve(AuctionInstance([ U01, U01, U01 ]), opts).solver_meta["solver"], "symmetric")
        self.assertEqual(solve(AuctionInstance([ U01, U02 ]), opts).solver_meta["solver"], "shooting")

    def test_three_asymmetric(self):
        with self.assertRaises(UnsupportedInstanceError):
            solve(AuctionInstance([ U01, U02, U01 ]))


class TestResidual(unittest.TestCase):
    def setUp(self):
        self.inst = AuctionInstance([ U01, U01 ])

    def test_equilibrium(self):
        self.assertLess(best_response_residual(self.inst, [ linear(U01, 0.5) ]*2), 1e-6)

    def test_zero_bids(self):
        residual = best_response_residual(self.inst, [ linear(U01, 0.0), linear(U01, 0.5) ])
        # value 1 bidding 1/2 against v/2 earns 1/4, bidding 0 earns nothing
        self.assertGreaterEqual(residual, 0.25 - 1e-12)

    def test_truthful(self):
        self.assertGreater(best_response_residual(self.inst, [ linear(U01, 1.0) ]*2), 0.1)

    def test_threads_do_not_change_result(self):
        strategies = [ linear(U01, 0.4), linear(U01, 0.6) ]
        self.assertEqual(best_response_residual(self.inst, strategies, threads=1),
                         best_response_residual(self.inst, strategies, threads=4))


class TestDiscreteBestResponse(unittest.TestCase):
    def test_symmetric_uniform(self):
        oracle = discrete_best_response(AuctionInstance([ U01, U01 ]))
        self.assertTrue(oracle.converged)
        for (grid, bids) in zip(oracle.value_grids, oracle.bids):
            self.assertEqual(len(grid), 21)
            self.assertLessEqual(np.max(np.abs(bids - grid/2.0)), 0.05)
        self.assertEqual(len(oracle.strategies()), 2)

    def test_symmetric_settles_quickly(self):
        oracle = discrete_best_response(AuctionInstance([ U01, U01 ]))
        self.assertLess(oracle.iterations, 10)
        self.assertLessEqual(oracle.gap, 0.0125)

    def test_ties_are_split(self):
        with mock.patch("pyfpa.equilibrium.bid_win_probability", wraps=bid_win_probability) as wp:
            discrete_best_response(AuctionInstance([ U01, U02 ]), max_iterations=3)
        self.assertGreater(wp.call_count, 0)
        for call in wp.call_args_list:
            self.assertEqual(call.kwargs["ties"], "split")

    def test_running_mean_of_best_responses(self):
        oracle = discrete_best_response(AuctionInstance([ U01, U02 ]), max_iterations=1)
        self.assertEqual(oracle.iterations, 1)
        self.assertFalse(oracle.converged)
        for (grid, bids) in zip(oracle.value_grids, oracle.bids):
            self.assertTrue(np.all(np.diff(bids) >= 0.0))
            self.assertTrue(np.all(bids <= grid))
            self.assertTrue(np.all(bids < grid[-1]))
