"""Bayes-Nash equilibria of first-price auctions.

Two solvers are provided. solve_symmetric evaluates the closed form
b(v) = v - (integral of F^(n-1) up to v) / F(v)^(n-1) for n identical
bidders. solve_asymmetric_two handles two bidders with different value
distributions on a common lower bound by shooting: the inverse bid
functions are integrated backward from a candidate top bid, and the top
bid is bisected until both reach the bottom of the support together.

Neither solver is trusted on its own. Every solution carries the
best-response residual computed by best_response_residual, and the
shooting solver refuses to return a profile whose residual exceeds its
tolerance.

discrete_best_response is a brute-force check: best-response iteration
on a coarse grid of values and bids."""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .numerics import integrate, ConvergenceError, ToleranceConfig
from .model import (AuctionInstance, BidStrategy, InvalidInstanceError, quantile_grid,
                    bid_win_probability, check_profile)

__all__ = [ "EquilibriumSolution", "ShootingOptions", "DiscreteBestResponse",
            "UnsupportedInstanceError", "ShootingError",
            "solve", "solve_symmetric", "solve_asymmetric_two",
            "best_response_residual", "discrete_best_response" ]

logger = logging.getLogger(__name__)

DEFAULT_KNOTS = 1024
SYMMETRIC_TOL = ToleranceConfig(abs_tol=1e-13, rel_tol=1e-12, max_iter=50)


class UnsupportedInstanceError(InvalidInstanceError):
    pass

class ShootingError(ConvergenceError):
    """The shooting solver could not produce a certified equilibrium.

    bracket is the final (low, high) interval for the top bid, residual the
    best-response residual of the best profile found (None if none was built)."""
    def __init__(self, message, bracket, residual=None):
        self.bracket = bracket
        self.residual = residual
        super(ShootingError, self).__init__("{} [top bid bracket {!r}, residual {!r}]".format(message, bracket, residual),
                                            estimate=bracket[0], error_bound=bracket[1] - bracket[0])


@dataclass
class ShootingOptions:
    steps: int = 1000
    max_bisections: int = 80
    bracket_tol: float = 1e-10
    low_eps: float = 1e-6
    max_halvings: int = 30
    knots: int = DEFAULT_KNOTS
    value_grid_size: int = 101
    bid_grid_size: int = 201
    residual_tol: float = 1e-3
    threads: int = None

    def __post_init__(self):
        if self.steps < 1 or self.max_bisections < 1 or self.knots < 2:
            raise ValueError("steps, max_bisections and knots must be positive")
        if not (0.0 < self.low_eps < 1.0):
            raise ValueError("low_eps must lie in (0, 1), got {!r}".format(self.low_eps))


@dataclass
class EquilibriumSolution:
    strategies: List[BidStrategy]
    residual: float
    solver_meta: dict = field(default_factory=dict)

    def to_json(self):
        data = { "residual" : self.residual,
                 "b_bar" : max(s.max_bid() for s in self.strategies),
                 "knots_per_bidder" : [ len(s.values) for s in self.strategies ] }
        data.update(self.solver_meta)
        return data


def _check_positive_density(dist, knots):
    values = quantile_grid(dist, knots)
    mids = (values[1:] + values[:-1])/2.0
    if np.any(dist.pdf(mids) <= 0.0):
        raise UnsupportedInstanceError("{} has a zero-density region inside its support".format(dist.description()))


def solve_symmetric(dist, n, knots=DEFAULT_KNOTS, value_grid_size=101, bid_grid_size=201, threads=None):
    """The symmetric equilibrium of n bidders with values drawn from dist."""
    if n < 2:
        raise InvalidInstanceError("need at least two bidders, got {}".format(n))
    _check_positive_density(dist, knots)
    values = quantile_grid(dist, knots)
    power = lambda t : float(dist.cdf(t))**(n - 1)
    cuts = np.unique(np.asarray(dist.breakpoints(), dtype=float))

    accumulated = np.zeros_like(values)
    for k in range(1, len(values)):
        a, b = values[k - 1], values[k]
        # split at the density jumps of dist so every panel is smooth
        edges = np.concatenate(([ a ], cuts[(cuts > a) & (cuts < b)], [ b ]))
        accumulated[k] = accumulated[k - 1] + sum(integrate(power, lo, hi, SYMMETRIC_TOL)
                                                  for (lo, hi) in zip(edges[:-1], edges[1:]))
    weights = dist.cdf(values)**(n - 1)
    with np.errstate(divide='ignore', invalid='ignore'):
        bids = np.where(weights > 0.0, values - accumulated/weights, values)
    bids = np.minimum(np.maximum.accumulate(np.clip(bids, dist.lo, None)), values)

    instance = AuctionInstance([ dist ]*n)
    strategies = [ BidStrategy(values, bids) ]*n
    residual = best_response_residual(instance, strategies, value_grid_size, bid_grid_size, threads)
    logger.info("symmetric equilibrium for %d x %s: top bid %.12g, residual %.3g", n, dist.description(), bids[-1], residual)
    return EquilibriumSolution(strategies, residual, { "solver" : "symmetric", "n" : n, "knots" : len(values),
                                                       "value_grid_size" : value_grid_size, "bid_grid_size" : bid_grid_size })


class _Shooter (object):
    """Backward integration of the inverse bid functions of two bidders.

    phi_i'(b) = F_i(phi_i)/f_i(phi_i) / (phi_j(b) - b), integrated from the top
    bid down to lo + eps with classical fourth order Runge-Kutta steps. A step
    which would put either inverse bid on or under the diagonal is halved;
    running out of halvings means the path met the diagonal."""

    def __init__(self, d1, d2, opts):
        self.dists = (d1, d2)
        self.lo = d1.lo
        self.top = np.array([ d1.hi, d2.hi ])
        self.opts = opts
        self.stop = self.lo + opts.low_eps*(min(d1.hi, d2.hi) - self.lo)

    def slopes(self, b, phi):
        gaps = phi[::-1] - b
        if np.any(gaps <= 0.0):
            return None
        out = np.empty(2)
        for i in range(2):
            d = self.dists[i]
            v = min(max(phi[i], d.lo), d.hi)
            F = float(d.cdf(v))
            # F/f vanishes at the bottom of the support
            out[i] = F/float(d.pdf(v))/gaps[i] if F > 0.0 else 0.0
        return out

    def step(self, b, phi, h):
        k1 = self.slopes(b, phi)
        if k1 is None:
            return None
        k2 = self.slopes(b - 0.5*h, phi - 0.5*h*k1)
        if k2 is None:
            return None
        k3 = self.slopes(b - 0.5*h, phi - 0.5*h*k2)
        if k3 is None:
            return None
        k4 = self.slopes(b - h, phi - h*k3)
        if k4 is None:
            return None
        new = phi - h/6.0*(k1 + 2.0*k2 + 2.0*k3 + k4)
        if np.any(new - (b - h) <= 0.0):
            return None
        return new

    def shoot(self, b_bar):
        """Returns (bids, inverse bids, hit) with bids decreasing from b_bar."""
        h = (b_bar - self.stop)/self.opts.steps
        b = b_bar
        phi = self.top.copy()
        bids = [ b ]
        path = [ phi ]
        while b > self.stop:
            size = min(h, b - self.stop)
            for _ in range(self.opts.max_halvings):
                new = self.step(b, phi, size)
                if new is not None:
                    break
                size /= 2.0
            else:
                return np.array(bids), np.array(path), True
            b -= size
            phi = new
            bids.append(b)
            path.append(phi)
        return np.array(bids), np.array(path), False


def _strategy_from_path(dist, bids, inverse, lo, knots):
    # append the low end (lo, lo) and turn the path around so bids increase
    bids = np.append(bids, lo)[::-1]
    inverse = np.maximum.accumulate(np.clip(np.append(inverse, lo)[::-1], dist.lo, dist.hi))
    values = quantile_grid(dist, knots)
    out = np.interp(values, inverse, bids)
    return BidStrategy(values, np.minimum(out, values))


def solve_asymmetric_two(d1, d2, opts=None):
    """The equilibrium of two bidders with value distributions d1 and d2.

    Requires a common lower bound of the supports and positive density
    everywhere inside them. Raises ShootingError when bisection on the top
    bid cannot produce a profile with residual below opts.residual_tol."""
    opts = opts or ShootingOptions()
    scale = max(d1.hi, d2.hi)
    if abs(d1.lo - d2.lo) > 1e-12*scale:
        raise UnsupportedInstanceError("supports must share a lower bound, got {!r} and {!r}".format(d1.lo, d2.lo))
    _check_positive_density(d1, opts.knots)
    _check_positive_density(d2, opts.knots)

    shooter = _Shooter(d1, d2, opts)
    low = shooter.stop + opts.low_eps*(min(d1.hi, d2.hi) - shooter.lo)
    high = min(d1.hi, d2.hi)
    best = None
    iterations = 0
    while iterations < opts.max_bisections and high - low > opts.bracket_tol*scale:
        iterations += 1
        mid = (low + high)/2.0
        bids, inverse, hit = shooter.shoot(mid)
        if hit:
            high = mid
        else:
            low = mid
            best = (bids, inverse)
        logger.debug("shooting iteration %d: top bid %.15g %s", iterations, mid, "hit the diagonal" if hit else "reached the bottom")

    if best is None:
        raise ShootingError("every candidate top bid met the diagonal", (low, high))

    bids, inverse = best
    strategies = [ _strategy_from_path(d, bids, inverse[:, i], shooter.lo, opts.knots) for (i, d) in enumerate((d1, d2)) ]
    instance = AuctionInstance([ d1, d2 ])
    residual = best_response_residual(instance, strategies, opts.value_grid_size, opts.bid_grid_size, opts.threads)
    mismatch = float(np.max(inverse[-1]) - shooter.lo)
    logger.info("asymmetric equilibrium: top bid %.12g after %d bisections, bottom mismatch %.3g, residual %.3g",
                low, iterations, mismatch, residual)
    if residual > opts.residual_tol:
        raise ShootingError("residual above tolerance {!r}".format(opts.residual_tol), (low, high), residual)
    meta = { "solver" : "shooting", "b_bar_bracket" : [ low, high ], "iterations" : iterations,
             "steps" : len(bids), "bottom_mismatch" : mismatch, "knots" : opts.knots,
             "value_grid_size" : opts.value_grid_size, "bid_grid_size" : opts.bid_grid_size }
    return EquilibriumSolution(strategies, residual, meta)


def solve(instance, opts=None):
    """Pick a solver for the instance: symmetric closed form or two-bidder shooting."""
    opts = opts or ShootingOptions()
    if instance.is_symmetric():
        return solve_symmetric(instance[0], instance.n, opts.knots, opts.value_grid_size, opts.bid_grid_size, opts.threads)
    if instance.n == 2:
        return solve_asymmetric_two(instance[0], instance[1], opts)
    raise UnsupportedInstanceError("asymmetric instances with {} bidders are not supported by the solvers".format(instance.n))


def _map_ordered(fn, items, threads):
    threads = threads or os.cpu_count() or 1
    if threads <= 1 or len(items) <= 1:
        return [ fn(item) for item in items ]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _bidder_regret(instance, strategies, i, values, bid_grid_size):
    """Largest utility gain over the bid grid for each value in values."""
    fractions = np.linspace(0.0, 1.0, bid_grid_size)
    candidates = values[:, None]*fractions[None, :]
    gains = (values[:, None] - candidates)*bid_win_probability(instance, strategies, i, candidates)
    current = strategies[i].bid(values)
    utility = (values - current)*bid_win_probability(instance, strategies, i, current)
    return np.max(gains, axis=1) - utility


def best_response_residual(instance, strategies, value_grid_size=101, bid_grid_size=201, threads=None):
    """max over bidders i, grid values v and grid bids b of u_i(b | v) - u_i(b_i(v) | v), floored at 0.

    Values are placed uniformly in each bidder's quantile space, bids
    uniformly on [0, v]. Interim utilities are exact for the given
    piecewise-linear strategies; no sampling is involved."""
    check_profile(instance, strategies)
    jobs = []
    for i in range(instance.n):
        values = quantile_grid(instance[i], value_grid_size)
        for chunk in np.array_split(values, min(len(values), 8)):
            jobs.append((i, chunk))
    regrets = _map_ordered(lambda job : float(np.max(_bidder_regret(instance, strategies, job[0], job[1], bid_grid_size))),
                           jobs, threads)
    residual = max(0.0, max(regrets))
    logger.debug("best-response residual %.3g over %d bidders", residual, instance.n)
    return residual


@dataclass
class DiscreteBestResponse:
    value_grids: list
    bids: list
    iterations: int
    converged: bool
    gap: float = 0.0

    def strategies(self):
        return [ BidStrategy(v, b) for (v, b) in zip(self.value_grids, self.bids) ]


def discrete_best_response(instance, value_grid_size=21, bid_grid_size=41, max_iterations=500, tol=None):
    """Averaged best-response iteration on a discretised game.

    Each bidder's strategy is its bids at value_grid_size equally spaced
    values, interpolated linearly in between. A best response picks, for
    every grid value v, the best bid among bid_grid_size equally spaced bids
    on [0, v], with a tie against an opponent worth half a win. Bidders
    respond in turn (Gauss-Seidel) and each one's strategy is the running
    mean of its best responses so far, as in fictitious play.

    Iteration starts from truthful bidding and stops once every best
    response lies within tol of the current bids. tol defaults to half a
    bid-grid step at the top of the narrowest support."""
    grids = [ np.linspace(d.lo, d.hi, value_grid_size) for d in instance ]
    bids = [ g.copy() for g in grids ]
    fractions = np.linspace(0.0, 1.0, bid_grid_size)
    if tol is None:
        tol = 0.5*min(g[-1] for g in grids)/(bid_grid_size - 1)
    converged = False
    iterations = 0
    gap = math.inf
    for iterations in range(1, max_iterations + 1):
        gap = 0.0
        for i in range(instance.n):
            strategies = [ BidStrategy(g, b) for (g, b) in zip(grids, bids) ]
            candidates = grids[i][:, None]*fractions[None, :]
            utility = (grids[i][:, None] - candidates)*bid_win_probability(instance, strategies, i, candidates, ties="split")
            best = candidates[np.arange(value_grid_size), np.argmax(utility, axis=1)]
            best = np.minimum(np.maximum.accumulate(best), grids[i])
            gap = max(gap, float(np.max(np.abs(best - bids[i]))))
            bids[i] = np.minimum((1.0 - 1.0/iterations)*bids[i] + best/iterations, grids[i])
        if gap <= tol:
            converged = True
            break
    logger.info("discrete best response %s after %d sweeps, last gap %.3g", "converged" if converged else "stopped", iterations, gap)
    return DiscreteBestResponse(grids, bids, iterations, converged, gap)
