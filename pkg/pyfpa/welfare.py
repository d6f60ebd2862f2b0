"""Welfare of first-price auction equilibria, and audits of the inequalities
behind the welfare guarantee.

optimal_welfare is the benchmark E[max_i v_i]; equilibrium_welfare is the
expected value of the winner under a strategy profile. Both can be
computed by quadrature or by seeded Monte Carlo.

audit_lemmas replays an equilibrium and checks, sample by sample or on
grids of values, each of the inequalities that the guarantee is built
from:

  lemma_a      the winner's value is at least every loser's threshold bid
  lemma_b      a misallocated winner's value is at least vbar
  lemma_c      threshold quantiles are at least tau_lower_bound
  lemma_d_old  the conditional misallocated value is at least misalloc_lb_old
  lemma_d_new  ... and at least misalloc_lb_new

The inequalities are exact for exact equilibria. Solutions carry a
best-response residual, so every comparison is granted a slack of
tol + 10 * residual, and Monte Carlo comparisons four standard errors more."""

import json
import logging
import math
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from .numerics import integrate, ToleranceConfig, BracketError, ConvergenceError
from .model import (AuctionInstance, DegenerateConditioningError, sample_outcomes, threshold_quantile,
                    interim, quantile_grid, conditional_values, check_profile, play, run_shards, bid_win_probability, DEFAULT_SHARDS)
from .bounds import DomainError, vbar, tau_lower_bound, misalloc_lb_old, misalloc_lb_new

__all__ = [ "WelfareEstimate", "LemmaCheck", "AuditReport",
            "optimal_welfare", "equilibrium_welfare", "decomposition_terms", "decomposition_check",
            "gamma", "gamma_total", "audit_lemmas", "load_suite",
            "DEFAULT_SAMPLES", "AUDIT_SLACK_FACTOR", "WELFARE_TOL" ]

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 10**6
AUDIT_SLACK_FACTOR = 10.0
MC_SLACK_STANDARD_ERRORS = 4.0
Z_95 = 1.959963984540054

WELFARE_TOL = ToleranceConfig(abs_tol=1e-9, rel_tol=1e-10, max_iter=50)


@dataclass(frozen=True)
class WelfareEstimate:
    welf: float
    opt: float
    method: str
    ci_halfwidth: float = 0.0
    samples: int = 0

    @property
    def ratio(self):
        return self.welf/self.opt

    @property
    def ratio_ci(self):
        return self.ci_halfwidth/self.opt

    def to_json(self):
        return { "welf" : self.welf, "opt" : self.opt, "ratio" : self.ratio, "ci" : self.ratio_ci,
                 "welf_ci" : self.ci_halfwidth, "method" : self.method, "samples" : self.samples }


def _breakpoints(instance):
    points = sorted(set([ 0.0 ] + [ float(p) for d in instance for p in d.breakpoints() ]))
    return points


def _max_value_moments(instance, seed, samples, threads):
    def work(rng, size):
        values = np.column_stack([ d.sample(rng, size) for d in instance ])
        return values.max(axis=1)
    best = np.concatenate(run_shards(work, seed, samples, DEFAULT_SHARDS, threads))
    return float(np.mean(best)), float(np.std(best, ddof=1)/math.sqrt(len(best)))


def optimal_welfare(instance, method="quadrature", seed=None, samples=DEFAULT_SAMPLES, tol=WELFARE_TOL, threads=None):
    """E[max_i v_i], as the integral of 1 - prod_i F_i(t) over [0, max hi] or by sampling."""
    if method == "monte-carlo":
        if seed is None:
            raise ValueError("Monte Carlo welfare needs a seed")
        return _max_value_moments(instance, seed, samples, threads)[0]
    if method != "quadrature":
        raise ValueError("unknown method {!r}".format(method))

    def tail(t):
        p = 1.0
        for d in instance:
            p *= float(d.cdf(t))
        return 1.0 - p

    points = _breakpoints(instance)
    return sum(integrate(tail, a, b, tol) for (a, b) in zip(points, points[1:]))


def equilibrium_welfare(instance, strategies, method="quadrature", seed=None, samples=DEFAULT_SAMPLES,
                        tol=WELFARE_TOL, threads=None):
    """Expected value of the winning bidder under strategies.

    Quadrature integrates v_i(q) times bidder i's probability of winning
    over its quantiles, with the lowest-index tie rule expressed through
    left-continuous bid CDFs for lower-indexed opponents. Monte Carlo plays
    the auction and reports a 95% confidence half-width."""
    check_profile(instance, strategies)
    if method == "monte-carlo":
        if seed is None:
            raise ValueError("Monte Carlo welfare needs a seed")
        batch = sample_outcomes(instance, strategies, seed, samples, threads=threads)
        winners = batch.winner_value
        welf = float(np.mean(winners))
        se = float(np.std(winners, ddof=1)/math.sqrt(len(winners)))
        opt = float(np.mean(batch.best_value))
        estimate = WelfareEstimate(welf=welf, opt=opt, method=method, ci_halfwidth=Z_95*se, samples=samples)
    elif method == "quadrature":
        welf = 0.0
        for i in range(instance.n):
            dist = instance[i]
            strategy = strategies[i]
            def contribution(q, dist=dist, strategy=strategy, i=i):
                v = float(dist.quantile(q))
                return v*float(bid_win_probability(instance, strategies, i, strategy.bid(v), ties="lowest-index"))
            welf += integrate(contribution, 0.0, 1.0, tol)
        estimate = WelfareEstimate(welf=welf, opt=optimal_welfare(instance, tol=tol), method=method)
    else:
        raise ValueError("unknown method {!r}".format(method))
    logger.info("equilibrium welfare %.12g of %.12g (ratio %.6g, %s)", estimate.welf, estimate.opt, estimate.ratio, method)
    return estimate


def decomposition_terms(instance, strategies, seed, samples=DEFAULT_SAMPLES, threads=None):
    """Both sides of the welfare breakdown by highest-value bidder.

    The left side is the mean winner value of ordinary plays. The right side
    sums over bidders i the expectation over v_i of P[i has the highest
    value] times the winner's value given that event, sampled by drawing
    every opponent from its distribution truncated at v_i. The two sides use
    disjoint substreams of seed. Returns (lhs, rhs, standard error of lhs - rhs)."""
    check_profile(instance, strategies)
    batch = sample_outcomes(instance, strategies, [ seed, 0 ], samples, threads=threads)
    winners = batch.winner_value
    lhs = float(np.mean(winners))
    variance = float(np.var(winners, ddof=1))/samples

    rhs = 0.0
    for i in range(instance.n):
        def work(rng, size, i=i):
            own = instance[i].sample(rng, size)
            weight = np.ones(size)
            columns = []
            for (j, d) in enumerate(instance):
                if j == i:
                    columns.append(own)
                    continue
                Fj = d.cdf(own)
                weight = weight*Fj
                columns.append(d.quantile(rng.random(size)*Fj))
            played = play(instance, strategies, np.column_stack(columns))
            return weight*played.winner_value
        terms = np.concatenate(run_shards(work, [ seed, i + 1 ], samples, DEFAULT_SHARDS, threads))
        rhs += float(np.mean(terms))
        variance += float(np.var(terms, ddof=1))/samples
    return lhs, rhs, math.sqrt(variance)


def decomposition_check(instance, strategies, seed, samples=DEFAULT_SAMPLES, threads=None):
    """Absolute difference of the two sides of the welfare breakdown."""
    lhs, rhs, _ = decomposition_terms(instance, strategies, seed, samples, threads)
    return abs(lhs - rhs)


def gamma(instance, i, q):
    """v_i(q) times the probability that every other bidder's value is below it."""
    if not (0.0 <= q <= 1.0):
        raise ValueError("quantile must lie in [0, 1], got {!r}".format(q))
    v = float(instance[i].quantile(q))
    p = 1.0
    for (j, d) in enumerate(instance):
        if j != i:
            p *= float(d.cdf(v))
    return v*p


def gamma_total(instance, tol=WELFARE_TOL):
    """Sum over bidders of the integral of gamma_i over [0, 1]; equals optimal_welfare."""
    total = 0.0
    for i in range(instance.n):
        # kinks of gamma_i sit at the quantiles of every bidder's breakpoints
        knots = sorted(set([ 0.0, 1.0 ] + [ float(instance[i].cdf(p)) for d in instance for p in d.breakpoints() ]))
        total += sum(integrate(lambda q, i=i : gamma(instance, i, q), a, b, tol) for (a, b) in zip(knots, knots[1:]))
    return total


@dataclass
class LemmaCheck:
    """Count of comparisons made, of those failing by more than the slack,
    and the smallest margin (left side minus right side) seen."""
    checks: int = 0
    violations: int = 0
    worst_margin: Optional[float] = None

    def record(self, margins, slack):
        margins = np.atleast_1d(np.asarray(margins, dtype=float))
        if margins.size == 0:
            return
        self.checks += int(margins.size)
        self.violations += int(np.count_nonzero(margins < -slack))
        worst = float(np.min(margins))
        self.worst_margin = worst if self.worst_margin is None else min(self.worst_margin, worst)

    def to_json(self):
        return { "checks" : self.checks, "violations" : self.violations, "worst_margin" : self.worst_margin }


LEMMAS = [ "lemma_a", "lemma_b", "lemma_c", "lemma_d_old", "lemma_d_new" ]


@dataclass
class AuditReport:
    lemmas: dict
    seed: int
    slack: float
    residual: float
    samples: int
    tolerance: float

    @property
    def violations(self):
        return sum(check.violations for check in self.lemmas.values())

    def passed(self):
        return self.violations == 0

    def to_json(self):
        data = { name : check.to_json() for (name, check) in self.lemmas.items() }
        data.update({ "seed" : self.seed, "slack" : self.slack, "residual" : self.residual,
                      "samples" : self.samples, "tolerance" : self.tolerance })
        return data


def _audit_plays(instance, batch, slack, report):
    winners = batch.winner
    winner_values = batch.winner_value

    for i in range(instance.n):
        losers = winners != i
        report["lemma_a"].record(winner_values[losers] - batch.thresholds[losers, i], slack)

    best = batch.best_bidder
    misallocated = np.nonzero(best != winners)[0]
    margins = []
    for k in misallocated:
        i = best[k]
        j = winners[k]
        v_i = batch.values[k, i]
        try:
            lower = vbar(v_i, float(instance[i].cdf(v_i)), batch.bids[k, i], batch.bids[k, j])
        except DomainError:
            lower = batch.bids[k, j]
        margins.append(batch.values[k, j] - lower)
    report["lemma_b"].record(margins, slack)
    logger.debug("audited %d plays, %d misallocated", len(batch), len(misallocated))


def _audit_thresholds(instance, strategies, slack, report, grid_size, z_grid):
    for i in range(instance.n):
        for v in quantile_grid(instance[i], grid_size):
            if instance[i].cdf(v) < 0.05:
                continue
            try:
                u_cond = interim(instance, strategies, i, v, conditional=True).expected_utility
            except DegenerateConditioningError:
                continue
            if u_cond < 0.0:
                continue
            b_i = strategies[i].bid(v)
            margins = []
            for z in z_grid:
                try:
                    tau = threshold_quantile(instance, strategies, i, v, z)
                except (BracketError, ConvergenceError) as e:
                    logger.debug("no threshold quantile %r for bidder %d at value %r: %s", z, i, v, e)
                    continue
                if tau >= b_i:
                    margins.append(tau - tau_lower_bound(v, u_cond, z))
            report["lemma_c"].record(margins, slack)


def _audit_misallocation(instance, strategies, seed, samples, slack, report, grid_size):
    per_point = max(1000, samples//(instance.n*grid_size))
    streams = np.random.SeedSequence([ seed, instance.n + 1 ]).spawn(instance.n)
    for i in range(instance.n):
        rng = np.random.default_rng(streams[i])
        for v in quantile_grid(instance[i], grid_size):
            if instance[i].cdf(v) < 0.05:
                continue
            try:
                quantities = interim(instance, strategies, i, v, conditional=True)
                values = conditional_values(instance, i, v, rng, per_point)
            except DegenerateConditioningError:
                continue
            played = play(instance, strategies, values)
            misallocated = np.where(played.winner != i, played.winner_value, 0.0)
            mean = float(np.mean(misallocated))
            allowance = slack + MC_SLACK_STANDARD_ERRORS*float(np.std(misallocated, ddof=1))/math.sqrt(per_point)
            q = float(instance[i].cdf(v))
            try:
                report["lemma_d_old"].record(mean - misalloc_lb_old(v, quantities.win_prob, quantities.expected_utility), allowance)
            except DomainError:
                pass
            try:
                report["lemma_d_new"].record(mean - misalloc_lb_new(v, q, quantities.bid, quantities.expected_utility), allowance)
            except DomainError:
                pass


def audit_lemmas(instance, solution, seed, samples=DEFAULT_SAMPLES, tol=1e-3, threads=None, grid_size=20, z_points=20):
    """Check the welfare inequalities on a solved (or supplied) equilibrium.

    Never raises on a failed inequality; violations are counted in the report."""
    strategies = solution.strategies
    check_profile(instance, strategies)
    slack = tol + AUDIT_SLACK_FACTOR*solution.residual
    report = { name : LemmaCheck() for name in LEMMAS }

    batch = sample_outcomes(instance, strategies, seed, samples, threads=threads)
    _audit_plays(instance, batch, slack, report)
    _audit_thresholds(instance, strategies, slack, report, grid_size, np.linspace(0.05, 1.0, z_points))
    _audit_misallocation(instance, strategies, seed, samples, slack, report, grid_size)

    audit = AuditReport(lemmas=report, seed=seed, slack=slack, residual=solution.residual, samples=samples, tolerance=tol)
    logger.info("audit: %d violations over %d checks", audit.violations, sum(c.checks for c in report.values()))
    return audit


def load_suite():
    """The bundled test instances as (name, AuctionInstance) pairs, sorted by name."""
    folder = resources.files("pyfpa").joinpath("instances")
    suite = []
    for entry in sorted(folder.iterdir(), key=lambda e : e.name):
        if entry.name.endswith(".json"):
            suite.append((entry.name[:-len(".json")], AuctionInstance.from_json(json.loads(entry.read_text(encoding="utf-8")))))
    return suite
