"""Closed-form welfare bounds for first-price auctions and the numerical
pipeline that turns them into price-of-anarchy constants.

The per-value pieces are:

  vbar               lower bound on the value of a bidder who outbids i,
                     given i's quantile and both bids
  tau_lower_bound    lower bound on a quantile of i's threshold bid
  misalloc_lb_old    the payment-based bound on the welfare of a
                     misallocated item, the one behind 1 - 1/e
  misalloc_lb_new    the sharper bound obtained by integrating vbar over
                     the quantiles of the threshold bid

inner_objective and ell are the normalised form of the second bound, and
phi_constant minimises the average of ell over upper quantile ranges to
produce the certified welfare fraction. The other numerical routines here
(misalloc_quantile_integral, ell_array, phi_midpoint) compute the same
quantities by independent routes and are used to cross-check the
closed forms."""

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np

from .numerics import integrate, minimize_scalar, ScalarMinimum, QUADRATURE_TOL, MINIMIZE_TOL

__all__ = [ "DomainError", "CertificationError", "EllValue", "BoundReport",
            "inner_objective", "ell", "ell_array", "ell_table", "write_ell_table", "phi_constant", "phi_midpoint",
            "vbar", "vbar_derivative", "tau_lower_bound",
            "misalloc_lb_old", "misalloc_lb_old_exact", "misalloc_lb_new", "misalloc_quantile_integral",
            "standard_bound_minimum", "old_constant", "PHI_CLAIM" ]

logger = logging.getLogger(__name__)

PHI_CLAIM = 0.743

# Smallest r searched by ell; the objective tends to 1 as r -> 0
R_FLOOR = 1e-12
# Upper end of the outer minimisation, x = 1 itself is 0/0
X_CEILING = 1.0 - 1e-6
ELL_CHECK_POINTS = 1000
FEASIBILITY_SLACK = 1e-12

_INV_GOLDEN = (math.sqrt(5.0) - 1.0)/2.0


class DomainError(ValueError):
    pass

class CertificationError(Exception):
    def __init__(self, phi, claim):
        self.phi = phi
        self.claim = claim
        super(CertificationError, self).__init__("computed constant {!r} is below the claimed {!r}".format(phi, claim))


class EllValue(NamedTuple):
    value: float
    argmin_r: float


def inner_objective(r, q):
    """1 - r(1-q)ln(1 + (1-r)/((1-q)r)), taken as 1 at r = 0 and at q = 1."""
    if not (0.0 <= r <= 1.0):
        raise DomainError("r must lie in [0, 1], got {!r}".format(r))
    if not (0.0 <= q <= 1.0):
        raise DomainError("q must lie in [0, 1], got {!r}".format(q))
    if r == 0.0 or q == 1.0:
        return 1.0
    return 1.0 - r*(1.0 - q)*math.log1p((1.0 - r)/((1.0 - q)*r))


def _inner_objective_array(r, q):
    with np.errstate(divide='ignore', invalid='ignore'):
        value = 1.0 - r*(1.0 - q)*np.log1p((1.0 - r)/((1.0 - q)*r))
    return np.where((r <= 0.0) | (q >= 1.0), 1.0, value)


@lru_cache(maxsize=None)
def ell(q, tol=MINIMIZE_TOL):
    """Minimum of inner_objective over r in (0, 1] at quantile q, with its argmin.

    Bounded Brent minimisation is cross-checked against a grid of
    ELL_CHECK_POINTS values of r and the better of the two is kept, since the
    objective is not known to be unimodal in r. Results are memoised."""
    if not (0.0 <= q <= 1.0):
        raise DomainError("q must lie in [0, 1], got {!r}".format(q))
    if q == 1.0:
        return EllValue(1.0, 1.0)

    best = minimize_scalar(lambda r : inner_objective(r, q), R_FLOOR, 1.0, tol)
    rs = np.linspace(1.0/ELL_CHECK_POINTS, 1.0, ELL_CHECK_POINTS)
    values = _inner_objective_array(rs, q)
    k = int(np.argmin(values))
    if values[k] < best.fun:
        logger.warning("grid search beat bounded minimisation for ell(%r): %r < %r", q, values[k], best.fun)
        lo = rs[max(k - 1, 0)]
        hi = rs[min(k + 1, ELL_CHECK_POINTS - 1)]
        local = minimize_scalar(lambda r : inner_objective(r, q), lo, hi, tol)
        best = local if local.fun <= values[k] else ScalarMinimum(float(rs[k]), float(values[k]))
    return EllValue(float(best.fun), float(best.x))


def ell_array(qs, iterations=80):
    """Vectorised golden-section evaluation of ell's value over an array of quantiles.

    Shares no code with ell beyond the objective itself."""
    qs = np.asarray(qs, dtype=float)
    a = np.full_like(qs, R_FLOOR)
    b = np.ones_like(qs)
    c = b - _INV_GOLDEN*(b - a)
    d = a + _INV_GOLDEN*(b - a)
    fc = _inner_objective_array(c, qs)
    fd = _inner_objective_array(d, qs)
    for _ in range(iterations):
        left = fc < fd
        a, b = np.where(left, a, c), np.where(left, d, b)
        new = np.where(left, b - _INV_GOLDEN*(b - a), a + _INV_GOLDEN*(b - a))
        fnew = _inner_objective_array(new, qs)
        c, d, fc, fd = (np.where(left, new, d), np.where(left, c, new),
                        np.where(left, fnew, fd), np.where(left, fc, fnew))
    centre = _inner_objective_array((a + b)/2.0, qs)
    return np.minimum(centre, 1.0)


def standard_bound_minimum(tol=MINIMIZE_TOL):
    """Minimise 1 + r ln r over [0, 1]; the minimum is 1 - 1/e at r = 1/e."""
    return minimize_scalar(lambda r : 1.0 + r*math.log(r) if r > 0.0 else 1.0, 0.0, 1.0, tol)


def old_constant(tol=MINIMIZE_TOL):
    return standard_bound_minimum(tol).fun


@dataclass
class BoundReport:
    ell_table: list
    phi: float
    outer_argmin_x: float
    tolerances: dict
    grid: int
    phi_midpoint: Optional[float] = None
    ell_nondecreasing: bool = field(default=False)

    def certify(self, claim=PHI_CLAIM, agreement=1e-4):
        """Raise CertificationError unless phi reaches claim (and agrees with the
        midpoint estimate, when one was computed)."""
        if self.phi < claim:
            raise CertificationError(self.phi, claim)
        if self.phi_midpoint is not None and abs(self.phi - self.phi_midpoint) > agreement:
            raise CertificationError(min(self.phi, self.phi_midpoint), claim)
        return self

    def to_json(self):
        return { "phi" : self.phi,
                 "argmin_x" : self.outer_argmin_x,
                 "grid" : self.grid,
                 "phi_midpoint" : self.phi_midpoint,
                 "ell_nondecreasing" : self.ell_nondecreasing,
                 "tolerances" : { name : tol.as_dict() for (name, tol) in self.tolerances.items() } }

    def write_ell_table(self, f, fmt="{:.12g}"):
        write_ell_table(self.ell_table, f, fmt)


def ell_table(grid=1001, tol=MINIMIZE_TOL):
    """(q, ell(q), argmin r) on grid evenly spaced quantiles from 0 to 1."""
    if grid < 2:
        raise ValueError("ell table needs at least two points")
    table = []
    for q in np.linspace(0.0, 1.0, grid):
        e = ell(float(q), tol)
        table.append((float(q), e.value, e.argmin_r))
    return table


def write_ell_table(table, f, fmt="{:.12g}"):
    writer = csv.writer(f)
    writer.writerow([ "q", "ell", "argmin_r" ])
    for (q, value, r) in table:
        writer.writerow([ fmt.format(q), fmt.format(value), fmt.format(r) ])


def phi_midpoint(points=10**6):
    """min over x of the average of ell on [x, 1], by the midpoint rule on points cells."""
    t = (np.arange(points) + 0.5)/points
    values = ell_array(t)
    tails = np.cumsum(values[::-1])[::-1]/points
    x = np.arange(points)/points
    return float(np.min(tails/(1.0 - x)))


def phi_constant(tol=QUADRATURE_TOL, grid=1001, cross_check=True, minimize_tol=MINIMIZE_TOL):
    """Compute the welfare fraction phi = min_x (1/(1-x)) * integral of ell over [x, 1].

    The integral is taken adaptively on ell itself (never on the table), with
    the open rule so the q = 1 end is not evaluated. x ranges over
    [0, 1 - 1e-6]. With cross_check the midpoint-rule estimate is attached."""
    table = ell_table(grid, minimize_tol)
    nondecreasing = all(table[k + 1][1] >= table[k][1] - 1e-12 for k in range(grid - 1))
    logger.debug("ell table computed on %d points, nondecreasing=%s", grid, nondecreasing)

    def average_above(x):
        tail = integrate(lambda t : ell(t, minimize_tol).value, x, 1.0, tol, open_ends=True)
        logger.debug("tail average above x=%r: %r", x, tail/(1.0 - x))
        return tail/(1.0 - x)

    outer = minimize_scalar(average_above, 0.0, X_CEILING, minimize_tol)
    report = BoundReport(ell_table=table, phi=float(outer.fun), outer_argmin_x=float(outer.x),
                         tolerances={ "quadrature" : tol, "minimize" : minimize_tol }, grid=grid,
                         ell_nondecreasing=nondecreasing)
    if cross_check:
        report.phi_midpoint = phi_midpoint()
    logger.info("phi=%.12g at x=%.6g (midpoint estimate %s)", report.phi, report.outer_argmin_x, report.phi_midpoint)
    return report


def vbar(v_i, q_i, b_i, b_j):
    """Lower bound on the value of a bidder j bidding b_j >= b_i against bidder i
    with value v_i at quantile q_i, when i holds the highest value."""
    if not v_i > 0.0:
        raise DomainError("v_i must be positive, got {!r}".format(v_i))
    if not (0.0 <= q_i <= 1.0):
        raise DomainError("q_i must lie in [0, 1], got {!r}".format(q_i))
    if not (0.0 <= b_i < v_i):
        raise DomainError("need 0 <= b_i < v_i, got b_i={!r}, v_i={!r}".format(b_i, v_i))
    if b_j < b_i:
        raise DomainError("need b_j >= b_i, got b_j={!r}, b_i={!r}".format(b_j, b_i))
    s = b_i/v_i
    t = b_j/v_i
    den = 1.0 - q_i - s + q_i*t
    if den <= 0.0:
        raise DomainError("denominator {!r} is not positive".format(den))
    return v_i*(t - (1.0 - q_i)*t*s - q_i*s)/den


def vbar_derivative(v_i, q_i, b_i, b_j):
    """d vbar / d b_j = (1-q)(1-b_i/v)**2 / den**2, never negative."""
    vbar(v_i, q_i, b_i, b_j)
    s = b_i/v_i
    den = 1.0 - q_i - s + q_i*b_j/v_i
    return (1.0 - q_i)*(1.0 - s)**2/den**2


def tau_lower_bound(v_i, u_cond, z):
    """Lower bound v_i - u/z on the z-quantile of the conditional threshold bid."""
    if not z > 0.0:
        raise DomainError("quantile z must be positive, got {!r}".format(z))
    if u_cond < 0.0:
        raise DomainError("utility must be non-negative, got {!r}".format(u_cond))
    return v_i - u_cond/z


def _check_utility(v_i, u_cond, cap):
    if not v_i > 0.0:
        raise DomainError("v_i must be positive, got {!r}".format(v_i))
    if u_cond < 0.0 or u_cond > cap + FEASIBILITY_SLACK*v_i:
        raise DomainError("utility {!r} is infeasible, must lie in [0, {!r}]".format(u_cond, cap))


def misalloc_lb_old(v_i, x_cond, u_cond):
    """v(1 - x) + u ln(u/v), with the u = 0 limit v(1 - x)."""
    if not (0.0 <= x_cond <= 1.0):
        raise DomainError("allocation must lie in [0, 1], got {!r}".format(x_cond))
    _check_utility(v_i, u_cond, v_i*x_cond)
    if u_cond == 0.0:
        return v_i*(1.0 - x_cond)
    return v_i*(1.0 - x_cond) + u_cond*math.log(u_cond/v_i)


def misalloc_lb_old_exact(v_i, x_cond, u_cond):
    """v(1 - x) + u ln x, the payment bound integrated over threshold quantiles in [x, 1].

    misalloc_lb_old weakens ln x to ln(u/v)."""
    if not (0.0 <= x_cond <= 1.0):
        raise DomainError("allocation must lie in [0, 1], got {!r}".format(x_cond))
    _check_utility(v_i, u_cond, v_i*x_cond)
    if u_cond == 0.0:
        return v_i*(1.0 - x_cond)
    return v_i*(1.0 - x_cond) + u_cond*math.log(x_cond)


def misalloc_lb_new(v_i, q_i, b_i, u_cond):
    """v(1 - u/(v-b)) - (1-q)u ln(1 + (v-b-u)/((1-q)u)).

    Limits: v as u -> 0, and v(1 - u/(v-b)) as q -> 1."""
    if not (0.0 <= q_i <= 1.0):
        raise DomainError("q_i must lie in [0, 1], got {!r}".format(q_i))
    if not (0.0 <= b_i < v_i):
        raise DomainError("need 0 <= b_i < v_i, got b_i={!r}, v_i={!r}".format(b_i, v_i))
    margin = v_i - b_i
    _check_utility(v_i, u_cond, margin)
    u_cond = min(u_cond, margin)
    if u_cond == 0.0:
        return v_i
    if q_i == 1.0:
        return v_i*(1.0 - u_cond/margin)
    return v_i*(1.0 - u_cond/margin) - (1.0 - q_i)*u_cond*math.log1p((margin - u_cond)/((1.0 - q_i)*u_cond))


def misalloc_quantile_integral(v_i, q_i, b_i, u_cond, tol=QUADRATURE_TOL):
    """Integrate vbar(v, q, b, max(b, v - u/z)) over z in [u/(v-b), 1] numerically."""
    if not (0.0 <= b_i < v_i):
        raise DomainError("need 0 <= b_i < v_i, got b_i={!r}, v_i={!r}".format(b_i, v_i))
    margin = v_i - b_i
    _check_utility(v_i, u_cond, margin)
    if u_cond == 0.0:
        return v_i
    start = u_cond/margin
    if start >= 1.0:
        return 0.0
    return integrate(lambda z : vbar(v_i, q_i, b_i, max(b_i, v_i - u_cond/z)), start, 1.0, tol, open_ends=True)
