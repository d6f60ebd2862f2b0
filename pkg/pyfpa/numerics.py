"""Scalar numerical kernels shared by the rest of the package.

Three operations are provided: adaptive Simpson quadrature (with an open
variant which never evaluates the integrand at the end points), bounded
scalar minimisation, and bracketed root finding. All of them are pure
functions of their arguments, so they may be called from any number of
threads at once."""

import logging
import math
from dataclasses import dataclass, asdict
from typing import Callable, NamedTuple

import numpy as np
import scipy.optimize

__all__ = [ "ToleranceConfig", "ScalarMinimum", "ConvergenceError", "BracketError",
            "integrate", "minimize_scalar", "find_root",
            "QUADRATURE_TOL", "MINIMIZE_TOL", "ROOT_TOL" ]

logger = logging.getLogger(__name__)


class ConvergenceError(Exception):
    """Raised when an iterative method runs out of refinements before meeting its tolerance.

    The best estimate found and the error bound attached to it are kept on the
    exception so that callers can decide whether they are good enough."""
    def __init__(self, message, estimate=None, error_bound=None):
        self.estimate = estimate
        self.error_bound = error_bound
        if estimate is not None:
            message = "{} (best estimate {!r}, error bound {!r})".format(message, estimate, error_bound)
        super(ConvergenceError, self).__init__(message)


class BracketError(ValueError):
    pass


@dataclass(frozen=True)
class ToleranceConfig:
    """Error targets for one numerical operation.

    For quadrature max_iter caps the bisection depth of any sub-interval,
    for minimisation and root finding it caps the number of iterations."""
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    max_iter: int = 200

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive, got {!r}".format(self.abs_tol))
        if not self.rel_tol >= 0:
            raise ValueError("rel_tol must be non-negative, got {!r}".format(self.rel_tol))
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer, got {!r}".format(self.max_iter))

    def as_dict(self):
        return asdict(self)

    def tightened(self, factor):
        """A copy of this configuration with both error targets divided by factor."""
        return ToleranceConfig(self.abs_tol/factor, self.rel_tol/factor, self.max_iter)


QUADRATURE_TOL = ToleranceConfig(abs_tol=1e-8, rel_tol=1e-9, max_iter=50)
MINIMIZE_TOL   = ToleranceConfig(abs_tol=1e-9, rel_tol=1e-9, max_iter=200)
ROOT_TOL       = ToleranceConfig(abs_tol=1e-12, rel_tol=1e-12, max_iter=200)

NOISE_FLOOR = 64*np.finfo(float).eps


class ScalarMinimum(NamedTuple):
    x: float
    fun: float
    converged: bool = True


def _simpson(fa, fm, fb, h):
    return h/3.0*(fa + 4.0*fm + fb)


def _adaptive_simpson(f, a, b, tol):
    """Adaptive Simpson's rule with Richardson correction.

    Returns (estimate, error_estimate, converged)."""
    h = (b - a)/2.0
    fa = f(a)
    fm = f(a + h)
    fb = f(b)
    whole = _simpson(fa, fm, fb, h)
    target = max(tol.abs_tol, tol.rel_tol*abs(whole))
    failures = []

    def _recurse(a, b, fa, fm, fb, whole, target, depth):
        m  = (a + b)/2.0
        h  = (b - a)/4.0
        flm = f((a + m)/2.0)
        frm = f((m + b)/2.0)
        left  = _simpson(fa, flm, fm, h)
        right = _simpson(fm, frm, fb, h)
        delta = (left + right - whole)/15.0
        # below the noise floor further bisection only refines rounding error
        if abs(delta) <= target or abs(delta) <= NOISE_FLOOR*(abs(left) + abs(right)):
            return left + right + delta, abs(delta)
        if depth >= tol.max_iter:
            failures.append((a, b))
            return left + right + delta, abs(delta)
        lval, lerr = _recurse(a, m, fa, flm, fm, left, target/2.0, depth + 1)
        rval, rerr = _recurse(m, b, fm, frm, fb, right, target/2.0, depth + 1)
        return lval + rval, lerr + rerr

    value, error = _recurse(a, b, fa, fm, fb, whole, target, 1)
    if failures:
        logger.debug("adaptive Simpson hit depth cap on %d sub-intervals of [%r, %r]", len(failures), a, b)
    return value, error, not failures


def integrate(f: Callable[[float], float], lo: float, hi: float, tol: ToleranceConfig = QUADRATURE_TOL, open_ends: bool = False) -> float:
    """Integrate f over [lo, hi].

    With open_ends=True the interval is mapped through x = c + a*(1.5v - 0.5v**3)
    (c the midpoint, a the half width),
    whose Jacobian vanishes at v = -1 and v = 1. The transformed integrand is
    taken to be zero there, so f is never called at lo or hi. This is the rule
    to use whenever the formula for f degenerates at an end point (a logarithm
    whose argument reaches 0 or infinity, a 0/0 limit).

    Raises ConvergenceError if some sub-interval still misses its target after
    tol.max_iter bisections."""
    if lo > hi:
        raise ValueError("integration bounds out of order: [{!r}, {!r}]".format(lo, hi))
    if lo == hi:
        return 0.0

    if open_ends:
        a = (hi - lo)/2.0
        def g(v):
            if v <= -1.0 or v >= 1.0:
                return 0.0
            # 1 +- (1.5v - 0.5v**3) factorised so that points next to an end do not round onto it
            if v <= 0.0:
                x = lo + 0.5*a*(1.0 + v)**2*(2.0 - v)
            else:
                x = hi - 0.5*a*(1.0 - v)**2*(2.0 + v)
            return f(x)*1.5*a*(1.0 - v*v)
        value, error, converged = _adaptive_simpson(g, -1.0, 1.0, tol)
    else:
        value, error, converged = _adaptive_simpson(f, lo, hi, tol)

    if not converged or not math.isfinite(value):
        raise ConvergenceError("quadrature over [{!r}, {!r}] did not converge".format(lo, hi),
                               estimate=value, error_bound=error)
    return float(value)


def minimize_scalar(f: Callable[[float], float], lo: float, hi: float, tol: ToleranceConfig = MINIMIZE_TOL) -> ScalarMinimum:
    """Minimise f on the closed interval [lo, hi].

    Golden-section search with parabolic steps (scipy's bounded Brent method)
    finds an interior candidate; both end points are then evaluated and the
    smallest of the three is returned. On iteration exhaustion the best point
    seen so far is returned with converged=False."""
    if not lo < hi:
        raise ValueError("minimisation bounds must satisfy lo < hi, got [{!r}, {!r}]".format(lo, hi))

    result = scipy.optimize.minimize_scalar(f, bounds=(lo, hi), method='bounded',
                                            options={ 'xatol' : tol.abs_tol, 'maxiter' : tol.max_iter })
    candidates = [ (float(result.fun), float(result.x)),
                   (float(f(lo)), float(lo)),
                   (float(f(hi)), float(hi)) ]
    best = candidates[0]
    for candidate in candidates[1:]:
        if candidate[0] < best[0]:
            best = candidate
    if not result.success:
        logger.debug("bounded minimisation on [%r, %r] stopped after %d iterations", lo, hi, result.nfev)
    return ScalarMinimum(best[1], best[0], bool(result.success))


def find_root(f: Callable[[float], float], lo: float, hi: float, tol: ToleranceConfig = ROOT_TOL) -> float:
    """Find a zero of f inside the bracket [lo, hi] (Brent's method).

    f(lo) and f(hi) must not have the same strict sign; a zero at either end
    point is returned directly."""
    flo = f(lo)
    fhi = f(hi)
    if flo == 0:
        return float(lo)
    if fhi == 0:
        return float(hi)
    if flo*fhi > 0:
        raise BracketError("f({!r})={!r} and f({!r})={!r} do not bracket a root".format(lo, flo, hi, fhi))
    rtol = max(tol.rel_tol, 4*np.finfo(float).eps)
    root, result = scipy.optimize.brentq(f, lo, hi, xtol=tol.abs_tol, rtol=rtol, maxiter=tol.max_iter,
                                         full_output=True, disp=False)
    if not result.converged:
        raise ConvergenceError("root finding in [{!r}, {!r}] did not converge".format(lo, hi),
                               estimate=root, error_bound=abs(hi - lo))
    return float(root)
