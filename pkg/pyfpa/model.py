"""Value distributions, auction instances and bid strategies for the
single-item sealed-bid first-price auction.

Each of n bidders draws a value independently from a bounded distribution
(see DistributionSpec and its subclasses), and bids according to a
monotone piecewise-linear strategy (BidStrategy). The highest bid wins and
pays its bid; ties go to the lowest index.

This module also houses the interim quantities of a strategy profile:
the probability of winning with a given bid, the same probability
conditioned on the event that a bidder holds the highest value, the
threshold bid a bidder faces, and seeded sampling of auction plays."""

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .numerics import find_root, ROOT_TOL

__all__ = [ "DistributionSpec", "UniformDistribution", "PowerDistribution", "PiecewiseDistribution",
            "AuctionInstance", "BidStrategy", "SampleOutcome", "OutcomeBatch", "InterimQuantities",
            "InvalidInstanceError", "InvalidDistributionError", "InvalidStrategyError",
            "InstanceParseError", "DegenerateConditioningError",
            "win_probability", "bid_win_probability", "conditional_win_probability", "interim", "threshold_support",
            "threshold_quantile", "sample_outcome", "sample_outcomes", "conditional_values",
            "quantile_grid", "load_strategies", "check_profile", "play", "run_shards",
            "TIE_RULES", "DEFAULT_SHARDS" ]

logger = logging.getLogger(__name__)

DEFAULT_SHARDS = 8

# Slack allowed on the shape checks of strategies read from files or produced by solvers
SHAPE_TOL = 1e-9


class InvalidInstanceError(ValueError):
    pass

class InvalidDistributionError(InvalidInstanceError):
    pass

class InvalidStrategyError(ValueError):
    pass

class InstanceParseError(Exception):
    def __init__(self, source, reason):
        self.source = source
        super(InstanceParseError, self).__init__("Could not parse {}: {}".format(source, reason))

class DegenerateConditioningError(ValueError):
    pass


class DistributionSpec (object):
    """A value distribution with bounded support [lo, hi].

    Subclasses provide cdf, pdf and quantile; all three accept scalars or
    numpy arrays. Sampling is by inversion of the CDF."""

    kind = None

    def __init__(self, lo, hi):
        lo = float(lo)
        hi = float(hi)
        if not (0.0 <= lo < hi < np.inf):
            raise InvalidDistributionError("support must satisfy 0 <= lo < hi < inf, got [{!r}, {!r}]".format(lo, hi))
        self.lo = lo
        self.hi = hi

    def cdf(self, v):
        raise NotImplementedError

    def pdf(self, v):
        raise NotImplementedError

    def quantile(self, q):
        raise NotImplementedError

    def sample(self, rng, size=None):
        """Draw values by inverse-CDF sampling from a numpy Generator."""
        return self.quantile(rng.random(size))

    def breakpoints(self):
        """Points in the support at which the density may jump."""
        return [ self.lo, self.hi ]

    def to_json(self):
        raise NotImplementedError

    def description(self):
        """Return a single line description of this distribution."""
        return "{}[{:g}, {:g}]".format(self.kind, self.lo, self.hi)

    def __eq__(self, other):
        return isinstance(other, DistributionSpec) and self.to_json() == other.to_json()

    def __hash__(self):
        return hash(json.dumps(self.to_json(), sort_keys=True))

    def __repr__(self):
        return "<{} {}>".format(type(self).__name__, self.description())

    @staticmethod
    def from_json(data):
        """Build a distribution from its instance-file dictionary."""
        if not isinstance(data, dict) or "kind" not in data:
            raise InstanceParseError("bidder entry", "expected an object with a 'kind' field, got {!r}".format(data))
        kind = data["kind"]
        try:
            if kind == "uniform":
                return UniformDistribution(data["lo"], data["hi"])
            elif kind == "power":
                return PowerDistribution(data["a"], data["h"])
            elif kind == "piecewise":
                return PiecewiseDistribution(data["knots"])
        except (KeyError, TypeError) as e:
            raise InstanceParseError("bidder entry", "missing or malformed field {} in {!r}".format(e, data))
        raise InstanceParseError("bidder entry", "unknown distribution kind {!r}".format(kind))


class UniformDistribution (DistributionSpec):
    kind = "uniform"

    def cdf(self, v):
        return np.clip((np.asarray(v, dtype=float) - self.lo)/(self.hi - self.lo), 0.0, 1.0)[()]

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        return np.where((v >= self.lo) & (v <= self.hi), 1.0/(self.hi - self.lo), 0.0)[()]

    def quantile(self, q):
        q = np.clip(np.asarray(q, dtype=float), 0.0, 1.0)
        return (self.lo + q*(self.hi - self.lo))[()]

    def to_json(self):
        return { "kind" : "uniform", "lo" : self.lo, "hi" : self.hi }


class PowerDistribution (DistributionSpec):
    """F(v) = (v/h)**a on [0, h]."""
    kind = "power"

    def __init__(self, a, h):
        a = float(a)
        if not (0.0 < a < np.inf):
            raise InvalidDistributionError("power exponent must be positive, got {!r}".format(a))
        super(PowerDistribution, self).__init__(0.0, h)
        self.a = a

    def cdf(self, v):
        return (np.clip(np.asarray(v, dtype=float)/self.hi, 0.0, 1.0)**self.a)[()]

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        inside = (v >= 0.0) & (v <= self.hi)
        with np.errstate(divide='ignore', invalid='ignore'):
            dens = self.a*np.clip(v/self.hi, 0.0, 1.0)**(self.a - 1.0)/self.hi
        return np.where(inside, dens, 0.0)[()]

    def quantile(self, q):
        q = np.clip(np.asarray(q, dtype=float), 0.0, 1.0)
        return (self.hi*q**(1.0/self.a))[()]

    def description(self):
        return "power(a={:g})[0, {:g}]".format(self.a, self.hi)

    def to_json(self):
        return { "kind" : "power", "a" : self.a, "h" : self.hi }


class PiecewiseDistribution (DistributionSpec):
    """A distribution whose CDF is linear between knots (v_k, F_k)."""
    kind = "piecewise"

    def __init__(self, knots):
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 2 or knots.shape[1] != 2 or knots.shape[0] < 2:
            raise InvalidDistributionError("piecewise CDF needs at least two (v, F) knots")
        vs, Fs = knots[:, 0], knots[:, 1]
        if np.any(np.diff(vs) <= 0) or np.any(np.diff(Fs) <= 0):
            raise InvalidDistributionError("piecewise CDF knots must be strictly increasing in both coordinates")
        if Fs[0] != 0.0 or Fs[-1] != 1.0:
            raise InvalidDistributionError("piecewise CDF must run from F=0 to F=1, got {!r} to {!r}".format(Fs[0], Fs[-1]))
        super(PiecewiseDistribution, self).__init__(vs[0], vs[-1])
        self.values = vs
        self.probabilities = Fs
        self.slopes = np.diff(Fs)/np.diff(vs)

    def cdf(self, v):
        return np.interp(v, self.values, self.probabilities)[()]

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        k = np.clip(np.searchsorted(self.values, v, side='right') - 1, 0, len(self.slopes) - 1)
        return np.where((v >= self.lo) & (v <= self.hi), self.slopes[k], 0.0)[()]

    def quantile(self, q):
        return np.interp(np.clip(q, 0.0, 1.0), self.probabilities, self.values)[()]

    def breakpoints(self):
        return list(self.values)

    def description(self):
        return "piecewise({} knots)[{:g}, {:g}]".format(len(self.values), self.lo, self.hi)

    def to_json(self):
        return { "kind" : "piecewise", "knots" : [ [ float(v), float(F) ] for (v, F) in zip(self.values, self.probabilities) ] }


def quantile_grid(dist, size):
    """size values of dist placed uniformly in quantile space, end points included."""
    values = np.unique(dist.quantile(np.linspace(0.0, 1.0, size)))
    values[0] = dist.lo
    values[-1] = dist.hi
    return values


class AuctionInstance (object):
    """n >= 2 bidders with independent value distributions."""

    def __init__(self, bidders):
        bidders = tuple(bidders)
        if len(bidders) < 2:
            raise InvalidInstanceError("an auction instance needs at least two bidders, got {}".format(len(bidders)))
        for d in bidders:
            if not isinstance(d, DistributionSpec):
                raise InvalidInstanceError("bidder {!r} is not a distribution".format(d))
        self.bidders = bidders

    @property
    def n(self):
        return len(self.bidders)

    def __len__(self):
        return len(self.bidders)

    def __getitem__(self, i):
        return self.bidders[i]

    def __iter__(self):
        return iter(self.bidders)

    def is_symmetric(self):
        return all(d == self.bidders[0] for d in self.bidders[1:])

    def upper(self):
        return max(d.hi for d in self.bidders)

    def description(self):
        return ", ".join(d.description() for d in self.bidders)

    def to_json(self):
        return { "bidders" : [ d.to_json() for d in self.bidders ] }

    @classmethod
    def from_json(cls, data):
        if not isinstance(data, dict) or not isinstance(data.get("bidders"), list):
            raise InstanceParseError("instance", "expected an object with a 'bidders' list")
        return cls([ DistributionSpec.from_json(b) for b in data["bidders"] ])

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except ValueError as e:
            raise InstanceParseError(path, str(e))
        try:
            return cls.from_json(data)
        except InstanceParseError as e:
            raise InstanceParseError(path, str(e))

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2)


class BidStrategy (object):
    """A continuous, nondecreasing, piecewise-linear map from values to bids.

    The map is given by knots (value, bid) with strictly increasing values.
    Bids may not exceed values unless allow_overbidding is set, which is
    only meant for constructing deliberately broken profiles."""

    def __init__(self, values, bids, allow_overbidding=False):
        values = np.asarray(values, dtype=float)
        bids = np.asarray(bids, dtype=float)
        if values.ndim != 1 or values.shape != bids.shape or len(values) < 2:
            raise InvalidStrategyError("a strategy needs at least two (value, bid) knots")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(bids))):
            raise InvalidStrategyError("strategy knots must be finite")
        if np.any(np.diff(values) <= 0):
            raise InvalidStrategyError("strategy values must be strictly increasing")
        if np.any(np.diff(bids) < -SHAPE_TOL):
            raise InvalidStrategyError("strategy bids must be nondecreasing in value")
        if not allow_overbidding and np.any(bids > values + SHAPE_TOL):
            k = int(np.argmax(bids - values))
            raise InvalidStrategyError("strategy overbids at value {!r} (bid {!r})".format(values[k], bids[k]))
        if np.any(bids < 0):
            raise InvalidStrategyError("bids must be non-negative")
        self.values = values
        self.bids = np.maximum.accumulate(bids)
        self.allow_overbidding = allow_overbidding

    @property
    def knots(self):
        return list(zip(self.values.tolist(), self.bids.tolist()))

    @property
    def lo(self):
        return float(self.values[0])

    @property
    def hi(self):
        return float(self.values[-1])

    def bid(self, v):
        return np.interp(v, self.values, self.bids)[()]

    def max_bid(self):
        return float(self.bids[-1])

    def check_domain(self, dist):
        """Raise InvalidStrategyError unless the knots span exactly dist's support."""
        scale = max(1.0, dist.hi)
        if abs(self.lo - dist.lo) > SHAPE_TOL*scale or abs(self.hi - dist.hi) > SHAPE_TOL*scale:
            raise InvalidStrategyError("strategy domain [{!r}, {!r}] does not match support [{!r}, {!r}]"
                                       .format(self.lo, self.hi, dist.lo, dist.hi))

    def inverse(self, b, strict=False):
        """Supremum of the values whose bid is <= b (or < b when strict).

        Returns -inf below the lowest bid and +inf above the highest one."""
        b = np.asarray(b, dtype=float)
        side = 'left' if strict else 'right'
        k = np.searchsorted(self.bids, b, side=side) - 1
        last = len(self.bids) - 1
        kk = np.clip(k, 0, last - 1)
        b0 = self.bids[kk]
        b1 = self.bids[kk + 1]
        with np.errstate(divide='ignore', invalid='ignore'):
            frac = np.where(b1 > b0, (b - b0)/(b1 - b0), 1.0)
        v = self.values[kk] + np.clip(frac, 0.0, 1.0)*(self.values[kk + 1] - self.values[kk])
        v = np.where(k < 0, -np.inf, np.where(k >= last, np.inf, v))
        return v[()]

    def bid_cdf(self, dist, b, strict=False):
        """B(b) = P[bid <= b] (P[bid < b] when strict) for values drawn from dist.

        The right-continuous version is the default; the strict version is
        the left limit, used to express the lowest-index tie rule."""
        return dist.cdf(np.clip(self.inverse(b, strict=strict), dist.lo, dist.hi))

    def shifted(self, delta):
        """A copy with every bid raised by delta (overbidding allowed)."""
        return BidStrategy(self.values, self.bids + delta, allow_overbidding=True)

    @classmethod
    def from_function(cls, dist, fn, knots=1024, allow_overbidding=False):
        """Sample fn onto knots placed uniformly in dist's quantile space."""
        values = quantile_grid(dist, knots)
        bids = np.array([ fn(v) for v in values ], dtype=float)
        return cls(values, bids, allow_overbidding=allow_overbidding)

    @classmethod
    def from_csv(cls, path, allow_overbidding=False):
        try:
            with open(path, "r", newline="", encoding="utf-8") as f:
                reader = csv.reader(f)
                header = next(reader)
                if [ h.strip() for h in header ] != [ "value", "bid" ]:
                    raise InstanceParseError(path, "expected header 'value,bid', got {!r}".format(header))
                rows = [ (float(r[0]), float(r[1])) for r in reader if len(r) > 0 ]
        except (StopIteration, IndexError, ValueError) as e:
            raise InstanceParseError(path, "bad strategy row ({})".format(e))
        if len(rows) < 2:
            raise InstanceParseError(path, "a strategy needs at least two knots")
        rows = np.array(rows)
        return cls(rows[:, 0], rows[:, 1], allow_overbidding=allow_overbidding)

    def to_csv(self, path, fmt="{:.12g}"):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow([ "value", "bid" ])
            for (v, b) in zip(self.values, self.bids):
                writer.writerow([ fmt.format(v), fmt.format(b) ])

    def __repr__(self):
        return "<BidStrategy {} knots on [{:g}, {:g}], max bid {:g}>".format(len(self.values), self.lo, self.hi, self.max_bid())


def load_strategies(paths):
    return [ BidStrategy.from_csv(p) for p in paths ]


def check_profile(instance, strategies):
    if len(strategies) != instance.n:
        raise InvalidStrategyError("{} strategies supplied for {} bidders".format(len(strategies), instance.n))
    for (dist, strategy) in zip(instance, strategies):
        strategy.check_domain(dist)


@dataclass(frozen=True)
class InterimQuantities:
    value: float
    bid: float
    win_prob: float
    expected_payment: float
    expected_utility: float
    conditional: bool


@dataclass(frozen=True)
class SampleOutcome:
    values: tuple
    bids: tuple
    winner: int
    thresholds: tuple
    payment: float

    def wins(self, i):
        return self.winner == i


@dataclass
class OutcomeBatch:
    """Many auction plays at once; row k is one play."""
    values: np.ndarray
    bids: np.ndarray
    winner: np.ndarray
    thresholds: np.ndarray
    payment: np.ndarray

    def __len__(self):
        return len(self.winner)

    @property
    def winner_value(self):
        return self.values[np.arange(len(self.winner)), self.winner]

    @property
    def best_value(self):
        return self.values.max(axis=1)

    @property
    def best_bidder(self):
        return self.values.argmax(axis=1)


TIE_RULES = ( "win", "lowest-index", "split" )


def bid_win_probability(instance, strategies, i, b, ties="win"):
    """Probability that bidder i wins with bid b (vectorised over b, no profile checks).

    ties decides what happens when an opponent bids exactly b:
    "win" counts every tie as a win (the product of the right-continuous bid
    CDFs), "lowest-index" requires bidders j < i to be strictly outbid, and
    "split" averages the strict and non-strict products, which gives a tie
    with one opponent half the item."""
    if ties not in TIE_RULES:
        raise ValueError("unknown tie rule {!r}, expected one of {}".format(ties, TIE_RULES))
    b = np.asarray(b, dtype=float)
    x = np.ones_like(b)
    strict = np.ones_like(b)
    for j in range(instance.n):
        if j == i:
            continue
        x = x*strategies[j].bid_cdf(instance[j], b, strict=(ties == "lowest-index" and j < i))
        if ties == "split":
            strict = strict*strategies[j].bid_cdf(instance[j], b, strict=True)
    if ties == "split":
        return 0.5*(x + strict)
    return x


def win_probability(instance, strategies, i, b):
    """Interim probability that bidder i wins with bid b: the product of the
    opponents' bid CDFs at b."""
    check_profile(instance, strategies)
    if np.any(np.asarray(b) < 0):
        raise ValueError("bids must be non-negative, got {!r}".format(b))
    return bid_win_probability(instance, strategies, i, b)[()]


def _conditional_win_probability(instance, strategies, i, v_i, b):
    x = np.ones_like(np.asarray(b, dtype=float))
    for j in range(instance.n):
        if j == i:
            continue
        Fj = float(instance[j].cdf(v_i))
        if Fj <= 0.0:
            raise DegenerateConditioningError("bidder {} has no mass below {!r}; the event that bidder {} holds the highest value has probability 0"
                                              .format(j, v_i, i))
        x = x*np.minimum(strategies[j].bid_cdf(instance[j], b)/Fj, 1.0)
    return x


def conditional_win_probability(instance, strategies, i, v_i, b):
    """Probability that bid b wins for bidder i given that every opponent's value is at most v_i.

    Equivalently, the CDF at b of bidder i's threshold bid under that
    conditioning."""
    check_profile(instance, strategies)
    return _conditional_win_probability(instance, strategies, i, v_i, b)[()]


def interim(instance, strategies, i, v_i, conditional=False):
    """Allocation, payment and utility of bidder i with value v_i bidding b_i(v_i)."""
    check_profile(instance, strategies)
    dist = instance[i]
    if not (dist.lo <= v_i <= dist.hi):
        raise ValueError("value {!r} outside bidder {}'s support [{!r}, {!r}]".format(v_i, i, dist.lo, dist.hi))
    b = float(strategies[i].bid(v_i))
    if conditional:
        x = float(_conditional_win_probability(instance, strategies, i, v_i, b))
    else:
        x = float(bid_win_probability(instance, strategies, i, b))
    return InterimQuantities(value=float(v_i), bid=b, win_prob=x, expected_payment=b*x,
                             expected_utility=(v_i - b)*x, conditional=conditional)


def threshold_support(instance, strategies, i, v_i):
    """Lowest and highest threshold bid bidder i can face given every opponent's value is at most v_i."""
    others = [ j for j in range(instance.n) if j != i ]
    lo = max(strategies[j].bid(instance[j].lo) for j in others)
    hi = max(strategies[j].bid(min(v_i, instance[j].hi)) for j in others)
    return float(lo), float(hi)


def threshold_quantile(instance, strategies, i, v_i, z, tol=ROOT_TOL):
    """The threshold bid with quantile z in its distribution conditioned on
    bidder i holding the highest value v_i.

    When the lowest possible threshold already has conditional probability
    at least z, that lowest threshold is returned. The highest possible
    threshold always has conditional probability 1, so it is returned
    whenever rounding in the inverse bid CDFs leaves it short of z."""
    if not (0.0 < z <= 1.0):
        raise ValueError("threshold quantile must lie in (0, 1], got {!r}".format(z))
    check_profile(instance, strategies)
    lo, hi = threshold_support(instance, strategies, i, v_i)

    def gap(b):
        return float(_conditional_win_probability(instance, strategies, i, v_i, b)) - z

    if gap(lo) >= 0.0:
        return lo
    if gap(hi) <= 0.0:
        return hi
    return find_root(gap, lo, hi, tol)


def _thresholds(bids):
    n = bids.shape[1]
    return np.column_stack([ np.max(np.delete(bids, i, axis=1), axis=1) for i in range(n) ])


def sample_outcome(instance, strategies, rng_seed, values=None):
    """One seeded play of the auction. values, when given, replaces the draw."""
    check_profile(instance, strategies)
    if values is None:
        rng = np.random.default_rng(rng_seed)
        values = [ float(d.sample(rng)) for d in instance ]
    values = np.asarray(values, dtype=float)
    bids = np.array([ s.bid(v) for (s, v) in zip(strategies, values) ], dtype=float)
    winner = int(np.argmax(bids))
    thresholds = _thresholds(bids[None, :])[0]
    return SampleOutcome(values=tuple(values.tolist()), bids=tuple(bids.tolist()), winner=winner,
                         thresholds=tuple(thresholds.tolist()), payment=float(bids[winner]))


def play(instance, strategies, values):
    bids = np.column_stack([ s.bid(values[:, i]) for (i, s) in enumerate(strategies) ])
    # argmax picks the first maximum, i.e. the lowest index wins ties
    winner = np.argmax(bids, axis=1)
    payment = bids[np.arange(len(winner)), winner]
    return OutcomeBatch(values=values, bids=bids, winner=winner, thresholds=_thresholds(bids), payment=payment)


def _shard_sizes(samples, shards):
    shards = max(1, min(shards, samples))
    base, extra = divmod(samples, shards)
    return [ base + (1 if k < extra else 0) for k in range(shards) ]


def run_shards(work, seed, samples, shards, threads):
    """Run work(rng, size) over deterministic per-shard substreams; results in shard order."""
    sizes = _shard_sizes(samples, shards)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(streams, sizes))
    threads = threads or os.cpu_count() or 1
    if threads <= 1 or len(jobs) == 1:
        return [ work(np.random.default_rng(s), m) for (s, m) in jobs ]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job : work(np.random.default_rng(job[0]), job[1]), jobs))


def sample_outcomes(instance, strategies, seed, samples, shards=DEFAULT_SHARDS, threads=None):
    """samples seeded plays, drawn in shards with independent substreams.

    The result depends only on (seed, samples, shards), never on threads."""
    check_profile(instance, strategies)
    if samples < 1:
        raise ValueError("need at least one sample")

    def work(rng, size):
        values = np.column_stack([ d.sample(rng, size) for d in instance ])
        return play(instance, strategies, values)

    parts = run_shards(work, seed, samples, shards, threads)
    return OutcomeBatch(values=np.concatenate([ p.values for p in parts ]),
                        bids=np.concatenate([ p.bids for p in parts ]),
                        winner=np.concatenate([ p.winner for p in parts ]),
                        thresholds=np.concatenate([ p.thresholds for p in parts ]),
                        payment=np.concatenate([ p.payment for p in parts ]))


def conditional_values(instance, i, v_i, rng, samples):
    """Value profiles drawn conditionally on bidder i holding the highest value v_i.

    Column i is v_i; every other column is drawn from its distribution
    truncated to [lo, v_i] by inverting the CDF, so no draws are rejected."""
    columns = []
    for (j, d) in enumerate(instance):
        if j == i:
            columns.append(np.full(samples, float(v_i)))
            continue
        Fj = float(d.cdf(v_i))
        if Fj <= 0.0:
            raise DegenerateConditioningError("bidder {} has no mass below {!r}".format(j, v_i))
        columns.append(d.quantile(rng.random(samples)*Fj))
    return np.column_stack(columns)
