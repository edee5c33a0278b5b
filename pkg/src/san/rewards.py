"""Rate and impulse reward variables, evaluated over simulated trajectories

Reward expressions are written in terms of place names of the atomic
templates: a bare `P` is the sum of all canonical variables coming from
places named P (e.g. total queue length over all replicas), and `P[k]` is
the k-th of them in canonical order.

Confidence intervals are computed from independent replications,
with Student-t quantiles.
"""
import fnmatch
import math
import sys
from enum import Enum
from typing import NamedTuple

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from src.san.errors import AccessViolation, EstimationError, HorizonExceeded, IndexOutOfRange, RewardError
from src.san.expr import BinOp, ListLit, PlaceRead, RealLit, SumOver, Var, compile_expr, transform
from src.san.simulator import Simulator, replay

CONFIDENCE_LEVEL = 0.95


class RewardKind(Enum):
    TIME_AVERAGED = 'time_averaged'
    INSTANT = 'instant'
    ACCUMULATED = 'accumulated'


class RewardVar(NamedTuple):
    """Reward variable; `start` and `end` bound the interval, or both give the instant"""
    name: str
    rate: object = None  #: Expr or None
    impulses: tuple = ()  #: (activity pattern, Expr) pairs
    kind: RewardKind = RewardKind.TIME_AVERAGED
    start: float = 0.0
    end: float = 0.0


class Estimate(NamedTuple):
    mean: float
    half_width95: float
    runs: int

    def __str__(self):
        return f"{self.mean!r} {self.half_width95!r} {self.runs}"


def check_reward(rv):
    """Raise `RewardError` if reward variable is malformed"""
    if rv.rate is None and not rv.impulses:
        raise RewardError(f"reward '{rv.name}' has neither rate nor impulse part")
    if not 0 <= rv.start <= rv.end:
        raise RewardError(f"reward '{rv.name}': interval [{rv.start}, {rv.end}] is invalid")
    if rv.kind == RewardKind.TIME_AVERAGED and rv.start == rv.end:
        raise RewardError(f"reward '{rv.name}': time-averaged over empty interval")
    if rv.kind == RewardKind.INSTANT and rv.impulses:
        raise RewardError(f"reward '{rv.name}': instant-of-time reward cannot have impulses")


def scale_reward(rv, alpha):
    """Reward variable with rate and impulse expressions multiplied by `alpha`"""
    factor = RealLit(float(alpha))
    return rv._replace(
        rate=None if rv.rate is None else BinOp('*', factor, rv.rate),
        impulses=tuple((pattern, BinOp('*', factor, e)) for pattern, e in rv.impulses))


class _RewardBinder:
    """Resolves `P[k]` to k-th canonical variable from places named P"""
    replica_index = 0
    n = 1

    def __init__(self, fm):
        self.fm = fm
        self._vars = {}

    def variables(self, place):
        if place not in self._vars:
            self._vars[place] = self.fm.place_variables(place)
        return self._vars[place]

    def var(self, place, index):
        ids = self.variables(place)
        if not ids:
            raise AccessViolation(f"no place named '{place}' in the model")
        if not 0 <= index < len(ids):
            raise IndexOutOfRange(f"{place}[{index}] outside [0, {len(ids)})")
        return ids[index]

    def bare(self, place):
        return self.var(place, 0)

    def repshared(self, place):
        raise RewardError(f"{place}.repshared() cannot be used in rewards")


def _compile_reward_expr(e, binder):
    def expand(node):
        if isinstance(node, PlaceRead) and node.index is None:
            count = len(binder.variables(node.place))
            if count == 0:
                raise AccessViolation(f"no place named '{node.place}' in the model")
            return SumOver('k__', ListLit(tuple(range(count))), PlaceRead(node.place, Var('k__')))
        return node

    return compile_expr(transform(e, expand), binder)


def _matches(pattern, act):
    return pattern in (act.decl.name, act.label) or fnmatch.fnmatchcase(act.label, pattern)


def evaluate_reward(rv, trajectory, fm):
    """Value of reward variable over given trajectory

    Rate part is integrated over the interval (marking is constant between
    events) and impulse part sums impulse expressions, evaluated on the
    marking after firing, over matching firings with start <= time <= end.
    Time-averaged rewards are divided by the interval length.

    :param RewardVar rv: reward variable
    :param src.san.simulator.Trajectory trajectory: simulated trajectory
    :param src.san.flatten.FlatModel fm: flattened model the trajectory is of
    :rtype: float
    :raises HorizonExceeded: if trajectory ends before the end of interval
    """
    check_reward(rv)
    if trajectory.end_time < rv.end:
        raise HorizonExceeded(f"reward '{rv.name}' needs time {rv.end!r}, "
                              f"trajectory ends at {trajectory.end_time!r}")
    binder = _RewardBinder(fm)
    rate_fn = _compile_reward_expr(rv.rate, binder) if rv.rate is not None else None
    impulse_fns = {}
    for pattern, e in rv.impulses:
        fn = _compile_reward_expr(e, binder)
        for act in fm.activities:
            if _matches(pattern, act):
                impulse_fns.setdefault(act.id, []).append(fn)

    a, b = rv.start, rv.end
    if rv.kind == RewardKind.INSTANT:
        value = rate_fn(trajectory.initial_marking)
        for event, after in replay(trajectory):
            if event.time > b:
                break
            value = rate_fn(after)
        return float(value)

    total = 0.0
    previous = 0.0
    rate = rate_fn(trajectory.initial_marking) if rate_fn is not None else 0
    for event, after in replay(trajectory):
        if event.time > a and previous < b:
            total += rate * (min(event.time, b) - max(previous, a))
        if event.time > b:
            break
        if a <= event.time and event.activity in impulse_fns:
            total += sum(fn(after) for fn in impulse_fns[event.activity])
        previous = event.time
        if rate_fn is not None:
            rate = rate_fn(after)
    else:
        if previous < b:
            total += rate * (b - max(previous, a))

    if rv.kind == RewardKind.TIME_AVERAGED:
        return total / (b - a)
    return total


def estimate_from_values(values):
    """Mean and 95% Student-t half-width of replication results

    :param list[float] values: one reward value per replication, at least 2
    :rtype: Estimate
    :raises EstimationError: for fewer than two values
    """
    runs = len(values)
    if runs < 2:
        raise EstimationError(f"at least 2 replications are needed, got {runs}")
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    std_err = float(values.std(ddof=1)) / math.sqrt(runs)
    quantile = stats.t.ppf((1 + CONFIDENCE_LEVEL) / 2, runs - 1)
    return Estimate(mean, float(quantile * std_err), runs)


def _replicate(rv, fm, cl, cfg):
    trajectory = Simulator(fm, cl, cfg).run()
    return evaluate_reward(rv, trajectory, fm)


def estimate(rv, fm, cl, seeds, cfg, n_jobs=-1, verbose=False):
    """Estimate reward variable from independent replications, one per seed

    :param RewardVar rv: reward variable
    :param src.san.flatten.FlatModel fm: flattened model
    :param src.san.connectivity.ConnectivityLists cl: its connectivity lists
    :param list[int] seeds: seeds of replications, at least 2
    :param src.san.simulator.SimConfig cfg: stop conditions and mode; seed is replaced
    :param int n_jobs: number of concurrent replications, -1 for all CPUs
    :param bool verbose: whether to print progress to standard error
    :rtype: Estimate
    :raises EstimationError: for fewer than two seeds
    """
    if len(seeds) < 2:
        raise EstimationError(f"at least 2 seeds are needed, got {len(seeds)}")
    check_reward(rv)
    if verbose:
        print(f"Running {len(seeds)} replications for reward '{rv.name}'...", file=sys.stderr)
    values = Parallel(n_jobs=n_jobs)(
        delayed(_replicate)(rv, fm, cl, cfg._replace(seed=seed)) for seed in seeds)
    return estimate_from_values(values)
