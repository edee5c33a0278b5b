"""Scaling benchmark of connectivity list construction

For ring, star and full-connection topologies two equivalent models are
generated:

- 'narep': NARep of a one-place cell, with the place rep-shared along the
  topology's neighbour relation, and indices written with `repindex()`;
- 'rep-emulated': anonymous Rep sharing an n-entry array place among all
  replicas, each replica finding its entry through a local place `me`
  initialised to its replica index.

Each cell flips its place with exponential rate 0.1*(1+S), where S is the
number of flipped cells in its neighbourhood, so both models have the
same stochastic behaviour while their dependency structure differs.
"""
import sys
from typing import NamedTuple

import pandas as pd
from tqdm import tqdm

from src.san.compose import RepShared, atomic, full_access, narep, rep, ring_access, star_access
from src.san.connectivity import build_connectivity
from src.san.expr import BoolLit, IntLit, PlaceRead, RepIndex, UpdateStmt, parse
from src.san.flatten import flatten
from src.san.model import ActivityDecl, AtomicModel, Case, Distribution, PlaceDecl, Timed

TOPOLOGIES = ('ring', 'star', 'full')
MODES = ('narep', 'rep-emulated')
#: columns of `run_bench` result
CSV_HEADER = ['topology', 'n', 'mode', 'vars', 'activities', 'checks', 'build_ns_min']


class Topology(NamedTuple):
    kind: str  #: one of TOPOLOGIES
    k: int = 1  #: neighbours on each side, for ring

    def __str__(self):
        if self.kind == 'ring' and self.k != 1:
            return f"ring-k{self.k}"
        return self.kind

    def access(self, n):
        """Rep-shared access map of the topology for n replicas"""
        if self.kind == 'ring':
            return ring_access(n, self.k)
        if self.kind == 'star':
            return star_access(n)
        return full_access(n)


class BenchSpec(NamedTuple):
    topology: Topology
    n_list: tuple[int, ...]
    mode: str = 'both'  #: 'narep', 'rep-emulated', or 'both'
    repeats: int = 5

    def modes(self):
        return MODES if self.mode == 'both' else (self.mode,)


def check_spec(spec):
    """Raise ValueError for invalid benchmark specification"""
    if spec.topology.kind not in TOPOLOGIES:
        raise ValueError(f"unknown topology '{spec.topology.kind}', expected one of {TOPOLOGIES}")
    if spec.topology.k < 1:
        raise ValueError(f"ring neighbourhood must be at least 1, got {spec.topology.k}")
    if spec.mode != 'both' and spec.mode not in MODES:
        raise ValueError(f"unknown mode '{spec.mode}'")
    if not spec.n_list or list(spec.n_list) != sorted(spec.n_list) or spec.n_list[0] < 1:
        raise ValueError(f"list of n must be ascending and positive, got {spec.n_list}")
    if spec.repeats < 1:
        raise ValueError(f"repeats must be at least 1, got {spec.repeats}")


def neighbourhood_sum(topology, me):
    """Source of S, the sum of marks seen by replica `me` (expression text)"""
    if topology.kind == 'ring':
        k = topology.k
        return f"sum(d in range(0, {2 * k + 1}): P[({me} + d - {k}) % n])"
    if topology.kind == 'star':
        return f"(if {me} == 0 then sum(j in range(0, n): P[j]) else P[0] + P[{me}])"
    return "sum(j in range(0, n): P[j])"


def _flip(rate_source, target):
    return ActivityDecl(
        'flip',
        Timed(Distribution.EXPONENTIAL, parse(rate_source)),
        BoolLit(True),
        (Case(IntLit(1), (UpdateStmt(target, parse(f"1 - {target}")),)),))


def cell_template(topology, mode, n):
    """Atomic template replicated by `generate_model`"""
    if mode == 'narep':
        rate = f"0.1 * (1 + {neighbourhood_sum(topology, 'repindex()')})"
        return AtomicModel('cell', (PlaceDecl('P'),), (_flip(rate, PlaceRead('P')),))
    rate = f"0.1 * (1 + {neighbourhood_sum(topology, 'me')})"
    return AtomicModel('cell',
                       (PlaceDecl('P', n, IntLit(0)), PlaceDecl('me', None, RepIndex())),
                       (_flip(rate, PlaceRead('P', PlaceRead('me'))),))


def generate_model(topology, n, mode):
    """Composition tree of benchmark model

    Example:
        >>> generate_model(Topology('ring'), 5, 'narep').sharing['P'].access[0]
        frozenset({0, 1, 4})

    :param Topology topology: neighbour relation
    :param int n: number of replicas, at least 1
    :param str mode: 'narep' or 'rep-emulated'
    :return: NARep or Rep node, named after the topology kind
    """
    if mode == 'narep':
        return narep(atomic(cell_template(topology, mode, n)), n,
                     {'P': RepShared(topology.access(n))}, name=topology.kind)
    if mode == 'rep-emulated':
        return rep(atomic(cell_template(topology, mode, n)), n, {'P'}, name=topology.kind)
    raise ValueError(f"unknown mode '{mode}', expected one of {MODES}")


def expected_checks(topology, n, mode):
    """Closed-form check count of benchmark model"""
    if mode == 'rep-emulated' or topology.kind == 'full':
        return n * n
    if topology.kind == 'star':
        return 3 * n - 2 if n > 1 else 1
    return len(range(-topology.k, topology.k + 1)) * n if n >= 2 * topology.k + 1 else n * n


def measure(topology, n, mode, repeats):
    """Flatten model once, build connectivity lists `repeats` times

    :return: row with `CSV_HEADER` keys; build time is the minimum over repeats
    :rtype: dict
    """
    fm = flatten(generate_model(topology, n, mode))
    best_ns, checks = None, None
    for _ in range(repeats):
        cl = build_connectivity(fm)
        checks = cl.check_count
        best_ns = cl.build_time_ns if best_ns is None else min(best_ns, cl.build_time_ns)
    return dict(zip(CSV_HEADER, [str(topology), n, mode, fm.var_count, len(fm.activities),
                                 checks, best_ns]))


def run_bench(spec, verbose=False):
    """Measure connectivity construction for every n and mode of `spec`

    Benchmarks run sequentially.

    :param BenchSpec spec: topology, list of n, mode(s), repeats
    :param bool verbose: whether to show progress bar on standard error
    :return: one row per (n, mode), columns `CSV_HEADER`
    :rtype: pd.DataFrame
    """
    check_spec(spec)
    rows = []
    for n in tqdm(spec.n_list, desc=f"n ({spec.topology})", disable=not verbose, file=sys.stderr):
        for mode in spec.modes():
            row = measure(spec.topology, n, mode, spec.repeats)
            if verbose:
                tqdm.write(f"{row['topology']} n={n} {mode}: {row['checks']} checks, "
                           f"{row['build_ns_min']} ns", file=sys.stderr)
            rows.append(row)
    return pd.DataFrame(rows, columns=CSV_HEADER)
