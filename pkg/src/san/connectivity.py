"""Connectivity lists: which activity instances to re-examine when a variable changes

For every canonical state variable the list holds the activity instances
whose enabling predicate, rate (delay, weight) or case weights read it.
Construction counts *checks*, i.e. examined (activity instance, variable)
pairs; with anonymous replication emulating indexed replicas every
replica reads the whole shared array, which gives n*n checks, while
NARep with a sparse sharing relation only pays for the actual neighbours.

Variables that no case update ever writes cannot change, so they are left
out of the lists and of the check count. Membership therefore holds over
mutable variables only: `a` is in the list of `v` iff `v` is written by
some case and read by the gate of `a`, and the check count is the number
of such pairs, which can be less than the total of gate reads.
"""
import time
from collections import defaultdict
from typing import NamedTuple

#: header of CSV rows written by `connectivity --csv`
CSV_HEADER = ['model', 'n', 'mode', 'vars', 'activities', 'checks', 'build_ns']


class ConnectivityLists(NamedTuple):
    var_to_activities: dict  #: variable id -> ascending tuple of activity instance ids
    check_count: int
    build_time_ns: int

    def activities_of(self, var):
        return self.var_to_activities.get(var, ())


class ConnectivityReport(NamedTuple):
    check_count: int
    var_count: int
    activity_count: int
    density: float  #: checks / (vars * activities)
    build_time_ns: int


def mutable_variables(fm):
    """Ids of variables written by at least one case update"""
    result = set()
    for act in fm.activities:
        result.update(act.writes)
    return result


def build_connectivity(fm):
    """Build connectivity lists of flattened model

    Example:
        >>> cl = build_connectivity(flatten(ring))  # NARep ring, n=4
        >>> cl.check_count
        12

    :param src.san.flatten.FlatModel fm: flattened model
    :return: inverse of the gate read relation, with check count and build time
    :rtype: ConnectivityLists
    """
    start = time.perf_counter_ns()

    mutable = mutable_variables(fm)
    lists = defaultdict(list)
    checks = 0
    for act in fm.activities:
        for var in sorted(act.gate_reads):
            if var in mutable:
                checks += 1
                lists[var].append(act.id)
    var_to_activities = {var: tuple(lists[var]) for var in sorted(lists)}

    return ConnectivityLists(var_to_activities, checks, time.perf_counter_ns() - start)


def affected_activities(cl, changed_vars):
    """Activity instances reading any of `changed_vars`, ascending

    :param ConnectivityLists cl: connectivity lists
    :param changed_vars: ids of changed variables
    :rtype: list[int]
    """
    result = set()
    for var in changed_vars:
        result.update(cl.var_to_activities.get(var, ()))
    return sorted(result)


def connectivity_report(fm, cl=None):
    """Summary of connectivity construction, for printing and CSV rows

    :param src.san.flatten.FlatModel fm: flattened model
    :param cl: already built lists; built here if None
    :type cl: ConnectivityLists or None
    :rtype: ConnectivityReport
    """
    if cl is None:
        cl = build_connectivity(fm)
    n_vars, n_activities = len(fm.variables), len(fm.activities)
    density = cl.check_count / (n_vars * n_activities) if n_vars and n_activities else 0.0
    return ConnectivityReport(cl.check_count, n_vars, n_activities, density, cl.build_time_ns)


def format_report(report):
    """Text printed by `connectivity --count`; build time is left out to keep it stable"""
    return (f"checks\t{report.check_count}\n"
            f"vars\t{report.var_count}\n"
            f"activities\t{report.activity_count}\n"
            f"density\t{report.density!r}\n")


def csv_row(model, n, mode, report):
    """Row of `CSV_HEADER` columns for given report"""
    return dict(zip(CSV_HEADER, [model, n, mode, report.var_count, report.activity_count,
                                 report.check_count, report.build_time_ns]))
