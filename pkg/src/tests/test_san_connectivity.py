import unittest

import numpy as np

from src.san.bench import Topology, generate_model
from src.san.compose import atomic, join, narep
from src.san.connectivity import (affected_activities, build_connectivity, connectivity_report,
                                  csv_row, format_report, mutable_variables, CSV_HEADER)
from src.san.expr import compile_expr
from src.san.flatten import flatten
from src.san.model import AtomicModel, PlaceDecl
from src.san.modelfile import load
from src.tests import MODELS_DIR
from src.tests.test_san_flatten import cell_model


def bench_model(kind, n, mode='narep'):
    return flatten(generate_model(Topology(kind), n, mode))


class BuildConnectivityTestCase(unittest.TestCase):
    def test_rep_emulation(self):
        cl = build_connectivity(bench_model('ring', 4, 'rep-emulated'))
        self.assertEqual(16, cl.check_count, "every replica reads all n entries: n*n checks")

    def test_narep_ring(self):
        cl = build_connectivity(bench_model('ring', 4))
        self.assertEqual(12, cl.check_count, "3 neighbour slots per replica: 3n checks")
        self.assertEqual((0, 1, 3), cl.activities_of(0), "P@0 is read by replicas 0, 1 and 3")

    def test_single_activity(self):
        cl = build_connectivity(flatten(narep(atomic(cell_model(rate='P + 1.0')), 1)))
        self.assertEqual(1, cl.check_count, "single activity reading its own P")
        self.assertEqual({0: (0,)}, cl.var_to_activities, "P@0 -> flip@0")

    def test_inverse_of_gate_reads(self):
        fm = bench_model('star', 6)
        cl = build_connectivity(fm)
        for act in fm.activities:
            for var in range(fm.var_count):
                self.assertEqual(var in act.gate_reads, act.id in cl.activities_of(var),
                                 f"activity {act.id} in list of variable {var}")
        self.assertEqual(sum(len(act.gate_reads) for act in fm.activities), cl.check_count,
                         "every gate read of a written variable is one check")

    def test_immutable_variables(self):
        fm = bench_model('ring', 5, 'rep-emulated')
        cl = build_connectivity(fm)
        me_vars = set(fm.place_variables('me'))
        self.assertEqual(5, len(me_vars), "one replica index place per replica")
        self.assertFalse(me_vars & set(cl.var_to_activities), "never written variables have no list")
        self.assertEqual(sum(len(act.gate_reads) for act in fm.activities) - len(me_vars), cl.check_count,
                         "reads of 'me' are not checks")

    def test_full_connection_structure(self):
        for n in (5, 50):
            narep_cl = build_connectivity(bench_model('full', n))
            emulated_cl = build_connectivity(bench_model('full', n, 'rep-emulated'))
            self.assertEqual(sorted(narep_cl.var_to_activities.values()),
                             sorted(emulated_cl.var_to_activities.values()),
                             f"same lists up to variable ids, n={n}")
            self.assertEqual(n * n, narep_cl.check_count, f"n*n checks, n={n}")

    def test_deterministic(self):
        fm = bench_model('ring', 20)
        self.assertEqual(build_connectivity(fm).var_to_activities, build_connectivity(fm).var_to_activities,
                         "same lists on every build")


class SoundnessTestCase(unittest.TestCase):
    def assert_sound(self, fm, name, seed):
        """Changing a variable outside the gate reads keeps enabling and rate"""
        rng = np.random.default_rng(seed)
        cl = build_connectivity(fm)
        mutable = mutable_variables(fm)
        for act, binder in zip(fm.activities, fm.binders):
            decl = act.decl
            enabling = compile_expr(decl.enabling, binder)
            parameter = compile_expr(decl.timing.parameter if decl.is_timed else decl.timing.weight, binder)
            for var in mutable:
                self.assertEqual(var in act.gate_reads, act.id in cl.activities_of(var),
                                 f"{name}: {act.label} in list of variable {var}")
            for _ in range(20):
                first = [int(v) for v in rng.integers(0, 3, fm.var_count)]
                second = [first[var] if var in act.gate_reads else int(v)
                          for var, v in enumerate(rng.integers(0, 3, fm.var_count))]
                self.assertEqual(enabling(first), enabling(second), f"{name}: enabling of {act.label}")
                self.assertEqual(parameter(first), parameter(second), f"{name}: rate of {act.label}")

    def test_bench_models(self):
        for kind in ('ring', 'star', 'full'):
            for mode in ('narep', 'rep-emulated'):
                self.assert_sound(bench_model(kind, 6, mode), f"{kind} {mode}", seed=6)

    def test_example_models(self):
        for name in ('mm1', 'ring', 'placeshared', 'upshared'):
            self.assert_sound(flatten(load(MODELS_DIR / f"{name}.model").root), name, seed=1)


class AffectedActivitiesTestCase(unittest.TestCase):
    def test_empty(self):
        cl = build_connectivity(bench_model('ring', 5))
        self.assertEqual([], affected_activities(cl, set()), "no changes, nothing affected")

    def test_ring(self):
        cl = build_connectivity(bench_model('ring', 5))
        self.assertEqual([1, 2, 3], affected_activities(cl, {2}), "neighbours of replica 2")
        self.assertEqual([0, 1, 2, 3], affected_activities(cl, {1, 2}), "union, ascending")

    def test_full(self):
        cl = build_connectivity(bench_model('full', 6))
        self.assertEqual(list(range(6)), affected_activities(cl, {0}), "everyone reads P@0")


class ReportTestCase(unittest.TestCase):
    def test_ring(self):
        report = connectivity_report(bench_model('ring', 10))
        self.assertEqual((30, 10, 10), report[:3], "checks, vars, activities")
        self.assertAlmostEqual(0.3, report.density, msg="density 3/10")

    def test_full(self):
        report = connectivity_report(bench_model('full', 10))
        self.assertEqual(100, report.check_count, "n*n checks")
        self.assertAlmostEqual(1.0, report.density, msg="complete dependency")

    def test_empty(self):
        report = connectivity_report(flatten(join([], name='empty')))
        self.assertEqual((0, 0, 0, 0.0), report[:4], "empty model")

    def test_format_and_csv(self):
        fm = flatten(atomic(AtomicModel('idle', (PlaceDecl('P'),))))
        report = connectivity_report(fm)
        self.assertEqual("checks\t0\nvars\t1\nactivities\t0\ndensity\t0.0\n", format_report(report),
                         "report text does not contain build time")
        row = csv_row('idle', 1, 'atomic', report)
        self.assertEqual(CSV_HEADER, list(row), "columns of CSV row")
        self.assertEqual(['idle', 1, 'atomic', 1, 0, 0], list(row.values())[:-1], "values of CSV row")


if __name__ == '__main__':
    unittest.main()
