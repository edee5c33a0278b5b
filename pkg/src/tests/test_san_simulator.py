import io
import math
import unittest

from src.san.bench import Topology, generate_model
from src.san.compose import atomic
from src.san.connectivity import build_connectivity
from src.san.errors import LivelockError, NegativeMarking, SimulationError
from src.san.expr import compile_expr, parse
from src.san.flatten import flatten
from src.san.model import AtomicModel, PlaceDecl
from src.san.modelfile import load, parse_model
from src.san.rewards import RewardKind, RewardVar, evaluate_reward
from src.san.simulator import (GOLDEN_SEED_1, RandomStream, SimConfig, Simulator, compare_trajectories,
                               exponential_time, format_event, read_trace, replay, simulate, write_trace)
from src.tests import MODELS_DIR, slow_test
from src.tests.test_san_model import mm1_model

PRIORITIES = """
atomic pri {
    place A = 1;
    place B = 0;
    activity lo { instant priority 1; enabled A == 1; case 1 { A := 0; } }
    activity hi { instant priority 2; enabled A == 1; case 1 { A := 0; B += 1; } }
}
compose pri;
"""

TIE = """
atomic tie {
    place A = 1;
    place B = 1;
    activity a { timed det(1.0); enabled A > 0; case 1 { A := 0; } }
    activity b { timed det(1.0); enabled B > 0; case 1 { B := 0; } }
}
compose tie;
"""

# instantaneous routing with two cases and a marking dependent rate
ROUTER = """
atomic router {
    place In = 0;
    place Left = 0;
    place Right = 0;
    activity arrive { timed exp(1.0 + 0.5 * Left); enabled In < 3; case 1 { In += 1; } }
    activity route {
        instant weight 2;
        enabled In > 0;
        case 1 { In -= 1; Left += 1; }
        case 3 { In -= 1; Right += 1; }
    }
    activity drain { timed exp(2.0); enabled Left + Right > 0;
        case Left { Left -= 1; }
        case Right { Right -= 1; }
    }
}
compose router;
"""


def flat(text):
    return flatten(parse_model(text).root)


def run(fm, **kwargs):
    return simulate(fm, build_connectivity(fm), SimConfig(**kwargs))


class RandomStreamTestCase(unittest.TestCase):
    def test_golden_values(self):
        stream = RandomStream(1)
        for expected in GOLDEN_SEED_1:
            self.assertAlmostEqual(expected, stream.sample(), places=12, msg="MT19937 reference sequence")
        self.assertEqual(3, stream.draws, "draws are counted")

    def test_block_size(self):
        small, large = RandomStream(7, block=2), RandomStream(7)
        self.assertEqual([large.sample() for _ in range(5)], [small.sample() for _ in range(5)],
                         "buffering does not change the sequence")

    def test_seeds(self):
        self.assertNotEqual(RandomStream(2 ** 40).sample(), RandomStream(2 ** 40 + 1).sample(),
                            "64-bit seeds are distinguished")
        with self.assertRaises(SimulationError):
            RandomStream(-1)
        with self.assertRaises(SimulationError):
            RandomStream(2 ** 64)

    def test_exponential_time(self):
        self.assertAlmostEqual(math.log(2) / 4, exponential_time(0.5, 4.0), msg="-ln(u)/rate")
        self.assertTrue(math.isfinite(exponential_time(0.0, 1.0)), "u = 0 gives finite time")


class SimulateTestCase(unittest.TestCase):
    def test_single_event(self):
        fm = flat("""
            atomic one { place P = 1; activity go { timed exp(2.0); enabled P > 0; case 1 { P -= 1; } } }
            compose one;
        """)
        trajectory = run(fm, seed=1, stop_after_events=10)
        self.assertEqual(1, len(trajectory.events), "activity disables itself")
        self.assertAlmostEqual(-math.log(GOLDEN_SEED_1[0]) / 2.0, trajectory.events[0].time, places=12,
                               msg="time from the first sample")
        self.assertEqual(((0, 1, 0),), trajectory.events[0].changed, "P goes from 1 to 0")
        self.assertEqual(2, trajectory.draws, "one firing time and one case draw")
        self.assertEqual('absorbing', trajectory.status, "no activity is enabled at the end")
        self.assertEqual(math.inf, trajectory.end_time, "absorbing state lasts forever")

    def test_priorities(self):
        fm = flat(PRIORITIES)
        trajectory = run(fm, seed=3, stop_after_events=10)
        self.assertEqual(['pri:hi'], [fm.activities[e.activity].label for e in trajectory.events],
                         "higher priority fires first and disables the other")
        self.assertEqual([0, 1], trajectory.final_marking, "updates of 'hi' applied")
        self.assertEqual(0.0, trajectory.events[0].time, "instantaneous firing at time 0")

    def test_tie(self):
        fm = flat(TIE)
        trajectory = run(fm, seed=1, stop_after_events=10)
        self.assertEqual([(1.0, 0), (1.0, 1)], [(e.time, e.activity) for e in trajectory.events],
                         "equal times: lower instance id first")
        self.assertEqual(2, trajectory.draws, "deterministic delays consume only case draws")

    def test_absorbing(self):
        trajectory = run(flatten(atomic(AtomicModel('idle', (PlaceDecl('P'),)))), seed=1, stop_at_time=5.0)
        self.assertEqual(([], 'absorbing', 0), (trajectory.events, trajectory.status, trajectory.draws),
                         "nothing to fire")

    def test_stop_conditions(self):
        fm = flatten(atomic(mm1_model()))
        by_events = run(fm, seed=5, stop_after_events=37)
        self.assertEqual(37, len(by_events.events), "exact number of events")
        self.assertEqual(('max-events', by_events.events[-1].time), (by_events.status, by_events.end_time),
                         "known up to the last event")
        by_time = run(fm, seed=5, stop_at_time=10.0)
        self.assertEqual(('max-time', 10.0), (by_time.status, by_time.end_time), "stopped at time limit")
        self.assertTrue(all(e.time <= 10.0 for e in by_time.events), "no event after the time limit")
        times = [e.time for e in by_time.events]
        self.assertEqual(sorted(times), times, "times are non-decreasing")
        with self.assertRaises(SimulationError):
            run(fm, seed=5)
        for limits in [{'stop_after_events': 0}, {'stop_at_time': -1.0}]:
            with self.assertRaises(SimulationError, msg=f"{limits}"):
                run(fm, seed=5, **limits)

    def test_reproducible(self):
        fm = flat(ROUTER)
        self.assertIsNone(compare_trajectories(run(fm, seed=11, stop_after_events=500),
                                               run(fm, seed=11, stop_after_events=500)),
                          "same seed, same trajectory")
        self.assertIsNotNone(compare_trajectories(run(fm, seed=11, stop_after_events=500),
                                                  run(fm, seed=12, stop_after_events=500)),
                             "different seeds diverge")

    def test_replay(self):
        fm = flat(ROUTER)
        trajectory = run(fm, seed=2, stop_after_events=300)
        marking = list(trajectory.initial_marking)
        for event, after in replay(trajectory):
            self.assertTrue(all(old != new for _, old, new in event.changed), "only real changes recorded")
            marking = list(after)
        self.assertEqual(trajectory.final_marking, marking, "replay reproduces final marking")

    def test_livelock(self):
        model = parse_model("""
            atomic loop { place P = 0; activity spin { instant; case 1 { P := 1 - P; } } }
            compose loop;
        """)
        fm = flatten(model.root)
        with self.assertRaises(LivelockError):
            run(fm, seed=1, stop_at_time=1.0, max_instantaneous_chain=10)

    def test_negative_marking(self):
        model = parse_model("""
            atomic neg { place P = 0; activity take { timed exp(1.0); case 1 { P -= 1; } } }
            compose neg;
        """)
        with self.assertRaises(NegativeMarking):
            run(flatten(model.root), seed=1, stop_after_events=5)


class OracleTestCase(unittest.TestCase):
    def assert_oracle_equivalent(self, fm, seeds, **kwargs):
        cl = build_connectivity(fm)
        for seed in seeds:
            fast = simulate(fm, cl, SimConfig(seed=seed, **kwargs))
            oracle = simulate(fm, cl, SimConfig(seed=seed, mode='oracle', **kwargs))
            self.assertIsNone(compare_trajectories(fast, oracle), f"connectivity vs oracle, seed {seed}")
            self.assertEqual(fast.draws, oracle.draws, f"same number of draws, seed {seed}")

    def test_models(self):
        self.assert_oracle_equivalent(flatten(atomic(mm1_model())), range(3), stop_after_events=500)
        self.assert_oracle_equivalent(flat(ROUTER), range(3), stop_after_events=500)
        self.assert_oracle_equivalent(flat(TIE), range(2), stop_after_events=10)
        for kind in ('ring', 'star', 'full'):
            for mode in ('narep', 'rep-emulated'):
                fm = flatten(generate_model(Topology(kind), 8, mode))
                self.assert_oracle_equivalent(fm, range(2), stop_after_events=300)

    @slow_test
    def test_example_models(self):
        for name in ('ring', 'placeshared', 'upshared'):
            fm = flatten(load(MODELS_DIR / f"{name}.model").root)
            self.assert_oracle_equivalent(fm, range(5), stop_after_events=10_000)

    def test_rep_emulation_same_behaviour(self):
        narep = flatten(generate_model(Topology('ring'), 10, 'narep'))
        emulated = flatten(generate_model(Topology('ring'), 10, 'rep-emulated'))
        for seed in range(3):
            config = SimConfig(seed=seed, stop_after_events=200)
            first = simulate(narep, build_connectivity(narep), config)
            second = simulate(emulated, build_connectivity(emulated), config)
            # variable ids differ between the two layouts
            self.assertEqual([e[:3] for e in first.events], [e[:3] for e in second.events],
                             f"NARep ring and its Rep emulation, seed {seed}")
            self.assertEqual(first.draws, second.draws, f"same draws, seed {seed}")

    def test_reexamined_set(self):
        n = 100
        fm = flatten(generate_model(Topology('ring'), n, 'narep'))
        cl = build_connectivity(fm)
        fast = Simulator(fm, cl, SimConfig(seed=9, stop_after_events=10))
        oracle = Simulator(fm, cl, SimConfig(seed=9, stop_after_events=10, mode='oracle'))
        event = fast.step()
        self.assertEqual(event, oracle.step(), "same chosen event")
        r = event.activity
        self.assertEqual(sorted({(r - 1) % n, r, (r + 1) % n}), fast.last_reexamined,
                         "only neighbours of the flipped cell")
        self.assertEqual(list(range(n)), oracle.last_reexamined, "oracle re-examines everything")


class SharedPlacesTestCase(unittest.TestCase):
    def reader(self, fm, label, source):
        """Expression compiled as seen from the activity instance `label`"""
        act = fm.activity_by_label(label)
        return compile_expr(parse(source), fm.binders[act.id])

    def test_place_shared_write_read_by_partner(self):
        fm = flatten(load(MODELS_DIR / 'placeshared.model').root)
        partner_pool = self.reader(fm, 'servers[1]/server:serve', "Pool")
        trajectory = run(fm, seed=3, stop_after_events=200)
        writes = 0
        for event, marking in replay(trajectory):
            if fm.activities[event.activity].replica_index != 0:
                continue
            for var, _, new in event.changed:
                if fm.variables[var].label.endswith('.Pool'):
                    self.assertEqual(new, partner_pool(marking),
                                     f"replica 1 reads Pool written by replica 0 at {event.time}")
                    writes += 1
        self.assertGreater(writes, 0, "replica 0 changed the shared pool")

    def test_up_share_visible_both_ways(self):
        fm = flatten(load(MODELS_DIR / 'upshared.model').root)
        flip, alarm = 'plant/ring[0]/cell:flip', 'plant/monitor:alarm'
        own_p = self.reader(fm, flip, "P")
        seen_0 = self.reader(fm, alarm, "Seen[0]")
        trajectory = run(fm, seed=2, stop_at_time=500.0)
        fired = {flip: 0, alarm: 0}
        for event, marking in replay(trajectory):
            label = fm.activities[event.activity].label
            if label in fired:
                fired[label] += 1
                self.assertEqual(own_p(marking), seen_0(marking),
                                 f"P of replica 0 and Seen[0] agree after {label} at {event.time}")
        self.assertTrue(fired[flip] > 0 and fired[alarm] > 0, f"both paths write: {fired}")
        alarm_vars = {var for event in trajectory.events if event.activity == fm.activity_by_label(alarm).id
                      for var, _, _ in event.changed}
        self.assertEqual(fm.activity_by_label(flip).writes, frozenset(alarm_vars),
                         "monitor resets the variable that replica 0 flips")


class TraceTestCase(unittest.TestCase):
    def test_format(self):
        fm = flatten(atomic(mm1_model()))
        trajectory = run(fm, seed=1, stop_after_events=3)
        out = io.StringIO()
        write_trace(trajectory, fm, out)
        lines = out.getvalue().splitlines()
        self.assertEqual(3, len(lines), "one line per event")
        first = trajectory.events[0]
        self.assertEqual(f"{first.time!r}\tmm1:arrival\t0\t0:0->1", lines[0],
                         "time, label, case, changes")
        self.assertEqual(lines[0], format_event(first, fm), "same as format_event")

    def test_read_back(self):
        fm = flat(ROUTER)
        trajectory = run(fm, seed=4, stop_after_events=200)
        out = io.StringIO()
        write_trace(trajectory, fm, out)
        self.assertEqual(trajectory.events, read_trace(io.StringIO(out.getvalue()), fm),
                         "times are written as shortest round-trip decimals")

    def test_malformed(self):
        fm = flatten(atomic(mm1_model()))
        with self.assertRaises(SimulationError):
            read_trace(io.StringIO("0.5\tmm1:nope\t0\t0:0->1\n"), fm)
        with self.assertRaises(SimulationError):
            read_trace(io.StringIO("0.5\tmm1:arrival\t0\n"), fm)


class MM1TestCase(unittest.TestCase):
    @slow_test
    def test_mean_queue_length(self):
        fm = flatten(atomic(mm1_model(arrival_rate='0.5', service_rate='1.0')))
        trajectory = run(fm, seed=2024, stop_after_events=10 ** 6)
        rv = RewardVar('queue', parse("Queue"), kind=RewardKind.TIME_AVERAGED,
                       start=0.0, end=trajectory.end_time)
        mean = evaluate_reward(rv, trajectory, fm)
        self.assertAlmostEqual(1.0, mean, delta=0.05, msg="rho/(1-rho) with rho=0.5")


if __name__ == '__main__':
    unittest.main()
