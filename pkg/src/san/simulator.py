"""Discrete-event simulation of a flattened SAN

Timed activities are exponential (rate) or deterministic (delay).
Instantaneous activities fire before any timed one: the highest priority
wins, and weights decide among enabled activities with equal priority.

Random numbers come from MT19937 (`numpy.random.RandomState`), one uniform
sample from [0, 1) per draw, in this order:

1. firing time, when a timed exponential activity becomes enabled
   (`-ln(u) / rate`; deterministic delays consume no sample),
2. choice among enabled instantaneous activities of highest priority,
3. case choice, whenever an activity fires (even with a single case).

Timed activities are (re)examined only in stable markings, in ascending
instance id order.  In 'connectivity' mode only activities reading a
changed variable (plus the fired one) are re-examined; in 'oracle' mode
all of them are.  Both modes produce the same trajectory.
"""
import heapq
import math
import sys
from typing import NamedTuple

import numpy as np

from src.san.connectivity import affected_activities
from src.san.errors import InvalidRate, LivelockError, NegativeMarking, SimulationError
from src.san.expr import compile_expr, compile_target
from src.san.flatten import initial_marking
from src.san.model import Distribution
from src.utils.files import make_opened

DEFAULT_MAX_INSTANTANEOUS_CHAIN = 100000
MODES = ('connectivity', 'oracle')
#: reference outputs of `RandomStream(1).sample()`
GOLDEN_SEED_1 = (0.417022004702574, 0.7203244934421581, 0.00011437481734488664)


class SimConfig(NamedTuple):
    seed: int
    stop_after_events: int | None = None
    stop_at_time: float | None = None
    mode: str = 'connectivity'
    max_instantaneous_chain: int = DEFAULT_MAX_INSTANTANEOUS_CHAIN


class Event(NamedTuple):
    time: float
    activity: int  #: activity instance id
    case_index: int
    changed: tuple  #: (variable id, old mark, new mark), ascending variable id


class Trajectory(NamedTuple):
    events: list[Event]
    initial_marking: list[int]
    final_marking: list[int]
    draws: int  #: number of random samples consumed
    status: str  #: 'max-events', 'max-time' or 'absorbing'
    end_time: float  #: time up to which the trajectory is known

    @property
    def horizon(self):
        return self.end_time


class RandomStream:
    """Uniform samples from [0, 1) generated by MT19937

    Samples are fetched from numpy in blocks; the sequence is the same
    as with one `random_sample()` call per draw.

    >>> RandomStream(1).sample()
    0.417022004702574
    """

    def __init__(self, seed, block=1024):
        if not 0 <= seed < 2 ** 64:
            raise SimulationError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if seed < 2 ** 32:
            self._state = np.random.RandomState(seed)
        else:
            self._state = np.random.RandomState(
                np.array([seed & 0xFFFFFFFF, seed >> 32], dtype=np.uint32))
        self._block = block
        self._buffer = []
        self._pos = 0
        self.draws = 0

    def sample(self):
        if self._pos == len(self._buffer):
            self._buffer = self._state.random_sample(self._block).tolist()
            self._pos = 0
        u = self._buffer[self._pos]
        self._pos += 1
        self.draws += 1
        return u


def exponential_time(u, rate):
    """Exponential delay -ln(u)/rate for uniform sample u (u = 0 maps to the smallest sample)"""
    return -math.log(u if u > 0.0 else 2.0 ** -53) / rate


def _choose(weights, u):
    """Index picked by sample `u` from non-negative `weights` with positive sum"""
    threshold = u * sum(weights)
    cumulative = 0.0
    last = 0
    for i, weight in enumerate(weights):
        if weight <= 0:
            continue
        cumulative += weight
        last = i
        if threshold < cumulative:
            return i
    return last


class _Compiled(NamedTuple):
    label: str
    timed: bool
    exponential: bool
    priority: int
    enabling: object
    parameter: object  #: rate, delay, or instantaneous weight
    case_weights: tuple
    updates: tuple  #: per case, tuple of (target function, value function)


def _compile_activity(act, binder):
    decl = act.decl
    timing = decl.timing
    parameter = timing.parameter if decl.is_timed else timing.weight
    return _Compiled(
        act.label, decl.is_timed,
        decl.is_timed and timing.distribution == Distribution.EXPONENTIAL,
        0 if decl.is_timed else timing.priority,
        compile_expr(decl.enabling, binder),
        compile_expr(parameter, binder),
        tuple(compile_expr(case.weight, binder) for case in decl.cases),
        tuple(tuple((compile_target(stmt.target, binder), compile_expr(stmt.value, binder))
                    for stmt in case.updates)
              for case in decl.cases))


class Simulator:
    """Single simulation run over a flattened model

    Example:
        >>> sim = Simulator(fm, build_connectivity(fm), SimConfig(seed=1, stop_after_events=100))
        >>> trajectory = sim.run()

    :ivar list[int] marking: current marking
    :ivar float time: current simulation time
    :ivar list[int] last_reexamined: timed activities re-examined by last step
    """

    def __init__(self, fm, cl, cfg):
        if cfg.stop_after_events is None and cfg.stop_at_time is None:
            raise SimulationError("at least one stop condition is needed")
        if cfg.stop_after_events is not None and cfg.stop_after_events < 1:
            raise SimulationError(f"stop after events must be at least 1, got {cfg.stop_after_events}")
        if cfg.stop_at_time is not None and cfg.stop_at_time < 0:
            raise SimulationError(f"stop time must not be negative, got {cfg.stop_at_time}")
        if cfg.mode not in MODES:
            raise SimulationError(f"unknown mode '{cfg.mode}', expected one of {MODES}")
        self.fm = fm
        self.cl = cl
        self.cfg = cfg
        self.rng = RandomStream(cfg.seed)
        self.activities = [_compile_activity(act, binder)
                           for act, binder in zip(fm.activities, fm.binders)]
        self.timed_ids = [act.id for act in fm.activities if self.activities[act.id].timed]
        self.instantaneous_ids = [act.id for act in fm.activities if not self.activities[act.id].timed]

        self.marking = initial_marking(fm)
        self.initial = list(self.marking)
        self.time = 0.0
        self.events = []
        self.status = None
        self.end_time = 0.0
        self.last_reexamined = []
        self._limit = cfg.stop_after_events if cfg.stop_after_events is not None else math.inf

        self._scheduled = {}  #: activity id -> (firing time, version, rate)
        self._heap = []  #: (firing time, activity id, version)
        self._version = 0
        self._inst_enabled = set()

        self._update_instantaneous(self.instantaneous_ids)
        changed = set()
        self._stabilize(changed)
        if self.status is None:
            self._examine_timed(self.timed_ids)

    # ..................................................................

    def _evaluate_enabling(self, act_id):
        return bool(self.activities[act_id].enabling(self.marking))

    def _update_instantaneous(self, act_ids):
        for act_id in act_ids:
            if self._evaluate_enabling(act_id):
                self._inst_enabled.add(act_id)
            else:
                self._inst_enabled.discard(act_id)

    def _reexamination_set(self, changed, fired=None):
        if self.cfg.mode == 'oracle':
            return [act.id for act in self.fm.activities]
        ids = set(affected_activities(self.cl, changed))
        if fired is not None:
            ids.add(fired)
        return sorted(ids)

    def _fire(self, act_id, changed):
        """Choose case, apply updates, record event; collect changed vars"""
        act = self.activities[act_id]
        weights = [w(self.marking) for w in act.case_weights]
        if any(w < 0 for w in weights) or sum(weights) <= 0:
            raise InvalidRate(f"{act.label}: invalid case weights {weights} at time {self.time!r}")
        case_index = _choose(weights, self.rng.sample())

        old = {}
        for target_fn, value_fn in act.updates[case_index]:
            position = target_fn(self.marking)
            value = value_fn(self.marking)
            if value < 0:
                raise NegativeMarking(f"{act.label}: update sets {self.fm.variables[position].label}"
                                      f" to {value} at time {self.time!r}")
            old.setdefault(position, self.marking[position])
            self.marking[position] = int(value)
        event_changes = tuple((var, old[var], self.marking[var])
                              for var in sorted(old) if old[var] != self.marking[var])
        changed.update(var for var, _, _ in event_changes)

        event = Event(self.time, act_id, case_index, event_changes)
        self.events.append(event)
        if len(self.events) >= self._limit:
            self.status = 'max-events'
            self.end_time = self.time

        recheck = self._reexamination_set([var for var, _, _ in event_changes],
                                          act_id if not act.timed else None)
        self._update_instantaneous([i for i in recheck if not self.activities[i].timed])
        return event

    def _stabilize(self, changed):
        """Fire instantaneous activities until none is enabled"""
        chain = 0
        while self._inst_enabled and self.status is None:
            chain += 1
            if chain > self.cfg.max_instantaneous_chain:
                raise LivelockError(f"more than {self.cfg.max_instantaneous_chain} instantaneous "
                                    f"firings at time {self.time!r}")
            candidates = sorted(self._inst_enabled)
            top = max(self.activities[i].priority for i in candidates)
            candidates = [i for i in candidates if self.activities[i].priority == top]
            weights = [self.activities[i].parameter(self.marking) for i in candidates]
            if any(w < 0 for w in weights) or sum(weights) <= 0:
                labels = [self.activities[i].label for i in candidates]
                raise InvalidRate(f"invalid weights {weights} of instantaneous {labels}")
            chosen = candidates[_choose(weights, self.rng.sample())]
            self._fire(chosen, changed)

    def _schedule(self, act_id, fire_time, rate):
        self._version += 1
        self._scheduled[act_id] = (fire_time, self._version, rate)
        heapq.heappush(self._heap, (fire_time, act_id, self._version))

    def _examine_timed(self, act_ids):
        self.last_reexamined = list(act_ids)
        for act_id in act_ids:
            act = self.activities[act_id]
            if not self._evaluate_enabling(act_id):
                self._scheduled.pop(act_id, None)
                continue
            value = act.parameter(self.marking)
            if act.exponential:
                if not (value > 0 and math.isfinite(value)):
                    raise InvalidRate(f"{act.label}: rate {value} at time {self.time!r}")
            elif not (value >= 0 and math.isfinite(value)):
                raise InvalidRate(f"{act.label}: delay {value} at time {self.time!r}")

            scheduled = self._scheduled.get(act_id)
            if scheduled is None:
                if act.exponential:
                    self._schedule(act_id, self.time + exponential_time(self.rng.sample(), value), value)
                else:
                    self._schedule(act_id, self.time + float(value), None)
            elif act.exponential and value != scheduled[2]:
                remaining = (scheduled[0] - self.time) * scheduled[2] / value
                self._schedule(act_id, self.time + remaining, value)

    def _next_scheduled(self):
        while self._heap:
            fire_time, act_id, version = self._heap[0]
            scheduled = self._scheduled.get(act_id)
            if scheduled is not None and scheduled[1] == version:
                return fire_time, act_id
            heapq.heappop(self._heap)
        return None

    # ..................................................................

    def step(self):
        """Fire the next timed activity, then stabilize and re-examine

        Ties between equal firing times go to the lower instance id.

        :return: event of the timed firing, or None if the run is over
        :rtype: Event or None
        """
        if self.status is not None:
            return None
        entry = self._next_scheduled()
        if entry is None:
            self.status = 'absorbing'
            self.end_time = math.inf
            return None
        fire_time, act_id = entry
        if self.cfg.stop_at_time is not None and fire_time > self.cfg.stop_at_time:
            self.status = 'max-time'
            self.end_time = float(self.cfg.stop_at_time)
            return None

        heapq.heappop(self._heap)
        del self._scheduled[act_id]
        self.time = fire_time
        changed = set()
        event = self._fire(act_id, changed)
        self._stabilize(changed)
        if self.status is None:
            self._examine_timed([i for i in self._reexamination_set(changed, act_id)
                                 if self.activities[i].timed])
        return event

    def trajectory(self):
        return Trajectory(self.events, self.initial, list(self.marking), self.rng.draws,
                          self.status, self.end_time)

    def run(self):
        """Run until a stop condition holds or no activity is enabled

        :rtype: Trajectory
        """
        while self.status is None:
            self.step()
        return self.trajectory()


def simulate(fm, cl, cfg):
    """Simulate flattened model; see `Simulator`

    :param src.san.flatten.FlatModel fm: flattened model
    :param src.san.connectivity.ConnectivityLists cl: connectivity lists of `fm`
    :param SimConfig cfg: seed, stop conditions and mode
    :rtype: Trajectory
    :raises LivelockError: if instantaneous firings do not stop
    :raises NegativeMarking: if an update drives a mark below zero
    :raises InvalidRate: if a rate, delay or weight is invalid while enabled
    """
    return Simulator(fm, cl, cfg).run()


def compare_trajectories(t1, t2):
    """Index of the first differing event, or None if trajectories are equal

    Events are compared on time, activity instance, case and changed variables;
    if one trajectory is a prefix of the other, the length of the shorter one
    is returned.

    :param Trajectory t1: first trajectory
    :param Trajectory t2: second trajectory
    :rtype: int or None
    """
    for i, (e1, e2) in enumerate(zip(t1.events, t2.events)):
        if e1 != e2:
            return i
    if len(t1.events) != len(t2.events):
        return min(len(t1.events), len(t2.events))
    return None


def replay(trajectory):
    """Iterate over (event, marking after the event), starting from initial marking

    The marking list is updated in place; copy it if it needs to be kept.
    """
    marking = list(trajectory.initial_marking)
    for event in trajectory.events:
        for var, _, new in event.changed:
            marking[var] = new
        yield event, marking


def format_event(event, fm):
    """Trace line: time, activity label, case, and changes 'var:old->new'"""
    changes = ','.join(f"{var}:{old}->{new}" for var, old, new in event.changed)
    return f"{event.time!r}\t{fm.activities[event.activity].label}\t{event.case_index}\t{changes}"


def write_trace(trajectory, fm, trace_file, verbose=False):
    """Write one line per event to `trace_file` (path or opened file)"""
    with make_opened(trace_file, 'w') as out:
        for event in trajectory.events:
            out.write(format_event(event, fm) + '\n')
    if verbose:
        print(f"wrote {len(trajectory.events)} events, status {trajectory.status}", file=sys.stderr)


def read_trace(trace_file, fm):
    """Events of a trace written by `write_trace`

    :param trace_file: path or opened file with one event per line
    :param src.san.flatten.FlatModel fm: flattened model the trace is of
    :rtype: list[Event]
    :raises SimulationError: on malformed line or unknown activity label
    """
    ids = {act.label: act.id for act in fm.activities}
    events = []
    with make_opened(trace_file, 'r') as trace:
        for lineno, line in enumerate(trace, start=1):
            line = line.rstrip('\n')
            if not line:
                continue
            try:
                time, label, case_index, changes = line.split('\t')
                changed = []
                for change in filter(None, changes.split(',')):
                    var, values = change.split(':')
                    old, new = values.split('->')
                    changed.append((int(var), int(old), int(new)))
                events.append(Event(float(time), ids[label], int(case_index), tuple(changed)))
            except KeyError:
                raise SimulationError(f"line {lineno}: unknown activity '{label}'") from None
            except ValueError:
                raise SimulationError(f"line {lineno}: malformed trace line {line!r}") from None
    return events
