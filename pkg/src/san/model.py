"""Atomic SAN templates: places, extended (array) places, activities, cases

An `AtomicModel` is an immutable description; it gets instantiated, possibly
many times, by flattening a composition tree (see src.san.flatten).
Use `validate` to get a list of diagnostics for a parsed model.
"""
from enum import Enum
from typing import NamedTuple

from src.san.errors import Diagnostic, ExprTypeError
from src.san.expr import (BoolLit, Expr, ExprType, IntLit, PlaceRead, RepShared, UpdateStmt,
                          constant_value, typecheck, walk)

#: marking as dense vector of non-negative marks, indexed by canonical variable id
Marking = list[int]


class Distribution(Enum):
    EXPONENTIAL = 'exp'
    DETERMINISTIC = 'det'


class PlaceDecl(NamedTuple):
    """Place declaration; `length` is None for scalar places

    For array places `initial` is either a tuple with one expression
    per entry, or a single expression used for all entries.
    """
    name: str
    length: int | None = None
    initial: Expr | tuple = IntLit(0)
    line: int = 0
    column: int = 0

    @property
    def is_array(self):
        return self.length is not None

    @property
    def kind(self):
        return 'scalar' if self.length is None else f"array[{self.length}]"

    def initial_exprs(self):
        """Initial expression of every entry (a single one for scalars)"""
        if isinstance(self.initial, tuple):
            return self.initial
        return (self.initial,) * (self.length or 1)


class Timed(NamedTuple):
    """Timed activity: exponential with rate `parameter`, or deterministic delay"""
    distribution: Distribution
    parameter: Expr


class Instantaneous(NamedTuple):
    weight: Expr = IntLit(1)
    priority: int = 0


class Case(NamedTuple):
    weight: Expr
    updates: tuple[UpdateStmt, ...] = ()


class ActivityDecl(NamedTuple):
    name: str
    timing: Timed | Instantaneous
    enabling: Expr = BoolLit(True)
    cases: tuple[Case, ...] = (Case(IntLit(1)),)
    line: int = 0
    column: int = 0

    @property
    def is_timed(self):
        return isinstance(self.timing, Timed)

    def gate_expressions(self):
        """Expressions deciding if and how the activity can fire

        That is enabling predicate, rate (or delay / weight), and case weights;
        these are the reads that connectivity lists are built from.
        """
        timing_expr = self.timing.parameter if self.is_timed else self.timing.weight
        return (self.enabling, timing_expr) + tuple(case.weight for case in self.cases)


class AtomicModel(NamedTuple):
    name: str
    places: tuple[PlaceDecl, ...] = ()
    activities: tuple[ActivityDecl, ...] = ()

    def place(self, name):
        """Return declaration of place `name`, or None"""
        for decl in self.places:
            if decl.name == name:
                return decl
        return None

    @property
    def place_names(self):
        return [decl.name for decl in self.places]


def _reads(e):
    """Places named by reads and repshared() queries in `e`"""
    return [node.place for node in walk(e) if isinstance(node, (PlaceRead, RepShared))]


class _Validator:
    def __init__(self, model):
        self.model = model
        self.diagnostics = []
        self.places = {}
        for decl in model.places:
            self.places.setdefault(decl.name, decl)

    def report(self, where, rule, message, location):
        self.diagnostics.append(Diagnostic(where.line, where.column,
                                           f"{self.model.name}/{location}", rule, message))

    def check_reads(self, e, where, location):
        ok = True
        for node in walk(e):
            if not isinstance(node, (PlaceRead, RepShared)):
                continue
            decl = self.places.get(node.place)
            if decl is None:
                self.report(where, 'UNKNOWN_PLACE', f"place '{node.place}' is not declared", location)
                ok = False
            elif isinstance(node, PlaceRead) and node.index is None and decl.is_array:
                self.report(where, 'BARE_ARRAY_READ',
                            f"array place '{node.place}' must be indexed", location)
                ok = False
        return ok

    def check_type(self, e, expected, where, location):
        try:
            typecheck(e, expected)
        except ExprTypeError as err:
            self.report(where, 'TYPE_ERROR', str(err), location)
            return False
        return True

    def check_places(self):
        seen = set()
        for decl in self.model.places:
            location = f"place:{decl.name}"
            if decl.name in seen:
                self.report(decl, 'DUPLICATE_PLACE', f"place '{decl.name}' declared twice", location)
            seen.add(decl.name)
            if decl.is_array and decl.length < 1:
                self.report(decl, 'BAD_ARRAY_LENGTH',
                            f"array length must be at least 1, got {decl.length}", location)
                continue
            if isinstance(decl.initial, tuple) and len(decl.initial) != (decl.length or 1):
                self.report(decl, 'INITIAL_ARITY',
                            f"{len(decl.initial)} initial values for {decl.kind} place", location)
                continue
            for e in decl.initial_exprs():
                if _reads(e):
                    self.report(decl, 'INITIAL_READS_PLACE',
                                "initial marking cannot read places", location)
                elif self.check_type(e, ExprType.INT, decl, location):
                    value = constant_value(e)
                    if value is not None and value < 0:
                        self.report(decl, 'NEGATIVE_INITIAL',
                                    f"initial marking {value} is negative", location)

    def check_activity(self, act):
        location = f"activity:{act.name}"
        if self.check_reads(act.enabling, act, location):
            self.check_type(act.enabling, ExprType.BOOL, act, location)

        if act.is_timed:
            parameter = act.timing.parameter
            if self.check_reads(parameter, act, location) and \
                    self.check_type(parameter, ExprType.REAL, act, location):
                value = constant_value(parameter)
                if act.timing.distribution == Distribution.EXPONENTIAL:
                    if value is not None and value <= 0:
                        self.report(act, 'NONPOSITIVE_RATE', f"rate {value} is not positive", location)
                elif value is not None and value < 0:
                    self.report(act, 'NEGATIVE_DELAY', f"delay {value} is negative", location)
        else:
            if act.timing.priority < 0:
                self.report(act, 'NEGATIVE_PRIORITY',
                            f"priority {act.timing.priority} is negative", location)
            weight = act.timing.weight
            if self.check_reads(weight, act, location) and \
                    self.check_type(weight, ExprType.REAL, act, location):
                value = constant_value(weight)
                if value is not None and value < 0:
                    self.report(act, 'NEGATIVE_WEIGHT', f"weight {value} is negative", location)

        if not act.cases:
            self.report(act, 'NO_CASES', "activity has no cases", location)
            return

        weights = []
        for i, case in enumerate(act.cases):
            case_location = f"{location}/case[{i}]"
            if self.check_reads(case.weight, act, case_location) and \
                    self.check_type(case.weight, ExprType.REAL, act, case_location):
                value = constant_value(case.weight)
                if value is not None and value < 0:
                    self.report(act, 'NEGATIVE_WEIGHT', f"case weight {value} is negative",
                                case_location)
                weights.append(value)
            else:
                weights.append(None)
            for j, stmt in enumerate(case.updates):
                self.check_update(stmt, act, f"{case_location}/update[{j}]")

        if all(w is not None for w in weights) and sum(weights) == 0:
            self.report(act, 'ZERO_CASE_WEIGHTS', "case weights sum to zero", location)

    def check_update(self, stmt, act, location):
        if self.check_reads(stmt.target, act, location):
            if stmt.target.index is not None:
                self.check_type(stmt.target.index, ExprType.INT, act, location)
        if self.check_reads(stmt.value, act, location):
            self.check_type(stmt.value, ExprType.INT, act, location)

    def run(self):
        self.check_places()
        seen = set()
        for act in self.model.activities:
            if act.name in seen:
                self.report(act, 'DUPLICATE_ACTIVITY',
                            f"activity '{act.name}' declared twice", f"activity:{act.name}")
            seen.add(act.name)
            self.check_activity(act)
        return sorted(self.diagnostics, key=lambda diag: (diag.location, diag.rule, diag.message))


def validate(model):
    """Check names, arities and types of an atomic model

    Rate, delay and weight checks are only done for expressions that are
    constant; the rest is checked while simulating.

    Example:
        >>> validate(AtomicModel('bad', (PlaceDecl('P'), PlaceDecl('P'))))[0].rule
        'DUPLICATE_PLACE'

    :param AtomicModel model: parsed atomic model
    :return: diagnostics sorted by location, empty list if model is valid
    :rtype: list[Diagnostic]
    """
    return _Validator(model).run()
