"""Model file format: atomic templates, one composition, and reward variables

Example (see models/ and docs/grammar.md):

    atomic cell {
        place P = 0;
        activity flip {
            timed exp(0.1 * (1 + sum(j in P.repshared(): P[j])));
            case 1 { P := 1 - P; }
        }
    }
    compose narep ring(cell, 5) { P: repshared ring; };  // repshared() sums need a symmetric access map
    reward flipped { rate P; time_averaged [0, 100]; }
"""
from pathlib import Path
from typing import NamedTuple

from lark import Lark, v_args
from lark.exceptions import UnexpectedInput, VisitError

from src.san import compose
from src.san.compose import JoinSpec, Local, PlaceShared, RepShared, UpShareSpec
from src.san.errors import (CompositionError, Diagnostic, ExprTypeError, InvalidSharingSpec,
                            ModelSyntaxError, RewardError, ValidationError)
from src.san.expr import (EXPR_RULES, EXPR_TERMINALS, BinOp, BoolLit, ExprBuilder, ExprType, IntLit,
                          PlaceRead, UpdateStmt, syntax_error, typecheck)
from src.san.model import (ActivityDecl, AtomicModel, Case, Distribution, Instantaneous, PlaceDecl,
                           Timed, validate)
from src.san.rewards import RewardKind, RewardVar, check_reward

MODEL_RULES = r"""
model: item+
?item: atomic_def | compose_def | reward_def

atomic_def: "atomic" NAME "{" atomic_item* "}"
?atomic_item: place_def | activity_def
place_def: "place" NAME ";" -> default_place
     | "place" NAME "=" expr ";" -> scalar_place
     | "place" NAME "[" INT "]" ";" -> default_array_place
     | "place" NAME "[" INT "]" "=" array_init ";" -> array_place
?array_init: "{" expr ("," expr)* "}" -> entry_list
     | expr
activity_def: "activity" NAME "{" timing enabling? case_def* "}"
timing: "timed" "exp" "(" expr ")" ";" -> timed_exp
     | "timed" "det" "(" expr ")" ";" -> timed_det
     | "instant" ";" -> instant_default
     | "instant" "weight" expr ";" -> instant_weight
     | "instant" "priority" INT ";" -> instant_priority
     | "instant" "weight" expr "priority" INT ";" -> instant_both
enabling: "enabled" expr ";"
case_def: "case" expr "{" update* "}"
update: target ":=" expr ";" -> assign
     | target "+=" expr ";" -> add_assign
     | target "-=" expr ";" -> sub_assign
target: NAME -> target_bare
     | NAME "[" expr "]" -> target_index

compose_def: "compose" node ";"
?node: NAME -> node_atomic
     | NAME "as" NAME -> node_atomic
     | "rep" NAME "(" node "," INT ")" rep_body? -> node_rep
     | "narep" NAME "(" node "," INT ")" narep_body? -> node_narep
     | "join" NAME "{" join_item* "}" -> node_join
rep_body: "{" rep_item* "}"
rep_item: "shared" KEY ("," KEY)* ";"
narep_body: "{" narep_item* "}"
narep_item: KEY ":" sharing ";" -> sharing_item
     | "upshared" KEY replica_set "->" KEY entry_map? ";" -> upshare_item
sharing: "local" -> local_mode
     | "placeshared" replica_set ("," replica_set)* -> placeshared_mode
     | "repshared" access_map -> repshared_mode
     | "repshared" "ring" -> ring_mode
     | "repshared" "ring" "(" INT ")" -> ring_mode
     | "repshared" "star" -> star_mode
     | "repshared" "star" "(" INT ")" -> star_mode
     | "repshared" "full" -> full_mode
replica_set: "{" "}" | "{" INT ("," INT)* "}"
access_map: "{" "}" | "{" access_entry ("," access_entry)* "}"
access_entry: INT ":" replica_set
entry_map: "{" "}" | "{" entry_pair ("," entry_pair)* "}"
entry_pair: INT ":" INT
join_item: node ";" -> join_child
     | "share" KEY ("," KEY)* ";" -> join_share

reward_def: "reward" NAME "{" reward_item* "}"
reward_item: "rate" expr ";" -> reward_rate
     | "impulse" pattern ":" expr ";" -> reward_impulse
     | "time_averaged" "[" number "," number "]" ";" -> reward_time_averaged
     | "accumulated" "[" number "," number "]" ";" -> reward_accumulated
     | "instant" number ";" -> reward_instant
pattern: NAME | ESCAPED_STRING
number: INT | REAL
"""

MODEL_TERMINALS = r"""
KEY: /[A-Za-z_][A-Za-z0-9_]*(\/[A-Za-z_][A-Za-z0-9_]*)*(\.[A-Za-z_][A-Za-z0-9_]*)?/
%import common.ESCAPED_STRING
"""

MODEL_GRAMMAR = MODEL_RULES + EXPR_RULES + EXPR_TERMINALS + MODEL_TERMINALS

_MODEL_PARSER = Lark(MODEL_GRAMMAR, start='model', parser='lalr',
                     propagate_positions=True, maybe_placeholders=False)


class ModelBundle(NamedTuple):
    root: object  #: composition tree
    rewards: dict  #: name -> RewardVar
    atomics: dict  #: name -> AtomicModel


class _Enabling(NamedTuple):
    expr: object


class _Syntax(NamedTuple):
    """Parsed item not yet resolved (compose nodes, rewards, definitions)"""
    kind: str
    args: tuple
    line: int
    column: int


def split_key(key):
    """Split 'A.P' or 'A/B.P' into child name and key inside that child

    >>> split_key('B/C.P')
    ('B', 'C.P')
    """
    if '/' in key:
        child, rest = key.split('/', 1)
    else:
        child, _, rest = key.partition('.')
    return child, rest


def _ints(tokens):
    return [int(tok) for tok in tokens]


class ModelBuilder(ExprBuilder):
    """Turns model file parse tree into `_Syntax` items with expressions built"""

    def model(self, items):
        return items

    # ................................................................
    # atomic models

    @v_args(meta=True)
    def atomic_def(self, meta, children):
        name, *decls = children
        places = tuple(d for d in decls if isinstance(d, PlaceDecl))
        activities = tuple(d for d in decls if isinstance(d, ActivityDecl))
        return _Syntax('atomic', (AtomicModel(str(name), places, activities),), meta.line, meta.column)

    @v_args(meta=True)
    def default_place(self, meta, children):
        return PlaceDecl(str(children[0]), None, IntLit(0), meta.line, meta.column)

    @v_args(meta=True)
    def scalar_place(self, meta, children):
        name, initial = children
        return PlaceDecl(str(name), None, initial, meta.line, meta.column)

    @v_args(meta=True)
    def default_array_place(self, meta, children):
        name, length = children
        return PlaceDecl(str(name), int(length), IntLit(0), meta.line, meta.column)

    @v_args(meta=True)
    def array_place(self, meta, children):
        name, length, initial = children
        return PlaceDecl(str(name), int(length), initial, meta.line, meta.column)

    def entry_list(self, children):
        return tuple(children)

    @v_args(meta=True)
    def activity_def(self, meta, children):
        name, timing, *rest = children
        cases = tuple(item for item in rest if isinstance(item, Case))
        enabling = [item.expr for item in rest if isinstance(item, _Enabling)]
        return ActivityDecl(str(name), timing, enabling[0] if enabling else BoolLit(True),
                            cases, meta.line, meta.column)

    @v_args(inline=True)
    def timed_exp(self, rate):
        return Timed(Distribution.EXPONENTIAL, rate)

    @v_args(inline=True)
    def timed_det(self, delay):
        return Timed(Distribution.DETERMINISTIC, delay)

    def instant_default(self, children):
        return Instantaneous()

    @v_args(inline=True)
    def instant_weight(self, weight):
        return Instantaneous(weight)

    @v_args(inline=True)
    def instant_priority(self, priority):
        return Instantaneous(priority=int(priority))

    @v_args(inline=True)
    def instant_both(self, weight, priority):
        return Instantaneous(weight, int(priority))

    @v_args(inline=True)
    def enabling(self, e):
        return _Enabling(e)

    def case_def(self, children):
        weight, *updates = children
        return Case(weight, tuple(updates))

    @v_args(inline=True)
    def assign(self, target, value):
        return UpdateStmt(target, value)

    @v_args(inline=True)
    def add_assign(self, target, value):
        return UpdateStmt(target, BinOp('+', target, value))

    @v_args(inline=True)
    def sub_assign(self, target, value):
        return UpdateStmt(target, BinOp('-', target, value))

    @v_args(inline=True)
    def target_bare(self, name):
        return PlaceRead(str(name))

    @v_args(inline=True)
    def target_index(self, name, index):
        return PlaceRead(str(name), index)

    # ................................................................
    # composition

    @v_args(meta=True)
    def compose_def(self, meta, children):
        return _Syntax('compose', (children[0],), meta.line, meta.column)

    @v_args(meta=True)
    def node_atomic(self, meta, children):
        model_name = str(children[0])
        alias = str(children[1]) if len(children) > 1 else model_name
        return _Syntax('atomic_ref', (model_name, alias), meta.line, meta.column)

    @v_args(meta=True)
    def node_rep(self, meta, children):
        name, child, n, *body = children
        shared = [key for item in (body[0] if body else []) for key in item]
        return _Syntax('rep', (str(name), child, int(n), shared), meta.line, meta.column)

    def rep_body(self, children):
        return children

    def rep_item(self, children):
        return [str(key) for key in children]

    @v_args(meta=True)
    def node_narep(self, meta, children):
        name, child, n, *body = children
        items = body[0] if body else []
        return _Syntax('narep', (str(name), child, int(n), items), meta.line, meta.column)

    def narep_body(self, children):
        return children

    @v_args(inline=True)
    def sharing_item(self, key, mode):
        return 'sharing', str(key), mode

    def upshare_item(self, children):
        inner, replicas, outer, *entry_map = children
        sibling, outer_key = split_key(str(outer))
        return 'upshared', UpShareSpec(str(inner), frozenset(replicas), sibling, outer_key,
                                       entry_map[0] if entry_map else None)

    def local_mode(self, children):
        return lambda n: Local()

    def placeshared_mode(self, children):
        return lambda n: PlaceShared(tuple(frozenset(group) for group in children))

    @v_args(inline=True)
    def repshared_mode(self, access):
        return lambda n: RepShared(access)

    def ring_mode(self, children):
        k = int(children[0]) if children else 1
        return lambda n: RepShared(compose.ring_access(n, k))

    def star_mode(self, children):
        hub = int(children[0]) if children else 0
        return lambda n: RepShared(compose.star_access(n, hub))

    def full_mode(self, children):
        return lambda n: RepShared(compose.full_access(n))

    def replica_set(self, children):
        return _ints(children)

    def access_map(self, children):
        return dict(children)

    @v_args(inline=True)
    def access_entry(self, replica, replicas):
        return int(replica), frozenset(replicas)

    def entry_map(self, children):
        return dict(children)

    @v_args(inline=True)
    def entry_pair(self, replica, entry):
        return int(replica), int(entry)

    @v_args(meta=True)
    def node_join(self, meta, children):
        name, *items = children
        nodes = [item[1] for item in items if item[0] == 'child']
        shares = [item[1] for item in items if item[0] == 'share']
        return _Syntax('join', (str(name), nodes, shares), meta.line, meta.column)

    @v_args(inline=True)
    def join_child(self, node):
        return 'child', node

    def join_share(self, children):
        return 'share', [split_key(str(key)) for key in children]

    # ................................................................
    # rewards

    @v_args(meta=True)
    def reward_def(self, meta, children):
        name, *items = children
        return _Syntax('reward', (str(name), items), meta.line, meta.column)

    @v_args(inline=True)
    def reward_rate(self, e):
        return 'rate', e

    @v_args(inline=True)
    def reward_impulse(self, pattern, e):
        return 'impulse', (pattern, e)

    @v_args(inline=True)
    def reward_time_averaged(self, start, end):
        return 'kind', (RewardKind.TIME_AVERAGED, start, end)

    @v_args(inline=True)
    def reward_accumulated(self, start, end):
        return 'kind', (RewardKind.ACCUMULATED, start, end)

    @v_args(inline=True)
    def reward_instant(self, at):
        return 'kind', (RewardKind.INSTANT, at, at)

    @v_args(inline=True)
    def pattern(self, token):
        text = str(token)
        return text[1:-1] if token.type == 'ESCAPED_STRING' else text

    @v_args(inline=True)
    def number(self, token):
        return float(token)


class _Loader:
    def __init__(self, filename):
        self.filename = filename
        self.diagnostics = []
        self.atomics = {}

    def report(self, item, location, rule, message):
        self.diagnostics.append(Diagnostic(item.line, item.column, location, rule, message))

    def fail_if_reported(self):
        if self.diagnostics:
            raise ValidationError(sorted(self.diagnostics), self.filename)

    def build_node(self, item):
        kind, args = item.kind, item.args
        try:
            if kind == 'atomic_ref':
                model_name, alias = args
                if model_name not in self.atomics:
                    raise ValidationError([Diagnostic(item.line, item.column, f"compose:{alias}",
                                                      'UNKNOWN_MODEL',
                                                      f"no atomic model named '{model_name}'")],
                                          self.filename)
                return compose.atomic(self.atomics[model_name], alias)
            if kind == 'rep':
                name, child, n, shared = args
                return compose.rep(self.build_node(child), n, shared, name=name)
            if kind == 'narep':
                name, child, n, items = args
                sharing = {key: make_mode(n) for tag, key, make_mode in
                           (entry for entry in items if entry[0] == 'sharing')}
                up_shared = [entry[1] for entry in items if entry[0] == 'upshared']
                return compose.narep(self.build_node(child), n, sharing, up_shared, name=name)
            name, nodes, shares = args
            return compose.join([self.build_node(node) for node in nodes],
                                [JoinSpec(tuple(group)) for group in shares], name=name)
        except InvalidSharingSpec as err:
            if err.diagnostics[0].line:
                raise
            raise InvalidSharingSpec(err.place, err.rule, err.diagnostics[0].message,
                                     item.line, item.column) from None
        except ValidationError:
            raise
        except CompositionError as err:
            rule = _rule_of(err)
            location = f"compose:{args[0] if kind != 'atomic_ref' else args[1]}"
            raise ValidationError([Diagnostic(item.line, item.column, location, rule, str(err))],
                                  self.filename) from None

    def build_reward(self, item):
        name, clauses = item.args
        location = f"reward:{name}"
        rate, impulses, kinds = [], [], []
        for tag, value in clauses:
            {'rate': rate, 'impulse': impulses, 'kind': kinds}[tag].append(value)
        if len(rate) > 1 or len(kinds) > 1:
            self.report(item, location, 'REWARD_DUPLICATE', "more than one rate or kind clause")
            return None
        if not kinds:
            self.report(item, location, 'REWARD_NO_KIND',
                        "one of time_averaged, accumulated or instant is needed")
            return None
        for e in rate + [e for _, e in impulses]:
            try:
                typecheck(e, ExprType.REAL)
            except ExprTypeError as err:
                self.report(item, location, 'TYPE_ERROR', str(err))
                return None
        kind, start, end = kinds[0]
        rv = RewardVar(name, rate[0] if rate else None, tuple(impulses), kind, start, end)
        try:
            check_reward(rv)
        except RewardError as err:
            self.report(item, location, 'INVALID_REWARD', str(err))
            return None
        return rv

    def load(self, items):
        for item in items:
            if item.kind != 'atomic':
                continue
            model = item.args[0]
            if model.name in self.atomics:
                self.report(item, f"{model.name}", 'DUPLICATE_MODEL',
                            f"atomic model '{model.name}' defined twice")
                continue
            self.atomics[model.name] = model
            self.diagnostics.extend(validate(model))

        composes = [item for item in items if item.kind == 'compose']
        if not composes:
            first = items[0]
            self.report(first, 'compose', 'MISSING_COMPOSE', "model file has no compose clause")
        for extra in composes[1:]:
            self.report(extra, 'compose', 'DUPLICATE_COMPOSE', "model file has more than one compose clause")

        rewards = {}
        for item in items:
            if item.kind != 'reward':
                continue
            if item.args[0] in rewards:
                self.report(item, f"reward:{item.args[0]}", 'DUPLICATE_REWARD',
                            f"reward '{item.args[0]}' defined twice")
                continue
            rv = self.build_reward(item)
            if rv is not None:
                rewards[rv.name] = rv
        self.fail_if_reported()

        root = self.build_node(composes[0].args[0])
        return ModelBundle(root, rewards, self.atomics)


def _rule_of(err):
    """Rule id from exception class name, e.g. KindMismatch -> KIND_MISMATCH"""
    name = type(err).__name__
    return ''.join('_' + c if c.isupper() and i else c for i, c in enumerate(name)).upper()


def parse_model(text, filename=None):
    """Parse and validate model file contents

    :param str text: model file source
    :param filename: name used in diagnostics
    :type filename: str or None
    :return: composition tree, reward variables, and atomic models
    :rtype: ModelBundle
    :raises ModelSyntaxError: on malformed input, including empty input
    :raises ValidationError: with diagnostics (file, line, column, rule)
    """
    try:
        tree = _MODEL_PARSER.parse(text)
    except UnexpectedInput as err:
        raise syntax_error(err, text) from None
    try:
        items = ModelBuilder().transform(tree)
    except VisitError as err:
        raise err.orig_exc from None
    return _Loader(filename).load(items)


def load(path):
    """Read model file

    :param path: path to UTF-8 model file
    :type path: str or Path
    :rtype: ModelBundle
    :raises OSError: if file cannot be read
    :raises ModelSyntaxError: on malformed input, including bytes that are not UTF-8
    :raises ValidationError: on invalid model
    """
    path = Path(path)
    data = path.read_bytes()
    try:
        text = data.decode('utf-8')
    except UnicodeDecodeError as err:
        line_start = data.rfind(b'\n', 0, err.start) + 1
        raise ModelSyntaxError(f"invalid UTF-8 byte 0x{data[err.start]:02x}",
                               data.count(b'\n', 0, err.start) + 1, err.start - line_start + 1) from None
    return parse_model(text, filename=str(path))
