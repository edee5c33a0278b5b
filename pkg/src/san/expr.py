"""Expression language for gates, rates, case weights, updates and initial markings

Expressions are parsed with a LALR grammar (see `EXPR_RULES`, documented
in docs/grammar.md) into an immutable tree of dataclasses.  The same tree
is used for three things:

- evaluation against a marking (`evaluate`, `compile_expr`),
- partial evaluation with known replica index and size (`fold`),
- static extraction of the place replicas an expression can read
  (`extract_dependencies`), which is what connectivity lists are built from.

Example:
    >>> from src.san.expr import parse, evaluate, EvalContext
    >>> evaluate(parse("P[repindex()]"), EvalContext(replica_index=2, n=3, marking={'P': [7, 8, 9]}))
    9
"""
import operator
from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Any, Callable, Mapping, NamedTuple, Protocol, Sequence

from lark import Lark, Transformer, v_args
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, UnexpectedToken

from src.san.errors import (AccessViolation, DivisionByZero, EvaluationError, ExprTypeError, IndexOutOfRange,
                            ModelSyntaxError, NotRepShared)


# ......................................................................
# abstract syntax tree

@dataclass(frozen=True)
class Expr:
    """Base class of all expression nodes"""

    def __str__(self):
        return pretty_print(self)


@dataclass(frozen=True)
class IntLit(Expr):
    value: int


@dataclass(frozen=True)
class RealLit(Expr):
    value: float


@dataclass(frozen=True)
class BoolLit(Expr):
    value: bool


@dataclass(frozen=True)
class RepIndex(Expr):
    """Index of the replica evaluating the expression, `repindex()`"""


@dataclass(frozen=True)
class Size(Expr):
    """Number of replicas of the enclosing Rep/NARep, `n`"""


@dataclass(frozen=True)
class PlaceRead(Expr):
    """Mark of a place; `index` is None for the replica's own place"""
    place: str
    index: Expr | None = None


@dataclass(frozen=True)
class RepShared(Expr):
    """Replica indices whose `place` the current replica may touch"""
    place: str


@dataclass(frozen=True)
class ListLit(Expr):
    values: tuple[int, ...]


@dataclass(frozen=True)
class Range(Expr):
    start: Expr
    stop: Expr


@dataclass(frozen=True)
class Len(Expr):
    seq: Expr


@dataclass(frozen=True)
class Element(Expr):
    seq: Expr
    index: Expr


@dataclass(frozen=True)
class Var(Expr):
    """Index variable bound by `sum(j in ...: ...)`"""
    name: str


@dataclass(frozen=True)
class SumOver(Expr):
    var: str
    source: Expr
    body: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class UnOp(Expr):
    op: str
    operand: Expr


@dataclass(frozen=True)
class Cond(Expr):
    test: Expr
    then: Expr
    orelse: Expr


@dataclass(frozen=True)
class UpdateStmt:
    """Assignment `target := value` executed when a case is chosen"""
    target: PlaceRead
    value: Expr

    def __str__(self):
        return f"{pretty_print(self.target)} := {pretty_print(self.value)}"


ARITHMETIC_OPS = ('+', '-', '*', '/', '%')
ORDER_OPS = ('<', '<=', '>', '>=')
EQUALITY_OPS = ('==', '!=')
BOOLEAN_OPS = ('&&', '||')


def children(e):
    """Direct sub-expressions of `e`, in field order"""
    return [value for value in (getattr(e, f.name) for f in fields(e))
            if isinstance(value, Expr)]


def transform(e, fn):
    """Rebuild `e` bottom-up, applying `fn` to every (rebuilt) node

    :param Expr e: expression to transform
    :param fn: function Expr -> Expr
    :rtype: Expr
    """
    changes = {}
    for f in fields(e):
        value = getattr(e, f.name)
        if isinstance(value, Expr):
            changes[f.name] = transform(value, fn)
    node = replace(e, **changes) if changes else e
    return fn(node)


def walk(e):
    """Iterate over all nodes of `e`, pre-order"""
    yield e
    for child in children(e):
        yield from walk(child)


def _bind(body, var):
    """Turn bare reads of `var` inside `body` into `Var` references"""
    def bind_node(node):
        if isinstance(node, PlaceRead) and node.place == var and node.index is None:
            return Var(var)
        return node

    return transform(body, bind_node)


# ......................................................................
# pretty printing

def pretty_print(e):
    """Render expression as text that `parse` maps back to an equal tree

    Binary operations, negations and conditionals are always parenthesized.
    """
    match e:
        case BoolLit(value):
            return 'true' if value else 'false'
        case IntLit(value):
            return str(value) if value >= 0 else f"(-{-value})"
        case RealLit(value):
            return repr(float(value))
        case RepIndex():
            return 'repindex()'
        case Size():
            return 'n'
        case PlaceRead(place, None):
            return place
        case PlaceRead(place, index):
            return f"{place}[{pretty_print(index)}]"
        case RepShared(place):
            return f"{place}.repshared()"
        case ListLit(values):
            return '[' + ', '.join(str(v) for v in values) + ']'
        case Range(start, stop):
            return f"range({pretty_print(start)}, {pretty_print(stop)})"
        case Len(seq):
            return f"len({pretty_print(seq)})"
        case Element(seq, index):
            return f"{pretty_print(seq)}[{pretty_print(index)}]"
        case Var(name):
            return name
        case SumOver(var, source, body):
            return f"sum({var} in {pretty_print(source)}: {pretty_print(body)})"
        case BinOp(op, left, right):
            return f"({pretty_print(left)} {op} {pretty_print(right)})"
        case UnOp(op, operand):
            return f"({op}{pretty_print(operand)})"
        case Cond(test, then, orelse):
            return f"(if {pretty_print(test)} then {pretty_print(then)} else {pretty_print(orelse)})"
    raise TypeError(f"not an expression: {e!r}")


# ......................................................................
# parsing

#: grammar rules shared by the expression parser and the model file parser
EXPR_RULES = r"""
?expr: "if" expr "then" expr "else" expr -> cond
     | disjunction
?disjunction: conjunction
     | disjunction "||" conjunction -> or_
?conjunction: negation
     | conjunction "&&" negation -> and_
?negation: comparison
     | "!" negation -> not_
?comparison: sum
     | sum "<" sum -> lt
     | sum "<=" sum -> le
     | sum ">" sum -> gt
     | sum ">=" sum -> ge
     | sum "==" sum -> eq
     | sum "!=" sum -> ne
?sum: product
     | sum "+" product -> add
     | sum "-" product -> sub
?product: unary
     | product "*" unary -> mul
     | product "/" unary -> div
     | product "%" unary -> mod
?unary: atom
     | "-" unary -> neg
?atom: INT -> int_lit
     | REAL -> real_lit
     | "true" -> true_lit
     | "false" -> false_lit
     | "repindex" "(" ")" -> repindex
     | "n" -> size
     | NAME -> place
     | NAME "[" expr "]" -> place_index
     | seq "[" expr "]" -> element
     | "len" "(" seq ")" -> length
     | "sum" "(" NAME "in" seq ":" expr ")" -> sum_over
     | seq
     | "(" expr ")"
?seq: NAME "." "repshared" "(" ")" -> repshared
     | "range" "(" expr "," expr ")" -> range_
     | "[" "]" -> empty_list
     | "[" INT ("," INT)* "]" -> list_lit
"""

EXPR_TERMINALS = r"""
NAME: /[A-Za-z_][A-Za-z0-9_]*/
REAL: /[0-9]+\.[0-9]*([eE][+-]?[0-9]+)?|[0-9]+[eE][+-]?[0-9]+/
INT: /[0-9]+/
COMMENT: /\/\/[^\n]*/
%import common.WS
%ignore WS
%ignore COMMENT
"""

EXPR_GRAMMAR = "start: expr\n" + EXPR_RULES + EXPR_TERMINALS


@v_args(inline=True)
class ExprBuilder(Transformer):
    """Turns parse tree of `EXPR_RULES` into `Expr` nodes"""

    def start(self, e):
        return e

    def cond(self, test, then, orelse):
        return Cond(test, then, orelse)

    def or_(self, left, right):
        return BinOp('||', left, right)

    def and_(self, left, right):
        return BinOp('&&', left, right)

    def not_(self, operand):
        return UnOp('!', operand)

    def neg(self, operand):
        return UnOp('-', operand)

    def lt(self, left, right):
        return BinOp('<', left, right)

    def le(self, left, right):
        return BinOp('<=', left, right)

    def gt(self, left, right):
        return BinOp('>', left, right)

    def ge(self, left, right):
        return BinOp('>=', left, right)

    def eq(self, left, right):
        return BinOp('==', left, right)

    def ne(self, left, right):
        return BinOp('!=', left, right)

    def add(self, left, right):
        return BinOp('+', left, right)

    def sub(self, left, right):
        return BinOp('-', left, right)

    def mul(self, left, right):
        return BinOp('*', left, right)

    def div(self, left, right):
        return BinOp('/', left, right)

    def mod(self, left, right):
        return BinOp('%', left, right)

    def int_lit(self, token):
        return IntLit(int(token))

    def real_lit(self, token):
        return RealLit(float(token))

    def true_lit(self):
        return BoolLit(True)

    def false_lit(self):
        return BoolLit(False)

    def repindex(self):
        return RepIndex()

    def size(self):
        return Size()

    def place(self, name):
        return PlaceRead(str(name))

    def place_index(self, name, index):
        return PlaceRead(str(name), index)

    def element(self, seq, index):
        return Element(seq, index)

    def length(self, seq):
        return Len(seq)

    def sum_over(self, var, source, body):
        return SumOver(str(var), source, _bind(body, str(var)))

    def repshared(self, name):
        return RepShared(str(name))

    def range_(self, start, stop):
        return Range(start, stop)

    def empty_list(self):
        return ListLit(())

    def list_lit(self, *tokens):
        return ListLit(tuple(int(tok) for tok in tokens))


def syntax_error(err, text):
    """Convert lark parse exception into `ModelSyntaxError`

    Errors at the end of input are reported one column past the last
    character, so that "P[" fails at column 3.

    :param UnexpectedInput err: exception raised by lark
    :param str text: parsed text
    :rtype: ModelSyntaxError
    """
    expected = ()
    if isinstance(err, UnexpectedToken):
        expected = err.expected or err.accepts or ()
    elif isinstance(err, UnexpectedCharacters):
        expected = err.allowed or ()
    elif isinstance(err, UnexpectedEOF):
        expected = err.expected or ()

    at_end = (isinstance(err, UnexpectedEOF) or
              (isinstance(err, UnexpectedToken) and err.token.type == '$END'))
    if at_end:
        lines = text.split('\n')
        return ModelSyntaxError("unexpected end of input", len(lines), len(lines[-1]) + 1,
                                expected)
    if isinstance(err, UnexpectedToken):
        message = f"unexpected token {str(err.token)!r}"
    else:
        message = "unexpected character"
    return ModelSyntaxError(message, err.line, err.column, expected)


_EXPR_PARSER = Lark(EXPR_GRAMMAR, start='start', parser='lalr')


def parse(source):
    """Parse expression source text into `Expr` tree

    :param str source: expression text, e.g. "P[(repindex()-1) % n]"
    :return: abstract syntax tree
    :rtype: Expr
    :raises ModelSyntaxError: with line, column and expected tokens
    """
    try:
        tree = _EXPR_PARSER.parse(source)
    except UnexpectedInput as err:
        raise syntax_error(err, source) from None
    return ExprBuilder().transform(tree)


# ......................................................................
# type checking

class ExprType(Enum):
    INT = 'int'
    REAL = 'real'
    BOOL = 'bool'
    LIST = 'list'


_NUMERIC = (ExprType.INT, ExprType.REAL)


def infer_type(e, bound=frozenset()):
    """Compute the type of expression `e`

    :param Expr e: expression to check
    :param frozenset[str] bound: names of index variables in scope
    :rtype: ExprType
    :raises ExprTypeError: if some sub-expression is ill-typed
    """
    match e:
        case IntLit() | RepIndex() | Size():
            return ExprType.INT
        case RealLit():
            return ExprType.REAL
        case BoolLit():
            return ExprType.BOOL
        case Var(name):
            if name not in bound:
                raise ExprTypeError(f"unbound index variable '{name}'")
            return ExprType.INT
        case PlaceRead(_, index):
            if index is not None:
                _expect(index, ExprType.INT, bound, "place index")
            return ExprType.INT
        case RepShared() | ListLit():
            return ExprType.LIST
        case Range(start, stop):
            _expect(start, ExprType.INT, bound, "range start")
            _expect(stop, ExprType.INT, bound, "range stop")
            return ExprType.LIST
        case Len(seq):
            _expect(seq, ExprType.LIST, bound, "len() argument")
            return ExprType.INT
        case Element(seq, index):
            _expect(seq, ExprType.LIST, bound, "indexed list")
            _expect(index, ExprType.INT, bound, "list index")
            return ExprType.INT
        case SumOver(var, source, body):
            _expect(source, ExprType.LIST, bound, "sum() source")
            body_type = infer_type(body, bound | {var})
            if body_type not in _NUMERIC:
                raise ExprTypeError(f"sum() body must be numeric, got {body_type.value}: {e}")
            return body_type
        case UnOp('-', operand):
            operand_type = infer_type(operand, bound)
            if operand_type not in _NUMERIC:
                raise ExprTypeError(f"negation of non-numeric value: {e}")
            return operand_type
        case UnOp('!', operand):
            _expect(operand, ExprType.BOOL, bound, "operand of '!'")
            return ExprType.BOOL
        case BinOp(op, left, right):
            left_type = infer_type(left, bound)
            right_type = infer_type(right, bound)
            if op in BOOLEAN_OPS:
                if left_type != ExprType.BOOL or right_type != ExprType.BOOL:
                    raise ExprTypeError(f"operands of '{op}' must be boolean: {e}")
                return ExprType.BOOL
            if op in EQUALITY_OPS:
                if not ((left_type in _NUMERIC and right_type in _NUMERIC) or
                        left_type == right_type == ExprType.BOOL):
                    raise ExprTypeError(f"cannot compare {left_type.value} with {right_type.value}: {e}")
                return ExprType.BOOL
            if left_type not in _NUMERIC or right_type not in _NUMERIC:
                raise ExprTypeError(f"operands of '{op}' must be numeric: {e}")
            if op in ORDER_OPS:
                return ExprType.BOOL
            if op == '%' and (left_type, right_type) != (ExprType.INT, ExprType.INT):
                raise ExprTypeError(f"operands of '%' must be integers: {e}")
            if left_type == right_type == ExprType.INT:
                return ExprType.INT
            return ExprType.REAL
        case Cond(test, then, orelse):
            _expect(test, ExprType.BOOL, bound, "condition")
            then_type = infer_type(then, bound)
            else_type = infer_type(orelse, bound)
            if then_type == else_type:
                return then_type
            if then_type in _NUMERIC and else_type in _NUMERIC:
                return ExprType.REAL
            raise ExprTypeError(f"branches have different types: {e}")
    raise TypeError(f"not an expression: {e!r}")


def _expect(e, expected, bound, what):
    actual = infer_type(e, bound)
    if actual != expected:
        raise ExprTypeError(f"{what} must be {expected.value}, got {actual.value}: {e}")


def typecheck(e, expected):
    """Check that `e` can be used where `expected` type is needed

    Integer expressions are accepted where a real is expected.

    :param Expr e: expression to check
    :param ExprType expected: type required by the context
    :raises ExprTypeError: on mismatch
    """
    actual = infer_type(e)
    if actual == expected or (expected == ExprType.REAL and actual == ExprType.INT):
        return
    raise ExprTypeError(f"expected {expected.value} expression, got {actual.value}: {e}")


# ......................................................................
# arithmetic

def euclid_mod(a, b):
    """Euclidean modulo: result is always in [0, |b|)

    >>> euclid_mod(-1, 5)
    4
    """
    if b == 0:
        raise DivisionByZero(f"{a} % 0")
    return a % abs(b)


def euclid_div(a, b):
    """Euclidean division, such that b * euclid_div(a, b) + euclid_mod(a, b) == a"""
    if b == 0:
        raise DivisionByZero(f"{a} / 0")
    return (a - a % abs(b)) // b


def divide(a, b):
    """Integer operands use Euclidean division, otherwise real division"""
    if isinstance(a, int) and isinstance(b, int):
        return euclid_div(a, b)
    if b == 0:
        raise DivisionByZero(f"{a} / 0")
    return a / b


_BINARY = {
    '+': operator.add,
    '-': operator.sub,
    '*': operator.mul,
    '/': divide,
    '%': euclid_mod,
    '<': operator.lt,
    '<=': operator.le,
    '>': operator.gt,
    '>=': operator.ge,
    '==': operator.eq,
    '!=': operator.ne,
    '&&': lambda a, b: a and b,
    '||': lambda a, b: a or b,
}


def _element(seq, index):
    if not 0 <= index < len(seq):
        raise IndexOutOfRange(f"list index {index} outside [0, {len(seq)})")
    return seq[index]


# ......................................................................
# partial evaluation

class _FoldEnv(NamedTuple):
    replica_index: int | None
    n: int | None
    repshared: Callable[[str], Sequence[int] | None] | None
    bound: Mapping[str, int]


def _is_const(e):
    return isinstance(e, (IntLit, RealLit, BoolLit))


def _const(value):
    if isinstance(value, bool):
        return BoolLit(value)
    if isinstance(value, int):
        return IntLit(value)
    return RealLit(float(value))


def _fold_binop(op, left, right):
    if op == '&&' and isinstance(left, BoolLit):
        return right if left.value else left
    if op == '||' and isinstance(left, BoolLit):
        return left if left.value else right
    if _is_const(left) and _is_const(right):
        try:
            return _const(_BINARY[op](left.value, right.value))
        except (ArithmeticError, EvaluationError):
            # left for the evaluator to raise
            pass
    return BinOp(op, left, right)


def _sum_terms(terms):
    """Balanced sum of folded terms, keeping the tree shallow for long aggregates"""
    if not terms:
        return IntLit(0)
    if len(terms) == 1:
        return terms[0]
    middle = len(terms) // 2
    return _fold_binop('+', _sum_terms(terms[:middle]), _sum_terms(terms[middle:]))


def fold(e, replica_index=None, n=None, repshared=None):
    """Partially evaluate `e`, substituting known replica index and size

    Sub-expressions not depending on the marking are replaced by literals,
    conditionals with a constant test are pruned, and aggregates over
    constant lists are unrolled.  Arithmetic errors are never raised here;
    the failing sub-expression is left as is.

    :param Expr e: expression to fold
    :param replica_index: value of `repindex()`, or None if unknown
    :type replica_index: int or None
    :param n: value of `n`, or None if unknown
    :type n: int or None
    :param repshared: function returning replica indices for `P.repshared()`,
        or None when unknown (the function can also return None)
    :return: simplified expression
    :rtype: Expr
    """
    return _fold(e, _FoldEnv(replica_index, n, repshared, {}))


def _fold(e, env):
    match e:
        case IntLit() | RealLit() | BoolLit() | ListLit():
            return e
        case RepIndex():
            return e if env.replica_index is None else IntLit(env.replica_index)
        case Size():
            return e if env.n is None else IntLit(env.n)
        case Var(name):
            return IntLit(env.bound[name]) if name in env.bound else e
        case PlaceRead(place, None):
            return e
        case PlaceRead(place, index):
            return PlaceRead(place, _fold(index, env))
        case RepShared(place):
            if env.repshared is not None:
                indices = env.repshared(place)
                if indices is not None:
                    return ListLit(tuple(indices))
            return e
        case Range(start, stop):
            start, stop = _fold(start, env), _fold(stop, env)
            if isinstance(start, IntLit) and isinstance(stop, IntLit):
                return ListLit(tuple(range(start.value, stop.value)))
            return Range(start, stop)
        case Len(seq):
            seq = _fold(seq, env)
            return IntLit(len(seq.values)) if isinstance(seq, ListLit) else Len(seq)
        case Element(seq, index):
            seq, index = _fold(seq, env), _fold(index, env)
            if (isinstance(seq, ListLit) and isinstance(index, IntLit)
                    and 0 <= index.value < len(seq.values)):
                return IntLit(seq.values[index.value])
            return Element(seq, index)
        case SumOver(var, source, body):
            source = _fold(source, env)
            if not isinstance(source, ListLit):
                inner = env._replace(bound={k: v for k, v in env.bound.items() if k != var})
                return SumOver(var, source, _fold(body, inner))
            return _sum_terms([_fold(body, env._replace(bound={**env.bound, var: value}))
                               for value in source.values])
        case UnOp(op, operand):
            operand = _fold(operand, env)
            if _is_const(operand):
                return _const(-operand.value if op == '-' else not operand.value)
            return UnOp(op, operand)
        case BinOp(op, left, right):
            return _fold_binop(op, _fold(left, env), _fold(right, env))
        case Cond(test, then, orelse):
            test = _fold(test, env)
            if isinstance(test, BoolLit):
                return _fold(then if test.value else orelse, env)
            return Cond(test, _fold(then, env), _fold(orelse, env))
    raise TypeError(f"not an expression: {e!r}")


def constant_value(e):
    """Value of `e` if it is constant regardless of replica and marking, else None"""
    folded = fold(e)
    return folded.value if _is_const(folded) else None


# ......................................................................
# static dependency extraction

class PlaceRef(NamedTuple):
    """Place replica reference: replica index for scalars, entry for arrays"""
    place: str
    index: int

    def __str__(self):
        return f"{self.place}@{self.index}"


class DependencySet(NamedTuple):
    """Place replicas read and written by an expression or update"""
    reads: frozenset = frozenset()
    writes: frozenset = frozenset()
    dynamic: bool = False  #: some index depends on the marking

    def union(self, other):
        return DependencySet(self.reads | other.reads, self.writes | other.writes,
                             self.dynamic or other.dynamic)


def _collect_reads(e, replica_index, n, extents, reads):
    """Add place replicas read by folded `e` to `reads`; return the dynamic flag"""
    dynamic = False
    if isinstance(e, PlaceRead):
        if e.index is None:
            reads.add(PlaceRef(e.place, replica_index))
        elif isinstance(e.index, IntLit):
            reads.add(PlaceRef(e.place, e.index.value))
        else:
            dynamic = True
            reads.update(PlaceRef(e.place, k) for k in range(extents.get(e.place, n)))
    for child in children(e):
        dynamic = _collect_reads(child, replica_index, n, extents, reads) or dynamic
    return dynamic


def extract_dependencies(e, replica_index, n, repshared=None, extents=None):
    """Place replicas that expression `e` can read when run by `replica_index`

    Index expressions are folded with `repindex()` := `replica_index` and
    `n` := `n`; every index that folds to a constant gives an exact reference.
    An index that depends on the marking sets the `dynamic` flag and pulls
    in every replica (entry) of that place.

    Example:
        >>> extract_dependencies(parse("P[(repindex()+1) % n]"), 3, 10).reads
        frozenset({PlaceRef(place='P', index=4)})

    :param Expr e: expression to analyse
    :param int replica_index: index of the replica evaluating `e`
    :param int n: number of replicas
    :param repshared: resolver for `P.repshared()`, see `fold`
    :param extents: number of replicas or entries per place, for
        dynamic indices; places not listed default to `n`
    :type extents: dict[str, int] or None
    :rtype: DependencySet
    """
    folded = fold(e, replica_index, n, repshared)
    reads = set()
    dynamic = _collect_reads(folded, replica_index, n, extents or {}, reads)
    return DependencySet(frozenset(reads), frozenset(), dynamic)


def extract_update_dependencies(stmt, replica_index, n, repshared=None, extents=None):
    """Like `extract_dependencies`, for an update statement

    The target place replica (or all of them, for a dynamic target index)
    goes into `writes`; its index expression and the value go into `reads`.

    :param UpdateStmt stmt: update to analyse
    :rtype: DependencySet
    """
    extents = extents or {}
    target = fold(stmt.target, replica_index, n, repshared)
    reads = set()
    dynamic = _collect_reads(fold(stmt.value, replica_index, n, repshared),
                             replica_index, n, extents, reads)
    if target.index is None:
        writes = {PlaceRef(target.place, replica_index)}
    elif isinstance(target.index, IntLit):
        writes = {PlaceRef(target.place, target.index.value)}
    else:
        dynamic = _collect_reads(target.index, replica_index, n, extents, reads) or dynamic
        dynamic = True
        writes = {PlaceRef(target.place, k) for k in range(extents.get(target.place, n))}
    return DependencySet(frozenset(reads), frozenset(writes), dynamic)


# ......................................................................
# evaluation

class Binder(Protocol):
    """Maps place reads of one replica to positions in a marking vector"""
    replica_index: int
    n: int

    def var(self, place: str, index: int) -> int:
        """Position of replica/entry `index` of `place`; checks access"""

    def bare(self, place: str) -> int:
        """Position of the replica's own `place`"""

    def repshared(self, place: str) -> Sequence[int]:
        """Replica indices for `place.repshared()`; raises NotRepShared"""


def repshared_resolver(binder):
    """Adapt `binder.repshared` to the resolver expected by `fold`"""
    def resolve(place):
        try:
            return binder.repshared(place)
        except NotRepShared:
            return None

    return resolve


def compile_expr(e, binder):
    """Compile expression into a function of the marking vector

    The expression is folded first for the binder's replica; place reads
    with constant index are resolved (and access-checked) once, here.
    Reads with marking-dependent index are resolved and checked at run time.

    :param Expr e: expression to compile
    :param Binder binder: place resolution for the evaluating replica
    :return: function taking marking (sequence of int) and returning value
    :rtype: typing.Callable[[typing.Sequence[int]], typing.Any]
    """
    folded = fold(e, binder.replica_index, binder.n, repshared_resolver(binder))
    return _compile(folded, binder, {})


def compile_target(target, binder):
    """Compile update target into a function returning marking position

    :param PlaceRead target: left-hand side of an update
    :param Binder binder: place resolution for the evaluating replica
    :rtype: typing.Callable[[typing.Sequence[int]], int]
    """
    folded = fold(target, binder.replica_index, binder.n, repshared_resolver(binder))
    return _compile_position(folded, binder, {})


def _compile_position(read, binder, cells):
    place = read.place
    if read.index is None:
        position = binder.bare(place)
        return lambda m: position
    if isinstance(read.index, IntLit):
        position = binder.var(place, read.index.value)
        return lambda m: position
    index_fn = _compile(read.index, binder, cells)
    return lambda m: binder.var(place, index_fn(m))


def _compile(e, binder, cells):
    match e:
        case IntLit(value) | RealLit(value) | BoolLit(value):
            return lambda m: value
        case ListLit(values):
            return lambda m: values
        case RepIndex():
            value = binder.replica_index
            return lambda m: value
        case Size():
            value = binder.n
            return lambda m: value
        case Var(name):
            cell = cells[name]
            return lambda m: cell[0]
        case PlaceRead():
            position_fn = _compile_position(e, binder, cells)
            return lambda m: m[position_fn(m)]
        case RepShared(place):
            values = tuple(binder.repshared(place))
            return lambda m: values
        case Range(start, stop):
            start_fn, stop_fn = _compile(start, binder, cells), _compile(stop, binder, cells)
            return lambda m: tuple(range(start_fn(m), stop_fn(m)))
        case Len(seq):
            seq_fn = _compile(seq, binder, cells)
            return lambda m: len(seq_fn(m))
        case Element(seq, index):
            seq_fn, index_fn = _compile(seq, binder, cells), _compile(index, binder, cells)
            return lambda m: _element(seq_fn(m), index_fn(m))
        case SumOver(var, source, body):
            cell = [0]
            source_fn = _compile(source, binder, cells)
            body_fn = _compile(body, binder, {**cells, var: cell})

            def sum_over(m):
                total = 0
                for value in source_fn(m):
                    cell[0] = value
                    total += body_fn(m)
                return total

            return sum_over
        case UnOp('-', operand):
            operand_fn = _compile(operand, binder, cells)
            return lambda m: -operand_fn(m)
        case UnOp('!', operand):
            operand_fn = _compile(operand, binder, cells)
            return lambda m: not operand_fn(m)
        case BinOp('&&', left, right):
            left_fn, right_fn = _compile(left, binder, cells), _compile(right, binder, cells)
            return lambda m: left_fn(m) and right_fn(m)
        case BinOp('||', left, right):
            left_fn, right_fn = _compile(left, binder, cells), _compile(right, binder, cells)
            return lambda m: left_fn(m) or right_fn(m)
        case BinOp(op, left, right):
            func = _BINARY[op]
            left_fn, right_fn = _compile(left, binder, cells), _compile(right, binder, cells)
            return lambda m: func(left_fn(m), right_fn(m))
        case Cond(test, then, orelse):
            test_fn = _compile(test, binder, cells)
            then_fn, else_fn = _compile(then, binder, cells), _compile(orelse, binder, cells)
            return lambda m: then_fn(m) if test_fn(m) else else_fn(m)
    raise TypeError(f"not an expression: {e!r}")


class EvalContext(NamedTuple):
    """Evaluation context for `evaluate`

    The `marking` maps place names to a mark (int) or to marks of all
    replicas / entries (sequence of int).  If `grants` is given, only the
    listed indices of each place may be read.
    """
    replica_index: int = 0
    n: int = 1
    marking: Mapping[str, Any] | None = None
    grants: Mapping[str, Any] | None = None
    repshared: Mapping[str, Sequence[int]] | None = None


class _MappingBinder:
    """`Binder` over the place-name keyed marking of an `EvalContext`"""

    def __init__(self, ctx):
        self.replica_index = ctx.replica_index
        self.n = ctx.n
        self._grants = ctx.grants
        self._repshared = ctx.repshared
        self._slots = {}
        self.vector = []
        for place, value in (ctx.marking or {}).items():
            values = [value] if isinstance(value, int) else list(value)
            first = len(self.vector)
            self._slots[place] = (isinstance(value, int), range(first, first + len(values)))
            self.vector.extend(values)

    def var(self, place, index):
        if place not in self._slots:
            raise AccessViolation(f"place '{place}' is not accessible")
        if self._grants is not None and index not in self._grants.get(place, ()):
            raise AccessViolation(f"{place}@{index} is not granted to replica {self.replica_index}")
        slots = self._slots[place][1]
        if not 0 <= index < len(slots):
            raise IndexOutOfRange(f"{place}[{index}] outside [0, {len(slots)})")
        return slots[index]

    def bare(self, place):
        if place in self._slots and self._slots[place][0]:
            return self._slots[place][1][0]
        return self.var(place, self.replica_index)

    def repshared(self, place):
        if self._repshared is not None and place in self._repshared:
            return tuple(sorted(self._repshared[place]))
        raise NotRepShared(f"place '{place}' is not rep-shared")


def evaluate(e, ctx):
    """Evaluate expression in given context

    :param Expr e: type-checked expression
    :param EvalContext ctx: replica index, number of replicas, and marking
    :return: value of the expression (int, float, bool or tuple of int)
    :raises DivisionByZero: on division or modulo by zero
    :raises IndexOutOfRange: if resolved index is outside declared bounds
    :raises AccessViolation: on read of a place replica not granted
    """
    binder = _MappingBinder(ctx)
    return compile_expr(e, binder)(binder.vector)

