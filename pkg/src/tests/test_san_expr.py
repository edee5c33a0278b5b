import itertools
import unittest

import numpy as np

from src.san.errors import AccessViolation, DivisionByZero, ExprTypeError, IndexOutOfRange, ModelSyntaxError
from src.san.expr import (BinOp, BoolLit, EvalContext, ExprType, IntLit, ListLit, PlaceRead, PlaceRef,
                          RepIndex, RepShared, Size, SumOver, Var, constant_value, euclid_div, euclid_mod,
                          evaluate, extract_dependencies, extract_update_dependencies, fold, parse,
                          pretty_print, typecheck, UpdateStmt)


class ParseTestCase(unittest.TestCase):
    def test_parse_arithmetic(self):
        actual = parse("3 + 4")
        self.assertEqual(BinOp('+', IntLit(3), IntLit(4)), actual, "parse addition of literals")
        self.assertEqual(7, evaluate(actual, EvalContext()), "3 + 4 evaluates to 7")
        self.assertEqual(7, constant_value(actual), "3 + 4 folds to constant 7")

    def test_parse_ring_neighbour(self):
        expected = PlaceRead('P', BinOp('%', BinOp('-', RepIndex(), IntLit(1)), Size()))
        self.assertEqual(expected, parse("P[(repindex()-1) % n]"),
                         "index of left neighbour in a ring")

    def test_parse_precedence(self):
        self.assertEqual(parse("(1 + (2 * 3))"), parse("1 + 2 * 3"), "'*' binds tighter than '+'")
        self.assertEqual(parse("((1 - 2) - 3)"), parse("1 - 2 - 3"), "'-' is left associative")
        self.assertEqual(parse("((a < 1) && (b > 2)) || c == 0"), parse("a < 1 && b > 2 || c == 0"),
                         "'&&' binds tighter than '||'")

    def test_parse_aggregate(self):
        actual = parse("sum(j in P.repshared(): P[j])")
        self.assertEqual(SumOver('j', RepShared('P'), PlaceRead('P', Var('j'))), actual,
                         "bound variable in aggregate body is not a place read")

    def test_parse_comments(self):
        self.assertEqual(IntLit(1), parse("1 // one"), "comments are ignored")

    def test_syntax_error_position(self):
        with self.assertRaises(ModelSyntaxError) as cm:
            parse("P[")
        self.assertEqual(1, cm.exception.line, "error on the first line")
        self.assertEqual(3, cm.exception.column, "unexpected end of input at column 3")
        self.assertTrue(cm.exception.expected, "list of expected tokens is not empty")

    def test_syntax_error_unexpected_token(self):
        with self.assertRaises(ModelSyntaxError) as cm:
            parse("1 +\n* 2")
        self.assertEqual((2, 1), (cm.exception.line, cm.exception.column), "position of '*'")

    def test_pretty_print_round_trip(self):
        sources = [
            "3 + 4",
            "P[(repindex()-1) % n]",
            "if Q > 0 && !(R == 1) then 0.5 * Q else 1.0e-3",
            "sum(j in P.repshared(): P[j]) + len(range(0, n))",
            "[0, 2, 5][repindex() % 3] - -Q",
            "sum(j in []: 1) / 2",
            "true || false != true",
        ]
        for source in sources:
            e = parse(source)
            self.assertEqual(e, parse(pretty_print(e)), f"round trip of '{source}'")


class TypecheckTestCase(unittest.TestCase):
    def test_accepted(self):
        typecheck(parse("Q > 0 && R < 2"), ExprType.BOOL)
        typecheck(parse("0.5 * Q"), ExprType.REAL)
        typecheck(parse("Q + 1"), ExprType.REAL)
        typecheck(parse("P[repindex()]"), ExprType.INT)

    def test_rejected(self):
        for source, expected in [("Q + 1", ExprType.BOOL),
                                 ("0.5 * Q", ExprType.INT),
                                 ("Q && true", ExprType.BOOL),
                                 ("P[0.5]", ExprType.INT),
                                 ("1.5 % 2", ExprType.REAL),
                                 ("len(range(0, 1.5))", ExprType.INT)]:
            with self.assertRaises(ExprTypeError, msg=f"'{source}' is not {expected.value}"):
                typecheck(parse(source), expected)


class EvaluateTestCase(unittest.TestCase):
    def test_euclidean_mod(self):
        actual = evaluate(parse("(repindex()-1) % n"), EvalContext(replica_index=0, n=5))
        self.assertEqual(4, actual, "Euclidean mod wraps replica 0 to n-1")

    def test_euclidean_properties(self):
        for a, b in itertools.product(range(-20, 21), range(1, 8)):
            self.assertTrue(0 <= euclid_mod(a, b) < b, f"0 <= {a} mod {b} < {b}")
            self.assertEqual(a, b * euclid_div(a, b) + euclid_mod(a, b), f"division identity for {a}, {b}")
            self.assertEqual(a, -b * euclid_div(a, -b) + euclid_mod(a, -b), f"division identity for {a}, {-b}")

    def test_indexed_read(self):
        ctx = EvalContext(replica_index=2, n=3, marking={'P': [7, 8, 9]})
        self.assertEqual(9, evaluate(parse("P[repindex()]"), ctx), "P[repindex()] of replica 2")

    def test_division(self):
        with self.assertRaises(DivisionByZero):
            evaluate(parse("1/0"), EvalContext())
        with self.assertRaises(DivisionByZero):
            evaluate(parse("Q % 0"), EvalContext(marking={'Q': 3}))
        self.assertEqual(-2, evaluate(parse("(0 - 7) / 4"), EvalContext()), "integer division is Euclidean")
        self.assertEqual(0.75, evaluate(parse("3 / 4.0"), EvalContext()), "real division")

    def test_index_out_of_range(self):
        with self.assertRaises(IndexOutOfRange):
            evaluate(parse("P[Q]"), EvalContext(marking={'P': [1, 2], 'Q': 2}))

    def test_access_violation(self):
        ctx = EvalContext(replica_index=1, n=3, marking={'P': [1, 2, 3]}, grants={'P': {0, 1}})
        self.assertEqual(3, evaluate(parse("P[0] + P[1]"), ctx), "granted replicas are readable")
        with self.assertRaises(AccessViolation):
            evaluate(parse("P[2]"), ctx)

    def test_repshared_aggregate(self):
        ctx = EvalContext(replica_index=0, n=4, marking={'P': [1, 10, 100, 1000]},
                          repshared={'P': [3, 0, 1]})
        self.assertEqual(1011, evaluate(parse("sum(j in P.repshared(): P[j])"), ctx),
                         "sum over replicas sharing with replica 0")
        self.assertEqual(3, evaluate(parse("len(P.repshared())"), ctx), "number of sharing replicas")
        self.assertEqual(0, evaluate(parse("P.repshared()[0]"), ctx), "list is ascending")

    def test_conditional(self):
        e = parse("if Q > 0 then 2 * Q else 7")
        self.assertEqual(6, evaluate(e, EvalContext(marking={'Q': 3})), "then branch")
        self.assertEqual(7, evaluate(e, EvalContext(marking={'Q': 0})), "else branch")


class DependencyTestCase(unittest.TestCase):
    def test_exact_index(self):
        deps = extract_dependencies(parse("P[(repindex()+1) % n]"), 3, 10)
        self.assertEqual(frozenset({PlaceRef('P', 4)}), deps.reads, "right neighbour of replica 3")
        self.assertFalse(deps.dynamic, "constant index is not dynamic")

    def test_dynamic_index(self):
        deps = extract_dependencies(parse("P[Q]"), 1, 4)
        expected = {PlaceRef('Q', 1)} | {PlaceRef('P', k) for k in range(4)}
        self.assertEqual(expected, set(deps.reads), "index read from place pulls in every replica")
        self.assertTrue(deps.dynamic, "marking dependent index is dynamic")

    def test_no_reads(self):
        deps = extract_dependencies(parse("5 > 3"), 0, 1)
        self.assertEqual(frozenset(), deps.reads, "literals read nothing")
        self.assertFalse(deps.dynamic, "literals are not dynamic")

    def test_pruned_branch(self):
        deps = extract_dependencies(parse("if repindex() == 0 then P[1] else P[2]"), 0, 3)
        self.assertEqual(frozenset({PlaceRef('P', 1)}), deps.reads, "only the taken branch is read")

    def test_unrolled_aggregate(self):
        deps = extract_dependencies(parse("sum(d in range(0, 3): P[(repindex() + d - 1) % n])"), 0, 8)
        self.assertEqual({PlaceRef('P', 7), PlaceRef('P', 0), PlaceRef('P', 1)}, set(deps.reads),
                         "ring neighbourhood of replica 0")
        self.assertFalse(deps.dynamic, "aggregate over constant range is not dynamic")

    def test_update_dependencies(self):
        stmt = UpdateStmt(PlaceRead('P', parse("(repindex() + 1) % n")), parse("Q + 1"))
        deps = extract_update_dependencies(stmt, 4, 5)
        self.assertEqual(frozenset({PlaceRef('P', 0)}), deps.writes, "written replica")
        self.assertEqual(frozenset({PlaceRef('Q', 4)}), deps.reads, "value reads own Q")

    def test_fold_keeps_division_by_zero(self):
        folded = fold(parse("1 / 0"))
        self.assertIsInstance(folded, BinOp, "failing sub-expression is left unfolded")
        self.assertEqual(BoolLit(True), fold(parse("n > 2"), n=3), "n is substituted")
        self.assertEqual(ListLit((1, 2)), fold(parse("range(1, n)"), n=3), "range folds to list")

    def test_division_by_zero_left_to_evaluation(self):
        deps = extract_dependencies(parse("if P > 0 then 1 / 0 else 1"), 0, 1)
        self.assertEqual({PlaceRef('P', 0)}, set(deps.reads), "failing branch does not stop extraction")
        self.assertIsNone(constant_value(parse("7 % 0")), "not a constant")
        with self.assertRaises(DivisionByZero):
            evaluate(parse("1 / 0"), EvalContext())

    def test_extraction_soundness(self):
        """Markings agreeing on extracted reads give the same value"""
        sources = [
            "P[(repindex()+1) % n] + P[repindex()]",
            "if P[0] > 1 then P[(repindex()+2) % n] else Q",
            "sum(j in range(0, 3): P[(repindex() + j) % n]) * Q",
            "P[Q % n] - P[1]",
        ]
        rng = np.random.default_rng(2024)
        n = 6
        for source, replica in itertools.product(sources, range(n)):
            e = parse(source)
            deps = extract_dependencies(e, replica, n)
            for _ in range(20):
                p1 = [int(v) for v in rng.integers(0, 4, n)]
                q1 = int(rng.integers(0, 10))
                p2 = [p1[k] if PlaceRef('P', k) in deps.reads else int(v)
                      for k, v in enumerate(rng.integers(0, 4, n))]
                q2 = q1 if PlaceRef('Q', replica) in deps.reads else int(rng.integers(0, 10))
                # scalar Q of the evaluating replica
                ctx1 = EvalContext(replica, n, {'P': p1, 'Q': [q1] * n})
                ctx2 = EvalContext(replica, n, {'P': p2, 'Q': [q2] * n})
                self.assertEqual(evaluate(e, ctx1), evaluate(e, ctx2),
                                 f"'{source}' at replica {replica} depends only on {sorted(deps.reads)}")

    def test_extraction_soundness_random(self):
        """Random expressions keep their value when unread copies change"""
        rng = np.random.default_rng(1000)
        n = 5
        for _ in range(1000):
            source = random_int_source(rng, 3)
            replica = int(rng.integers(0, n))
            e = parse(source)
            deps = extract_dependencies(e, replica, n)
            p1 = [int(v) for v in rng.integers(0, 4, n)]
            q1 = int(rng.integers(0, 4))
            for _ in range(3):
                p2 = [p1[k] if PlaceRef('P', k) in deps.reads else int(v)
                      for k, v in enumerate(rng.integers(0, 4, n))]
                q2 = q1 if PlaceRef('Q', replica) in deps.reads else int(rng.integers(0, 4))
                ctx1 = EvalContext(replica, n, {'P': p1, 'Q': [q1] * n})
                ctx2 = EvalContext(replica, n, {'P': p2, 'Q': [q2] * n})
                self.assertEqual(evaluate(e, ctx1), evaluate(e, ctx2),
                                 f"'{source}' at replica {replica} depends only on {sorted(deps.reads)}")


def random_int_source(rng, depth):
    """Random integer expression over the copies of P and the scalar Q"""
    leaves = ["P", "Q", "repindex()", "n", str(int(rng.integers(0, 4)))]
    if depth == 0:
        return leaves[int(rng.integers(0, len(leaves)))]
    a, b = random_int_source(rng, depth - 1), random_int_source(rng, depth - 1)
    forms = [f"({a} + {b})", f"({a} - {b})", f"({a} * {b})", f"P[({a}) % n]",
             f"(if {random_bool_source(rng, depth - 1)} then {a} else {b})",
             f"sum(j{depth} in range(0, 2): P[({a} + j{depth}) % n])", a]
    return forms[int(rng.integers(0, len(forms)))]


def random_bool_source(rng, depth):
    a, b = random_int_source(rng, depth), random_int_source(rng, depth)
    forms = [f"{a} > {b}", f"{a} == {b}", f"{a} <= {b}"]
    if depth > 0:
        forms += [f"({random_bool_source(rng, depth - 1)} && {random_bool_source(rng, depth - 1)})",
                  f"!({random_bool_source(rng, depth - 1)})"]
    return forms[int(rng.integers(0, len(forms)))]


if __name__ == '__main__':
    unittest.main()
