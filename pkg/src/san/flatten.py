"""Instantiate composition tree into canonical state variables and activity instances

Every place of every atomic instance gets a *raw slot* (one per array entry),
numbered depth-first, replicas in ascending order, places in declaration
order.  Sharing (Rep shared places, Join groups, NARep place-sharing and
up-sharing) merges slots into alias classes with a union-find structure;
each class becomes one canonical variable.  Variables are numbered in the
order of the smallest slot of their class, so ids are reproducible.

Example:
    >>> fm = flatten(narep(atomic(cell), 5, {'P': RepShared(ring_access(5))}, name='ring'))
    >>> [v.label for v in fm.variables][:2]
    ['ring[0]/cell.P', 'ring[1]/cell.P']
"""
import sys
from typing import NamedTuple

from src.san import compose
from src.san.compose import Atomic, Join, NARep, Rep
from src.san.errors import (AccessViolation, IndexOutOfRange, InconsistentInitialization,
                            NegativeMarking, NotRepShared, ScopeError)
from src.san.expr import (DependencySet, EvalContext, PlaceRead, RepIndex, RepShared, Size,
                          compile_expr, compile_target, evaluate, extract_dependencies,
                          extract_update_dependencies, repshared_resolver, walk)


class UnionFind:
    """Disjoint sets of integers where the representative is the smallest member

    >>> uf = UnionFind()
    >>> uf.union(3, 1)
    >>> uf.union(5, 3)
    >>> uf.find(5)
    1
    """

    def __init__(self):
        self.parent = {}

    def find(self, x):
        root = self.parent.setdefault(x, x)
        while root != self.parent[root]:
            root = self.parent[root]
        # path compression
        while x != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x, y):
        px = self.find(x)
        py = self.find(y)
        if px == py:
            return
        if px < py:
            self.parent[py] = px
        else:
            self.parent[px] = py

    def classes(self):
        """Map from representative to sorted members"""
        result = {}
        for x in sorted(self.parent):
            result.setdefault(self.find(x), []).append(x)
        return result


class CanonicalVar(NamedTuple):
    id: int
    label: str  #: source path of the representative slot
    kind: str  #: 'scalar', or 'array[N]' for entries of array places
    initial_expr: object
    owner_replica: int | None  #: replica index of representative slot, None outside replicators
    initial: int
    slots: tuple[int, ...]
    slot_labels: tuple[str, ...]  #: labels of `slots`, e.g. both sides of an up-share


class ActivityInstance(NamedTuple):
    id: int
    label: str  #: e.g. 'ring[3]/cell:flip'
    decl: object  #: ActivityDecl
    path: str  #: path of the atomic instance, e.g. 'ring[3]/cell'
    replica_index: int
    n: int
    scope_kind: str | None  #: 'narep', 'rep', or None
    gate_reads: frozenset  #: variables read by enabling, rate and case weights
    update_reads: frozenset
    writes: frozenset
    dynamic: bool
    grants: frozenset  #: variables this instance may read and write


class Access(NamedTuple):
    reads: frozenset
    writes: frozenset


class FlatModel(NamedTuple):
    variables: tuple[CanonicalVar, ...]
    activities: tuple[ActivityInstance, ...]
    binders: tuple  #: per activity instance, maps place reads to variable ids
    slot_count: int

    @property
    def var_count(self):
        return len(self.variables)

    def place_variables(self, place):
        """Ids of variables holding a slot of a place named `place`, in slot order"""
        slot_vars = sorted((slot, var.id) for var in self.variables
                           for slot, label in zip(var.slots, var.slot_labels)
                           if _place_of_label(label) == place)
        return list(dict.fromkeys(var_id for _, var_id in slot_vars))

    def activity_by_label(self, label):
        for act in self.activities:
            if act.label == label:
                return act
        raise KeyError(label)


def _place_of_label(label):
    """Place name in slot label 'ring[0]/cell.P' or 'top/q.Q[1]'"""
    name = label.rsplit('.', 1)[-1]
    return name.split('[', 1)[0]


class _Slot(NamedTuple):
    label: str
    kind: str
    initial_expr: object
    scope: object  #: _Scope or None


class _Scope:
    """Innermost replicator of an atomic instance and its replica index"""

    def __init__(self, kind, node, replica_index, n, tables):
        self.kind = kind
        self.node = node
        self.replica_index = replica_index
        self.n = n
        self.tables = tables  #: NARep only: per replica, key -> slots


class _Pending(NamedTuple):
    decl: object
    label: str
    path: str
    scope: _Scope | None
    keys: dict  #: place name -> key in the innermost NARep child
    table: dict  #: place name -> own slots
    lengths: dict  #: place name -> array length or None


class InstanceBinder:
    """Resolves place reads of one activity instance to canonical variable ids

    Scalar places under NARep can be indexed by replica index; the index
    must be granted by the place's sharing mode.  Array places are indexed
    by entry.
    """

    def __init__(self, replica_index, n, narep, own, lengths, replicas=None, grants=None, keys=None):
        self.replica_index = replica_index
        self.n = n
        self.narep = narep  #: NARep node or None
        self._own = own  #: place -> tuple of var ids of own slots
        self._lengths = lengths  #: place -> array length or None
        self._replicas = replicas or {}  #: scalar place -> var id per replica
        self._grants = grants or {}  #: scalar place -> granted replica indices
        self.keys = keys or {}  #: scalar place -> sharing key in the NARep

    def var(self, place, index):
        if place not in self._own:
            raise AccessViolation(f"place '{place}' is not accessible")
        if self._lengths[place] is not None:
            if not 0 <= index < self._lengths[place]:
                raise IndexOutOfRange(f"{place}[{index}] outside [0, {self._lengths[place]})")
            return self._own[place][index]
        if self.narep is None:
            raise AccessViolation(f"scalar place '{place}' can be indexed only inside NARep")
        if not 0 <= index < self.n:
            raise IndexOutOfRange(f"{place}[{index}] outside replicas [0, {self.n})")
        if index not in self._grants[place]:
            raise AccessViolation(f"replica {self.replica_index} has no access to {place}@{index}")
        return self._replicas[place][index]

    def bare(self, place):
        if place not in self._own:
            raise AccessViolation(f"place '{place}' is not accessible")
        if self._lengths[place] is not None:
            raise AccessViolation(f"array place '{place}' must be indexed")
        return self._own[place][0]

    def repshared(self, place):
        if self.narep is None or place not in self.keys:
            raise NotRepShared(f"place '{place}' is not rep-shared")
        return repshared_indices(self.narep, self.keys[place], self.replica_index)

    def ref_var(self, ref):
        """Variable id for a `PlaceRef` from dependency extraction"""
        if self._lengths.get(ref.place) is None and self.narep is None:
            return self.bare(ref.place)
        return self.var(ref.place, ref.index)

    def extents(self):
        return {place: (self.n if length is None else length)
                for place, length in self._lengths.items()}

    def granted_vars(self):
        result = set()
        for place, ids in self._own.items():
            result.update(ids)
        for place, indices in self._grants.items():
            result.update(self._replicas[place][i] for i in indices)
        return frozenset(result)

    def is_granted(self, place, index):
        if self._lengths.get(place) is not None or self.narep is None:
            return True
        return index in self._grants.get(place, ())


def repshared_indices(node, key, replica_index):
    """Replicas j of NARep `node` with `replica_index` in access(j), ascending"""
    mode = node.mode(key)
    if not isinstance(mode, compose.RepShared):
        raise NotRepShared(f"place '{key}' of '{node.name}' is not rep-shared")
    return tuple(j for j in range(node.n) if replica_index in mode.access[j])


def _grants_for(mode, replica_index):
    match mode:
        case compose.PlaceShared():
            return mode.group_of(replica_index) | {replica_index}
        case compose.RepShared():
            return mode.access[replica_index]
    return frozenset((replica_index,))


class _Flattener:
    def __init__(self):
        self.uf = UnionFind()
        self.slots = []
        self.pending = []

    def new_slot(self, label, kind, initial_expr, scope):
        slot = len(self.slots)
        self.slots.append(_Slot(label, kind, initial_expr, scope))
        self.uf.find(slot)
        return slot

    def instantiate(self, node, prefix, scope, join_path):
        """Create slots below `node`; return (exported table, up-share table)"""
        match node:
            case Atomic(model, name):
                return self.instantiate_atomic(model, prefix + name, scope, join_path), {}
            case Join(name, children, joins):
                tables, up_tables = {}, {}
                for child in children:
                    tables[child.name], up_tables[child.name] = self.instantiate(
                        child, f"{prefix}{name}/", scope, join_path + [child.name])
                for spec in joins:
                    first_path, first_key = spec.group[0]
                    for path, key in spec.group[1:]:
                        for a, b in zip(tables[first_path][first_key], tables[path][key]):
                            self.uf.union(a, b)
                for child in children:
                    if isinstance(child, NARep):
                        for spec in child.up_shared:
                            inner = up_tables[child.name][spec.inner_place]
                            outer = tables[spec.sibling_path][spec.outer_place]
                            for replica, entry in sorted(spec.entry_map.items()):
                                self.uf.union(inner[replica][0], outer[entry])
                exported = {}
                for child in children:
                    for key, slots in tables[child.name].items():
                        exported[compose.prefix_key(child.name, key)] = slots
                return exported, {}
            case Rep(name, child, n, shared):
                tables = []
                for replica in range(n):
                    inner = _Scope('rep', node, replica, n, None)
                    table, _ = self.instantiate(child, f"{prefix}{name}[{replica}]/", inner, [])
                    tables.append(table)
                for key in shared:
                    for table in tables[1:]:
                        for a, b in zip(tables[0][key], table[key]):
                            self.uf.union(a, b)
                return {key: tables[0][key] for key in sorted(shared)}, {}
            case NARep(name, child, n, sharing, _):
                tables = []
                for replica in range(n):
                    inner = _Scope('narep', node, replica, n, tables)
                    table, _ = self.instantiate(child, f"{prefix}{name}[{replica}]/", inner, [])
                    tables.append(table)
                for key, mode in sharing.items():
                    if isinstance(mode, compose.PlaceShared):
                        for group in mode.groups:
                            members = sorted(group)
                            for replica in members[1:]:
                                for a, b in zip(tables[members[0]][key], tables[replica][key]):
                                    self.uf.union(a, b)
                up_table = {key: [table[key] for table in tables] for key in tables[0]}
                return {}, up_table
        raise TypeError(f"not a composition node: {node!r}")

    def instantiate_atomic(self, model, path, scope, join_path):
        table = {}
        for decl in model.places:
            exprs = decl.initial_exprs()
            if decl.is_array:
                table[decl.name] = tuple(
                    self.new_slot(f"{path}.{decl.name}[{k}]", decl.kind, exprs[k], scope)
                    for k in range(decl.length))
            else:
                table[decl.name] = (self.new_slot(f"{path}.{decl.name}", 'scalar', exprs[0], scope),)

        keys = {}
        for decl in model.places:
            key = decl.name
            for child_name in reversed(join_path):
                key = compose.prefix_key(child_name, key)
            keys[decl.name] = key
        lengths = {decl.name: decl.length for decl in model.places}
        for act in model.activities:
            self.pending.append(_Pending(act, f"{path}:{act.name}", path, scope, keys, table, lengths))
        return table


def _check_scope(e, scope, where, lengths, initial=False):
    """Reject repindex(), n and repshared() outside the replicator allowing them"""
    kind = scope.kind if scope is not None else None
    for node in walk(e):
        if isinstance(node, RepIndex) and kind != 'narep' and not (initial and kind == 'rep'):
            raise ScopeError(f"{where}: repindex() used outside NARep")
        if isinstance(node, Size) and kind is None:
            raise ScopeError(f"{where}: n used outside Rep/NARep")
        if isinstance(node, RepShared) and kind != 'narep':
            raise ScopeError(f"{where}: {node.place}.repshared() used outside NARep")
        if (isinstance(node, PlaceRead) and node.index is not None
                and lengths.get(node.place, 0) is None and kind != 'narep'):
            raise AccessViolation(f"{where}: scalar place '{node.place}' indexed outside NARep")


def _activity_expressions(decl):
    exprs = list(decl.gate_expressions())
    for case in decl.cases:
        for stmt in case.updates:
            exprs.extend((stmt.target, stmt.value))
    return exprs


def _make_binder(pending, var_of_slot):
    own = {place: tuple(var_of_slot[slot] for slot in slots)
           for place, slots in pending.table.items()}
    scope = pending.scope
    if scope is None:
        return InstanceBinder(0, 1, None, own, pending.lengths)
    if scope.kind != 'narep':
        return InstanceBinder(scope.replica_index, scope.n, None, own, pending.lengths)

    replicas, grants, keys = {}, {}, {}
    for place, length in pending.lengths.items():
        if length is not None:
            continue
        key = pending.keys[place]
        keys[place] = key
        replicas[place] = tuple(var_of_slot[table[key][0]] for table in scope.tables)
        grants[place] = _grants_for(scope.node.mode(key), scope.replica_index)
    return InstanceBinder(scope.replica_index, scope.n, scope.node, own, pending.lengths,
                          replicas, grants, keys)


def _to_vars(deps, binder):
    """Map place references to variable ids; dynamic references only if granted"""
    if not deps.dynamic:
        return frozenset(binder.ref_var(ref) for ref in deps.reads), \
            frozenset(binder.ref_var(ref) for ref in deps.writes)
    granted = [ref for ref in deps.reads if binder.is_granted(ref.place, ref.index)]
    granted_writes = [ref for ref in deps.writes if binder.is_granted(ref.place, ref.index)]
    return frozenset(binder.ref_var(ref) for ref in granted), \
        frozenset(binder.ref_var(ref) for ref in granted_writes)


def _resolve(act_id, pending, binder):
    decl = pending.decl
    resolver = repshared_resolver(binder)
    extents = binder.extents()
    args = (binder.replica_index, binder.n, resolver, extents)

    gate = DependencySet()
    for e in decl.gate_expressions():
        gate = gate.union(extract_dependencies(e, *args))
    updates = DependencySet()
    for case in decl.cases:
        for stmt in case.updates:
            updates = updates.union(extract_update_dependencies(stmt, *args))

    if gate.dynamic or updates.dynamic:
        # constant indices next to dynamic ones are still checked statically
        for e in decl.gate_expressions():
            compile_expr(e, binder)
        for case in decl.cases:
            for stmt in case.updates:
                compile_target(stmt.target, binder)
                compile_expr(stmt.value, binder)

    gate_reads, _ = _to_vars(gate, binder)
    update_reads, writes = _to_vars(updates, binder)
    scope = pending.scope
    return ActivityInstance(act_id, pending.label, decl, pending.path, binder.replica_index, binder.n,
                            scope.kind if scope else None, gate_reads, update_reads, writes,
                            gate.dynamic or updates.dynamic, binder.granted_vars())


def flatten(root, verbose=False):
    """Expand composition tree into a `FlatModel`

    :param root: composition tree (Atomic, Join, Rep or NARep node)
    :param bool verbose: whether to print summary to standard error
    :return: canonical variables and activity instances with resolved dependencies
    :rtype: FlatModel
    :raises ScopeError: if repindex(), n or repshared() are used out of scope
    :raises AccessViolation: if an expression reads a place replica not granted
    :raises IndexOutOfRange: if a constant index is outside declared bounds
    :raises InconsistentInitialization: if aliased slots get different initial values
    :raises NegativeMarking: if some initial value is negative
    """
    flattener = _Flattener()
    flattener.instantiate(root, '', None, [])

    classes = flattener.uf.classes()
    representatives = sorted(classes)
    var_of_slot = {}
    for var_id, representative in enumerate(representatives):
        for slot in classes[representative]:
            var_of_slot[slot] = var_id

    variables = [_canonical_var(var_id, classes[representative], flattener.slots)
                 for var_id, representative in enumerate(representatives)]

    activities, binders = [], []
    for act_id, pending in enumerate(flattener.pending):
        for e in _activity_expressions(pending.decl):
            _check_scope(e, pending.scope, pending.label, pending.lengths)
        binder = _make_binder(pending, var_of_slot)
        activities.append(_resolve(act_id, pending, binder))
        binders.append(binder)

    if verbose:
        print(f"flattened {len(flattener.slots)} slots into {len(variables)} variables "
              f"and {len(activities)} activity instances", file=sys.stderr)

    return FlatModel(tuple(variables), tuple(activities), tuple(binders), len(flattener.slots))


def _canonical_var(var_id, members, slots):
    values = {}
    for slot in members:
        info = slots[slot]
        _check_scope(info.initial_expr, info.scope, info.label, {}, initial=True)
        ctx = EvalContext(replica_index=info.scope.replica_index if info.scope else 0,
                          n=info.scope.n if info.scope else 1)
        values[slot] = evaluate(info.initial_expr, ctx)

    distinct = set(values.values())
    if len(distinct) > 1:
        described = ', '.join(f"{slots[slot].label}={value}" for slot, value in values.items())
        raise InconsistentInitialization(f"aliased places disagree on initial value: {described}")
    initial = distinct.pop()
    info = slots[members[0]]
    if initial < 0:
        raise NegativeMarking(f"{info.label}: initial value {initial} is negative")
    return CanonicalVar(var_id, info.label, info.kind, info.initial_expr,
                        info.scope.replica_index if info.scope else None,
                        int(initial), tuple(members), tuple(slots[slot].label for slot in members))


def initial_marking(fm):
    """Initial marking of flattened model

    Initial values are evaluated (and checked for agreement between aliased
    place replicas) by `flatten`; this returns a fresh copy.

    :param FlatModel fm: flattened model
    :rtype: Marking
    """
    return [var.initial for var in fm.variables]


def resolve_access(fm, activity):
    """Canonical variables read and written by activity instance

    :param FlatModel fm: flattened model
    :param activity: activity instance or its id
    :type activity: ActivityInstance or int
    :rtype: Access
    """
    if isinstance(activity, int):
        activity = fm.activities[activity]
    return Access(activity.gate_reads | activity.update_reads, activity.writes)


def repshared_list(fm, place, replica_index, narep=None):
    """Replica indices returned by `place.repshared()` for given replica

    :param FlatModel fm: flattened model
    :param str place: place name (or sharing key) in the NARep template
    :param int replica_index: index of the asking replica
    :param narep: name of the NARep node, if the model has more than one
    :type narep: str or None
    :rtype: list[int]
    :raises NotRepShared: if the place is not rep-shared
    """
    for binder in fm.binders:
        if binder.narep is None or (narep is not None and binder.narep.name != narep):
            continue
        key = binder.keys.get(place, place if place in binder.narep.sharing else None)
        if key is None:
            continue
        if not 0 <= replica_index < binder.narep.n:
            raise IndexOutOfRange(f"replica {replica_index} outside [0, {binder.narep.n})")
        return list(repshared_indices(binder.narep, key, replica_index))
    raise NotRepShared(f"place '{place}' is not rep-shared")


def _ids(ids):
    return ','.join(str(i) for i in sorted(ids))


def dump_flat_model(fm):
    """Text tables of canonical variables and activity instances

    One tab separated line per variable, then per activity instance;
    output is stable across runs, and is used for golden-file tests.

    :param FlatModel fm: flattened model
    :rtype: str
    """
    lines = ['# vars']
    for var in fm.variables:
        owner = '-' if var.owner_replica is None else var.owner_replica
        lines.append(f"{var.id}\t{var.label}\t{var.kind}\towner={owner}"
                     f"\tinit={var.initial}\tsize={len(var.slots)}")
    lines.append('# activities')
    for act in fm.activities:
        reads = act.gate_reads | act.update_reads
        lines.append(f"{act.id}\t{act.label}\treplica={act.replica_index}\tn={act.n}"
                     f"\treads={_ids(reads)}\twrites={_ids(act.writes)}"
                     f"\tdynamic={'true' if act.dynamic else 'false'}")
    return '\n'.join(lines) + '\n'
