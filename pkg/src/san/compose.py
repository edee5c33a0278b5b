"""Composition tree: Join, anonymous Rep and non-anonymous NARep nodes

Places are addressed by *keys* relative to a node:

- for an `Atomic` node the key is the place name, e.g. "P",
- a `Join` prefixes keys of its children with the child name: "A.P" for
  a place of atomic child A, "B/C.P" for a place of grandchild C below B,
- `Rep` and `NARep` are transparent: keys of their child are used as is.

A node exports the keys its parent can refer to: all places for Atomic,
prefixed exports of children for Join, shared places for Rep.  NARep
exports nothing; its place replicas are made visible to siblings only
by up-sharing (`UpShareSpec`), which the parent Join resolves.
"""
from typing import NamedTuple

from src.san.errors import CompositionError, InvalidSharingSpec, KindMismatch, UnknownPath, UnknownPlace
from src.san.model import AtomicModel


# ......................................................................
# sharing modes

class Local(NamedTuple):
    """Every replica has its own place (default)"""


class PlaceShared(NamedTuple):
    """Replicas in the same group share a single place replica

    Replicas not covered by any group behave as local.
    """
    groups: tuple[frozenset, ...]

    def group_of(self, replica):
        for group in self.groups:
            if replica in group:
                return group
        return frozenset((replica,))


class RepShared(NamedTuple):
    """Replica `i` may read and write place replicas listed in `access[i]`"""
    access: dict


def ring_access(n, k=1):
    """Access map where every replica sees `k` neighbours on each side

    >>> ring_access(5)[0]
    frozenset({0, 1, 4})
    """
    return {i: frozenset((i + d) % n for d in range(-k, k + 1)) for i in range(n)}


def star_access(n, hub=0):
    """Access map where `hub` sees everyone and others see only the hub"""
    return {i: frozenset(range(n)) if i == hub else frozenset((hub, i)) for i in range(n)}


def full_access(n):
    all_replicas = frozenset(range(n))
    return {i: all_replicas for i in range(n)}


# ......................................................................
# nodes

class JoinSpec(NamedTuple):
    """Places (child name, key in child exports) merged into one variable"""
    group: tuple[tuple[str, str], ...]


class UpShareSpec(NamedTuple):
    """Alias replicas of a NARep place to entries of a sibling's array place"""
    inner_place: str
    replicas: frozenset
    sibling_path: str
    outer_place: str
    entry_map: dict  #: inner replica index -> outer array index


class Atomic(NamedTuple):
    model: AtomicModel
    name: str


class Join(NamedTuple):
    name: str
    children: tuple
    joins: tuple[JoinSpec, ...] = ()


class Rep(NamedTuple):
    name: str
    child: object
    n: int
    shared_places: frozenset = frozenset()


class NARep(NamedTuple):
    name: str
    child: object
    n: int
    sharing: dict
    up_shared: tuple[UpShareSpec, ...] = ()

    def mode(self, key):
        """Sharing mode of place `key`, `Local()` if not listed"""
        return self.sharing.get(key, Local())


def exports(node):
    """Keys visible to the parent of `node`, mapped to array length (None for scalars)

    :rtype: dict[str, int | None]
    """
    match node:
        case Atomic(model, _):
            return {decl.name: decl.length for decl in model.places}
        case Join(_, children, _):
            result = {}
            for child in children:
                for key, length in exports(child).items():
                    result[prefix_key(child.name, key)] = length
            return result
        case Rep(_, child, _, shared):
            child_exports = exports(child)
            return {key: child_exports[key] for key in sorted(shared)}
        case NARep():
            return {}
    raise TypeError(f"not a composition node: {node!r}")


def prefix_key(child_name, key):
    """Key of child's place `key` as seen from the Join containing the child"""
    return f"{child_name}/{key}" if '.' in key else f"{child_name}.{key}"


def _kind(length):
    return 'scalar' if length is None else f"array[{length}]"


# ......................................................................
# constructors

def atomic(model, name=None):
    """Leaf node for atomic model; named after the model by default"""
    return Atomic(model, name or model.name)


def rep(child, n, shared_places=(), name='rep'):
    """Anonymous replication of `child`, sharing `shared_places` among all replicas

    :param child: replicated composition node
    :param int n: number of replicas, at least 1
    :param shared_places: keys of places of `child` that are shared
    :param str name: node name
    :rtype: Rep
    :raises CompositionError: if n < 1
    :raises UnknownPlace: if some shared place is not a place of `child`
    """
    if n < 1:
        raise CompositionError(f"{name}: number of replicas must be at least 1, got {n}")
    known = exports(child)
    for key in shared_places:
        if key not in known:
            raise UnknownPlace(f"{name}: '{key}' is not a place of '{child.name}'")
    return Rep(name, child, n, frozenset(shared_places))


def _check_replica(place, index, n, what):
    if not (isinstance(index, int) and 0 <= index < n):
        raise InvalidSharingSpec(place, 'INDEX_OUT_OF_RANGE',
                                 f"{what} {index} outside replicas 0..{n - 1}")


def _normalize_mode(place, mode, n, length):
    if isinstance(mode, Local):
        return mode
    if isinstance(mode, PlaceShared):
        seen = set()
        groups = []
        for group in mode.groups:
            group = frozenset(group)
            if not group:
                raise InvalidSharingSpec(place, 'EMPTY_GROUP', "place-sharing group is empty")
            for replica in sorted(group):
                _check_replica(place, replica, n, "replica")
            if seen & group:
                raise InvalidSharingSpec(place, 'OVERLAPPING_GROUPS',
                                         f"replicas {sorted(seen & group)} are in more than one group")
            seen |= group
            groups.append(group)
        return PlaceShared(tuple(groups))
    if isinstance(mode, RepShared):
        if length is not None:
            raise InvalidSharingSpec(place, 'REPSHARED_ARRAY',
                                     "only scalar places can be rep-shared")
        access = {}
        for replica, allowed in mode.access.items():
            _check_replica(place, replica, n, "replica")
            allowed = frozenset(allowed)
            for other in sorted(allowed):
                _check_replica(place, other, n, "accessed replica")
            if replica not in allowed:
                raise InvalidSharingSpec(place, 'OWNER_NOT_IN_ACCESS',
                                         f"access of replica {replica} does not contain {replica}")
            access[replica] = allowed
        return RepShared({i: access.get(i, frozenset((i,))) for i in range(n)})
    raise TypeError(f"not a sharing mode: {mode!r}")


def narep(child, n, sharing=None, up_shared=(), name='narep'):
    """Non-anonymous indexed replication of `child`

    Places not listed in `sharing` are local.  Replicas missing from
    a `RepShared` access map get access to their own place only.

    Example:
        >>> ring = narep(cell, 5, {'P': RepShared(ring_access(5))}, name='ring')

    :param child: replicated composition node
    :param int n: number of replicas, at least 1
    :param sharing: sharing mode per place key
    :type sharing: dict[str, Local | PlaceShared | RepShared] or None
    :param up_shared: aliasing of place replicas to a sibling's array place
    :type up_shared: typing.Sequence[UpShareSpec]
    :param str name: node name
    :rtype: NARep
    :raises InvalidSharingSpec: with the offending place and rule
    """
    if n < 1:
        raise CompositionError(f"{name}: number of replicas must be at least 1, got {n}")
    known = exports(child)
    normalized = {}
    for key, mode in (sharing or {}).items():
        if key not in known:
            raise InvalidSharingSpec(key, 'UNKNOWN_PLACE', f"'{key}' is not a place of '{child.name}'")
        normalized[key] = _normalize_mode(key, mode, n, known[key])

    specs = []
    for spec in up_shared:
        if spec.inner_place not in known:
            raise InvalidSharingSpec(spec.inner_place, 'UNKNOWN_PLACE',
                                     f"'{spec.inner_place}' is not a place of '{child.name}'")
        if known[spec.inner_place] is not None:
            raise InvalidSharingSpec(spec.inner_place, 'UPSHARED_ARRAY',
                                     "only scalar places can be up-shared")
        replicas = frozenset(spec.replicas)
        for replica in sorted(replicas):
            _check_replica(spec.inner_place, replica, n, "up-shared replica")
        entry_map = dict(spec.entry_map) if spec.entry_map else {r: r for r in replicas}
        if set(entry_map) != replicas:
            raise InvalidSharingSpec(spec.inner_place, 'ENTRY_MAP_MISMATCH',
                                     "entry map must list exactly the up-shared replicas")
        if len(set(entry_map.values())) != len(entry_map):
            raise InvalidSharingSpec(spec.inner_place, 'ENTRY_MAP_NOT_INJECTIVE',
                                     "two replicas are mapped to the same entry")
        specs.append(spec._replace(replicas=replicas, entry_map=entry_map))

    return NARep(name, child, n, normalized, tuple(specs))


def join(children, joins=(), name='join'):
    """State-sharing composition of distinct submodels

    :param children: composition nodes with distinct names
    :param joins: groups of places to merge
    :type joins: typing.Sequence[JoinSpec]
    :param str name: node name
    :rtype: Join
    :raises UnknownPath: if a group or up-share refers to a missing child
    :raises UnknownPlace: if a group refers to a place not exported by child
    :raises KindMismatch: if merged places have different kinds
    """
    children = tuple(children)
    by_name = {}
    for child in children:
        if child.name in by_name:
            raise CompositionError(f"{name}: duplicate child name '{child.name}'")
        by_name[child.name] = child

    def resolve(path, key):
        if path not in by_name:
            raise UnknownPath(f"{name}: no child named '{path}'")
        child_exports = exports(by_name[path])
        if key not in child_exports:
            raise UnknownPlace(f"{name}: '{key}' is not exported by '{path}'")
        return child_exports[key]

    for spec in joins:
        kinds = {(path, key): resolve(path, key) for path, key in spec.group}
        if len(set(kinds.values())) > 1:
            described = ', '.join(f"{path}.{key}: {_kind(length)}" for (path, key), length in kinds.items())
            raise KindMismatch(f"{name}: joined places have different kinds ({described})")

    for child in children:
        if not isinstance(child, NARep):
            continue
        for spec in child.up_shared:
            length = resolve(spec.sibling_path, spec.outer_place)
            if length is None:
                raise KindMismatch(f"{name}: up-share target {spec.sibling_path}.{spec.outer_place}"
                                   f" is not an array place")
            for entry in spec.entry_map.values():
                if not 0 <= entry < length:
                    raise InvalidSharingSpec(spec.inner_place, 'INDEX_OUT_OF_RANGE',
                                             f"entry {entry} outside {spec.outer_place}[{length}]")

    return Join(name, children, tuple(JoinSpec(tuple(spec.group)) for spec in joins))
