"""Architecture resolution: flatten includes, build the peer lattice, compute ties.

Effective ties combine every tie declared on a peer or its super-peers,
targeting a peer or its super-peers, and keep the most specific multiplicity
(single beats optional beats multiple).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import ast
from .ast import Multiplicity
from .diagnostics import UNKNOWN_POS, Diagnostic, SourceError


class ArchError(SourceError):
    pass


@dataclass(frozen=True, order=True)
class PeerId:
    """Globally unique peer identity: include path (at most one level) + name."""

    path: tuple[str, ...]
    name: str

    def __str__(self) -> str:
        return ".".join(self.path + (self.name,))


@dataclass
class PeerInfo:
    supers: tuple[PeerId, ...]
    declared_ties: dict[PeerId, Multiplicity]


@dataclass(frozen=True)
class FlatDef:
    """A definition after include flattening; `include` is the alias it came from."""

    name: str  # qualified, e.g. "mon.heartbeat" for included defs
    include: str | None
    decl: ast.DefDecl


@dataclass
class Architecture:
    module_name: str
    peers: dict[PeerId, PeerInfo]
    placements: dict[str, PeerId]
    def_order: list[str]
    defs: list[FlatDef]
    includes: dict[str, str] = field(default_factory=dict)  # alias -> module name

    def super_closure(self, p: PeerId) -> frozenset[PeerId]:
        """p together with all transitive super-peers."""
        seen = {p}
        stack = [p]
        while stack:
            for s in self.peers[stack.pop()].supers:
                if s not in seen:
                    seen.add(s)
                    stack.append(s)
        return frozenset(seen)


EffectiveTies = dict  # (PeerId, PeerId) -> Multiplicity


def _resolve_ref(ref: ast.PeerRef, known: set[PeerId], scope: str | None,
                 diags: list[Diagnostic]) -> PeerId | None:
    """Resolve a peer reference. `scope` is the include alias the reference
    appears in (None for the top-level module)."""
    if ref.qualifier is not None:
        pid = PeerId((ref.qualifier,), ref.name)
    elif scope is not None:
        pid = PeerId((scope,), ref.name)
    else:
        pid = PeerId((), ref.name)
    if pid not in known:
        diags.append(Diagnostic(ref.pos, f"unknown peer '{ref}'"))
        return None
    return pid


def resolve_architecture(m: ast.SurfaceModule,
                         registry: dict[str, ast.SurfaceModule] | None = None) -> Architecture:
    registry = registry or {}
    diags: list[Diagnostic] = []

    scoped: list[tuple[str | None, ast.SurfaceModule]] = []
    includes: dict[str, str] = {}
    for inc in m.includes:
        sub = registry.get(inc.module_name)
        if sub is None:
            diags.append(Diagnostic(inc.pos, f"unknown include module '{inc.module_name}'"))
            continue
        if sub.includes:
            diags.append(Diagnostic(inc.pos, f"module '{inc.module_name}' has includes of its own; "
                                             "nested includes are not supported"))
            continue
        includes[inc.alias] = inc.module_name
        scoped.append((inc.alias, sub))
    scoped.append((None, m))

    known: set[PeerId] = set()
    for scope, mod in scoped:
        for p in mod.peers:
            known.add(PeerId((scope,) if scope else (), p.name))

    peers: dict[PeerId, PeerInfo] = {}
    for scope, mod in scoped:
        for p in mod.peers:
            pid = PeerId((scope,) if scope else (), p.name)
            supers = []
            for s in p.supers:
                rid = _resolve_ref(s, known, scope, diags)
                if rid is not None:
                    supers.append(rid)
            ties: dict[PeerId, Multiplicity] = {}
            for mult, ref in p.ties:
                rid = _resolve_ref(ref, known, scope, diags)
                if rid is None:
                    continue
                ties[rid] = min(mult, ties.get(rid, Multiplicity.MULTIPLE))
            peers[pid] = PeerInfo(tuple(supers), ties)

    flat_defs: list[FlatDef] = []
    placements: dict[str, PeerId] = {}
    for scope, mod in scoped:
        for d in mod.defs:
            name = f"{scope}.{d.name}" if scope else d.name
            pid = _resolve_ref(d.placed_on, known, scope, diags)
            flat_defs.append(FlatDef(name, scope, d))
            if pid is not None:
                placements[name] = pid

    _check_acyclic(peers, m, diags)
    if diags:
        raise ArchError(diags)

    return Architecture(
        module_name=m.name,
        peers=peers,
        placements=placements,
        def_order=[d.name for d in flat_defs],
        defs=flat_defs,
        includes=includes,
    )


def _check_acyclic(peers: dict[PeerId, PeerInfo], m: ast.SurfaceModule,
                   diags: list[Diagnostic]) -> None:
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {p: WHITE for p in peers}

    def visit(p: PeerId) -> bool:
        color[p] = GRAY
        for s in peers[p].supers:
            if s not in color:
                continue
            if color[s] == GRAY:
                return False
            if color[s] == WHITE and not visit(s):
                return False
        color[p] = BLACK
        return True

    for p in sorted(peers):
        if color[p] == WHITE and not visit(p):
            decl_pos = next((d.pos for d in m.peers if d.name == p.name), m.pos)
            diags.append(Diagnostic(decl_pos, f"cyclic peer supertypes involving '{p}'"))
            return


def effective_ties(a: Architecture) -> EffectiveTies:
    """Tie table over all peer pairs; absence of an entry means "not tied"."""
    table: EffectiveTies = {}
    closures = {p: a.super_closure(p) for p in a.peers}
    for left in sorted(a.peers):
        declared: list[tuple[PeerId, Multiplicity]] = []
        for member in closures[left]:
            declared.extend(a.peers[member].declared_ties.items())
        for right in sorted(a.peers):
            targets = closures[right]
            mults = [m for tgt, m in declared if tgt in targets]
            if mults:
                table[(left, right)] = min(mults)
    return table


def placed_peer_of(a: Architecture, def_name: str) -> PeerId:
    try:
        return a.placements[def_name]
    except KeyError:
        raise ArchError([Diagnostic(UNKNOWN_POS, f"unknown definition '{def_name}'")]) from None


def is_subpeer(a: Architecture, p: PeerId, q: PeerId) -> bool:
    """True iff p is q or q is one of p's transitive super-peers."""
    return q in a.super_closure(p)
