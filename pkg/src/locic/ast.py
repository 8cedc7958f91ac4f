"""Surface AST for multitier module files.

Nodes carry their source position for diagnostics, but positions are
excluded from equality so that parse/render round-trips compare equal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .diagnostics import UNKNOWN_POS, Pos


class Multiplicity(enum.IntEnum):
    """Tie multiplicity. Lower value = more specific; min() resolves conflicts."""

    SINGLE = 0
    OPTIONAL = 1
    MULTIPLE = 2

    @property
    def keyword(self) -> str:
        return self.name.lower()


MULTIPLICITY_BY_KEYWORD = {m.keyword: m for m in Multiplicity}


@dataclass(frozen=True)
class PeerRef:
    """Reference to a peer, optionally qualified by an include alias."""

    qualifier: str | None
    name: str
    pos: Pos = field(default=UNKNOWN_POS, compare=False)

    def __str__(self) -> str:
        return f"{self.qualifier}.{self.name}" if self.qualifier else self.name


# --- types ------------------------------------------------------------

@dataclass(frozen=True)
class TypeExpr:
    pass


@dataclass(frozen=True)
class TPrim(TypeExpr):
    name: str  # Int | Bool | Str | Unit


@dataclass(frozen=True)
class TTuple(TypeExpr):
    items: tuple[TypeExpr, ...]  # at least 2


@dataclass(frozen=True)
class TStream(TypeExpr):
    elem: TypeExpr


@dataclass(frozen=True)
class TFuture(TypeExpr):
    elem: TypeExpr


@dataclass(frozen=True)
class TOption(TypeExpr):
    elem: TypeExpr


@dataclass(frozen=True)
class TSeq(TypeExpr):
    elem: TypeExpr


@dataclass(frozen=True)
class TRemote(TypeExpr):
    peer: PeerRef


INT = TPrim("Int")
BOOL = TPrim("Bool")
STR = TPrim("Str")
UNIT = TPrim("Unit")


def render_type(t: TypeExpr) -> str:
    if isinstance(t, TPrim):
        return t.name
    if isinstance(t, TTuple):
        return "(" + ", ".join(render_type(i) for i in t.items) + ")"
    if isinstance(t, TStream):
        return f"Stream[{render_type(t.elem)}]"
    if isinstance(t, TFuture):
        return f"Future[{render_type(t.elem)}]"
    if isinstance(t, TOption):
        return f"Option[{render_type(t.elem)}]"
    if isinstance(t, TSeq):
        return f"Seq[{render_type(t.elem)}]"
    if isinstance(t, TRemote):
        return f"Remote[{t.peer}]"
    raise TypeError(f"unknown type node {t!r}")


# --- expressions ------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class IntLit(Expr):
    value: int
    pos: Pos = field(default=UNKNOWN_POS, compare=False)


@dataclass(frozen=True)
class BoolLit(Expr):
    value: bool
    pos: Pos = field(default=UNKNOWN_POS, compare=False)


@dataclass(frozen=True)
class StrLit(Expr):
    value: str
    pos: Pos = field(default=UNKNOWN_POS, compare=False)


@dataclass(frozen=True)
class Ref(Expr):
    qualifier: str | None
    name: str
    pos: Pos = field(default=UNKNOWN_POS, compare=False)

    def __str__(self) -> str:
        return f"{self.qualifier}.{self.name}" if self.qualifier else self.name


BINOPS = ("+", "-", "*", "<", "==")


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of BINOPS
    left: Expr
    right: Expr
    pos: Pos = field(default=UNKNOWN_POS, compare=False)


@dataclass(frozen=True)
class TupleExpr(Expr):
    items: tuple[Expr, ...]  # at least 2
    pos: Pos = field(default=UNKNOWN_POS, compare=False)


@dataclass(frozen=True)
class AsLocal(Expr):
    target: Ref
    pos: Pos = field(default=UNKNOWN_POS, compare=False)


@dataclass(frozen=True)
class AsLocalFromAll(Expr):
    target: Ref
    pos: Pos = field(default=UNKNOWN_POS, compare=False)


@dataclass(frozen=True)
class StreamMap(Expr):
    source: Ref
    var: str
    body: Expr
    pos: Pos = field(default=UNKNOWN_POS, compare=False)


# --- declarations -----------------------------------------------------

@dataclass(frozen=True)
class IncludeDecl:
    alias: str
    module_name: str
    pos: Pos = field(default=UNKNOWN_POS, compare=False)


@dataclass(frozen=True)
class PeerDecl:
    name: str
    supers: tuple[PeerRef, ...]
    ties: tuple[tuple[Multiplicity, PeerRef], ...]
    pos: Pos = field(default=UNKNOWN_POS, compare=False)


class DefKind(enum.Enum):
    VAL = "val"
    STREAM_SOURCE = "source"


@dataclass(frozen=True)
class DefDecl:
    name: str
    kind: DefKind
    surface_type: TypeExpr
    placed_on: PeerRef
    body: Expr | None  # None only for stream sources
    pos: Pos = field(default=UNKNOWN_POS, compare=False)


@dataclass(frozen=True)
class SurfaceModule:
    """One multitier module; defs keep their source order."""

    name: str
    includes: tuple[IncludeDecl, ...]
    peers: tuple[PeerDecl, ...]
    defs: tuple[DefDecl, ...]
    pos: Pos = field(default=UNKNOWN_POS, compare=False)
