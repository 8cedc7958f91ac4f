"""Split a checked module into per-peer components.

Every concrete peer receives a component holding: its signatures and tie
table, one slot per definition in source order (a placeholder where the
value is not available on this peer, preserving evaluation order), a
dispatch table for the values it can serve remotely, and bodies whose
remote-access sites are rewritten into runtime remote-request calls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import ast, checker
from .arch import Architecture, PeerId, is_subpeer
from .ast import Multiplicity
from .checker import (FutureT, OptionT, PrimT, RemoteT, SemType, SeqT, StreamT,
                      TupleT, TypedExpr, TypedModule)
from .codecs import CodecError, CodecRegistry, Shape, shape_id
from .sigs import ModuleSig, PeerSig, ValueSig


class SplitError(Exception):
    pass


class ComponentFormatError(Exception):
    pass


PULL, STREAM = "pull", "stream"


@dataclass(frozen=True)
class Evaluate:
    body: TypedExpr


@dataclass(frozen=True)
class Placeholder:
    pass


PLACEHOLDER = Placeholder()
InitPlan = object  # Evaluate | Placeholder


@dataclass(frozen=True)
class AccessPlan:
    value_sig: ValueSig
    slot: str  # qualified definition name backing this entry
    arg_codec: str
    result_codec: str
    mode: str  # PULL | STREAM


@dataclass(frozen=True)
class RemoteCall(TypedExpr):
    """A rewritten remote-access site: argument bytes, value signature, target peer."""

    args: bytes
    value_sig: ValueSig
    target_peer: PeerSig
    target_peer_id: PeerId
    mult: Multiplicity
    from_all: bool
    mode: str
    result_codec: str
    ty: SemType


@dataclass(frozen=True)
class PeerEntry:
    sig: PeerSig
    supers: tuple[PeerId, ...]


@dataclass
class PeerComponent:
    peer: PeerId
    sig: PeerSig
    root_module: ModuleSig
    peer_table: dict[PeerId, PeerEntry]
    tie_table: dict[PeerSig, Multiplicity]
    slots: list[tuple[str, InitPlan]]
    dispatch: dict[ValueSig, AccessPlan]

    def super_closure(self, p: PeerId) -> frozenset[PeerId]:
        seen = {p}
        stack = [p]
        while stack:
            for s in self.peer_table[stack.pop()].supers:
                if s not in seen:
                    seen.add(s)
                    stack.append(s)
        return frozenset(seen)

    def peer_for_sig(self, sig: PeerSig) -> PeerId | None:
        for pid, entry in self.peer_table.items():
            if entry.sig == sig:
                return pid
        return None


# --- signatures and codecs ---------------------------------------------

def module_sig_of(a: Architecture, path: tuple[str, ...]) -> ModuleSig:
    if path:
        return ModuleSig(a.includes[path[0]], path)
    return ModuleSig(a.module_name, ())


def peer_sig_of(a: Architecture, pid: PeerId) -> PeerSig:
    return PeerSig(pid.name, module_sig_of(a, pid.path))


def value_sig_of(a: Architecture, flat_name: str, decl: ast.DefDecl) -> ValueSig:
    scope: tuple[str, ...] = ()
    if "." in flat_name:
        scope = (flat_name.split(".", 1)[0],)
    canonical = f"{decl.name}:{ast.render_type(decl.surface_type)}"
    return ValueSig(canonical, module_sig_of(a, scope))


def sem_type_shape(t: SemType) -> Shape | None:
    """Codec shape for a data type, or None if the type is not serializable."""
    if isinstance(t, PrimT):
        return t.name
    if isinstance(t, TupleT):
        items = [sem_type_shape(i) for i in t.items]
        if any(i is None for i in items):
            return None
        return ("tuple", tuple(items))
    return None


def innermost_uncodable(t: SemType) -> SemType | None:
    children: tuple[SemType, ...] = ()
    if isinstance(t, TupleT):
        children = t.items
    elif isinstance(t, (StreamT, FutureT, OptionT, SeqT)):
        children = (t.elem,)
    for child in children:
        found = innermost_uncodable(child)
        if found is not None:
            return found
    if isinstance(t, (PrimT, TupleT)):
        return None
    return t


def transmission_plan(def_name: str, declared: SemType) -> tuple[str, Shape]:
    """Mode and payload shape for remote access to a definition, or SplitError."""
    if isinstance(declared, StreamT):
        shape = sem_type_shape(declared.elem)
        mode = STREAM
    else:
        shape = sem_type_shape(declared)
        mode = PULL
    if shape is None:
        bad = innermost_uncodable(declared)
        raise SplitError(
            f"definition '{def_name}': type {declared} is not serializable "
            f"(no codec for {bad})")
    return mode, shape


def inherited_ties(a: Architecture, pid: PeerId) -> dict[PeerId, Multiplicity]:
    """Ties declared on a peer or its super-peers, most specific per target.

    This is the runtime connection contract: targets stay as declared, and
    admission later matches a remote against an entry whenever the remote is
    a sub-peer of the entry's target. (The checker's effective-tie table,
    which also widens targets over their super-closure, is a typing notion.)
    """
    merged: dict[PeerId, Multiplicity] = {}
    for member in a.super_closure(pid):
        for target, mult in a.peers[member].declared_ties.items():
            merged[target] = min(mult, merged.get(target, Multiplicity.MULTIPLE))
    return merged


# --- splitting ----------------------------------------------------------

def _rewrite(a: Architecture, e: TypedExpr,
             plans: dict[str, tuple[str, Shape]],
             sigs: dict[str, ValueSig],
             declared: dict[str, SemType]) -> TypedExpr:
    if isinstance(e, checker.TRemoteAccess):
        if e.target not in plans:
            # raises, naming the definition and its innermost uncodable type
            transmission_plan(e.target, declared[e.target])
        mode, shape = plans[e.target]
        return RemoteCall(
            args=b"",
            value_sig=sigs[e.target],
            target_peer=peer_sig_of(a, e.to_peer),
            target_peer_id=e.to_peer,
            mult=e.mult,
            from_all=e.from_all,
            mode=mode,
            result_codec=shape_id(shape),
            ty=e.ty,
        )
    if isinstance(e, checker.TBinOp):
        return checker.TBinOp(e.op, _rewrite(a, e.left, plans, sigs, declared),
                              _rewrite(a, e.right, plans, sigs, declared), e.ty)
    if isinstance(e, checker.TTupleExpr):
        return checker.TTupleExpr(
            tuple(_rewrite(a, i, plans, sigs, declared) for i in e.items), e.ty)
    if isinstance(e, checker.TStreamMap):
        return checker.TStreamMap(_rewrite(a, e.source, plans, sigs, declared), e.var,
                                  _rewrite(a, e.body, plans, sigs, declared), e.ty)
    return e


def split(tm: TypedModule, registry: CodecRegistry | None = None) -> dict[PeerId, PeerComponent]:
    """One component per concrete peer. Requires a diagnostic-free module."""
    if tm.diagnostics:
        raise SplitError("cannot split a module with diagnostics")
    a = tm.arch
    registry = registry or CodecRegistry()

    sigs: dict[str, ValueSig] = {}
    decls = {f.name: f.decl for f in a.defs}
    for d in tm.defs:
        sigs[d.name] = value_sig_of(a, d.name, decls[d.name])

    # per-definition transmission plans, where the type is serializable
    plans: dict[str, tuple[str, Shape]] = {}
    for d in tm.defs:
        try:
            plans[d.name] = transmission_plan(d.name, d.declared_type)
        except SplitError:
            continue

    declared_types = {d.name: d.declared_type for d in tm.defs}
    rewritten = {
        d.name: _rewrite(a, d.body, plans, sigs, declared_types) for d in tm.defs
    }

    peer_table = {
        pid: PeerEntry(peer_sig_of(a, pid), tuple(sorted(a.peers[pid].supers)))
        for pid in sorted(a.peers)
    }
    root = ModuleSig(a.module_name, ())

    components: dict[PeerId, PeerComponent] = {}
    for pid in sorted(a.peers):
        tie_table = {
            peer_sig_of(a, target): mult
            for target, mult in inherited_ties(a, pid).items()
        }
        slots: list[tuple[str, InitPlan]] = []
        dispatch: dict[ValueSig, AccessPlan] = {}
        for d in tm.defs:
            available = is_subpeer(a, pid, d.placed_on)
            slots.append((d.name, Evaluate(rewritten[d.name]) if available else PLACEHOLDER))
            if available and d.name in plans:
                mode, shape = plans[d.name]
                # materialize the codec now: serializability is a split-time guarantee
                registry.lookup(shape_id(shape))
                dispatch[sigs[d.name]] = AccessPlan(
                    value_sig=sigs[d.name],
                    slot=d.name,
                    arg_codec="Unit",
                    result_codec=shape_id(shape),
                    mode=mode,
                )
        components[pid] = PeerComponent(
            peer=pid,
            sig=peer_table[pid].sig,
            root_module=root,
            peer_table=dict(peer_table),
            tie_table=tie_table,
            slots=slots,
            dispatch=dispatch,
        )
    return components


# --- dispatch -----------------------------------------------------------

@dataclass(frozen=True)
class DispatchSuccess:
    payload: bytes


@dataclass(frozen=True)
class DispatchFailure:
    error: str


class NotFound:
    def __repr__(self):
        return "NOT_FOUND"


NOT_FOUND = NotFound()


class SlotReadError(Exception):
    pass


def dispatch_entry(pc: PeerComponent, sig: ValueSig, args: bytes, read_slot,
                   registry: CodecRegistry):
    """Serve one remote value request against evaluated slots.

    Returns DispatchSuccess with the encoded value, DispatchFailure for
    unmarshalling or evaluation failures, or NOT_FOUND when this component
    does not serve the signature.
    """
    plan = pc.dispatch.get(sig)
    if plan is None:
        return NOT_FOUND
    if plan.mode == STREAM:
        return DispatchFailure(f"'{sig.canonical}' is a stream; open a channel to access it")
    if args:
        try:
            registry.lookup(plan.arg_codec).deserialize(args)
        except CodecError as e:
            return DispatchFailure(str(e))
    try:
        value = read_slot(plan.slot)
    except SlotReadError as e:
        return DispatchFailure(str(e))
    try:
        payload = registry.lookup(plan.result_codec).serialize(value)
    except CodecError as e:
        return DispatchFailure(str(e))
    return DispatchSuccess(payload)


# --- component documents -------------------------------------------------

def _pid_doc(p: PeerId) -> dict:
    return {"path": list(p.path), "name": p.name}


def _pid_from(doc) -> PeerId:
    return PeerId(tuple(doc["path"]), doc["name"])


def _modsig_doc(m: ModuleSig) -> dict:
    return {"name": m.name, "path": list(m.path)}


def _modsig_from(doc) -> ModuleSig:
    return ModuleSig(doc["name"], tuple(doc["path"]))


def _peersig_doc(s: PeerSig) -> dict:
    return {"peer": s.peer_name, "module": _modsig_doc(s.module)}


def _peersig_from(doc) -> PeerSig:
    return PeerSig(doc["peer"], _modsig_from(doc["module"]))


def _valuesig_doc(s: ValueSig) -> dict:
    return {"val": s.canonical, "module": _modsig_doc(s.module)}


def _valuesig_from(doc) -> ValueSig:
    return ValueSig(doc["val"], _modsig_from(doc["module"]))


def sem_type_to_doc(t: SemType) -> dict:
    if isinstance(t, PrimT):
        return {"k": t.name}
    if isinstance(t, TupleT):
        return {"k": "Tuple", "items": [sem_type_to_doc(i) for i in t.items]}
    if isinstance(t, StreamT):
        return {"k": "Stream", "elem": sem_type_to_doc(t.elem)}
    if isinstance(t, FutureT):
        return {"k": "Future", "elem": sem_type_to_doc(t.elem)}
    if isinstance(t, OptionT):
        return {"k": "Option", "elem": sem_type_to_doc(t.elem)}
    if isinstance(t, SeqT):
        return {"k": "Seq", "elem": sem_type_to_doc(t.elem)}
    if isinstance(t, RemoteT):
        return {"k": "Remote", "peer": _pid_doc(t.peer)}
    raise TypeError(f"cannot serialize type {t!r}")


def sem_type_from_doc(doc) -> SemType:
    k = doc["k"]
    if k in ("Int", "Bool", "Str", "Unit"):
        return PrimT(k)
    if k == "Tuple":
        return TupleT(tuple(sem_type_from_doc(i) for i in doc["items"]))
    if k == "Stream":
        return StreamT(sem_type_from_doc(doc["elem"]))
    if k == "Future":
        return FutureT(sem_type_from_doc(doc["elem"]))
    if k == "Option":
        return OptionT(sem_type_from_doc(doc["elem"]))
    if k == "Seq":
        return SeqT(sem_type_from_doc(doc["elem"]))
    if k == "Remote":
        return RemoteT(_pid_from(doc["peer"]))
    raise ComponentFormatError(f"unknown type kind '{k}'")


def expr_to_doc(e: TypedExpr) -> dict:
    if isinstance(e, checker.TIntLit):
        return {"k": "int", "v": e.value}
    if isinstance(e, checker.TBoolLit):
        return {"k": "bool", "v": e.value}
    if isinstance(e, checker.TStrLit):
        return {"k": "str", "v": e.value}
    if isinstance(e, checker.TRef):
        return {"k": "ref", "name": e.name, "var": e.is_var,
                "ty": sem_type_to_doc(e.ty)}
    if isinstance(e, checker.TBinOp):
        return {"k": "binop", "op": e.op, "l": expr_to_doc(e.left),
                "r": expr_to_doc(e.right), "ty": sem_type_to_doc(e.ty)}
    if isinstance(e, checker.TTupleExpr):
        return {"k": "tuple", "items": [expr_to_doc(i) for i in e.items],
                "ty": sem_type_to_doc(e.ty)}
    if isinstance(e, checker.TStreamMap):
        return {"k": "map", "src": expr_to_doc(e.source), "var": e.var,
                "body": expr_to_doc(e.body), "ty": sem_type_to_doc(e.ty)}
    if isinstance(e, checker.TStreamSource):
        return {"k": "source", "ty": sem_type_to_doc(e.ty)}
    if isinstance(e, RemoteCall):
        return {
            "k": "remotecall",
            "val": _valuesig_doc(e.value_sig),
            "target": _peersig_doc(e.target_peer),
            "targetId": _pid_doc(e.target_peer_id),
            "mult": e.mult.keyword,
            "fromAll": e.from_all,
            "mode": e.mode,
            "resultCodec": e.result_codec,
            "ty": sem_type_to_doc(e.ty),
        }
    raise TypeError(f"cannot serialize expression {e!r}")


def expr_from_doc(doc) -> TypedExpr:
    k = doc["k"]
    if k == "int":
        return checker.TIntLit(doc["v"])
    if k == "bool":
        return checker.TBoolLit(doc["v"])
    if k == "str":
        return checker.TStrLit(doc["v"])
    if k == "ref":
        return checker.TRef(doc["name"], doc["var"], sem_type_from_doc(doc["ty"]))
    if k == "binop":
        return checker.TBinOp(doc["op"], expr_from_doc(doc["l"]),
                              expr_from_doc(doc["r"]), sem_type_from_doc(doc["ty"]))
    if k == "tuple":
        return checker.TTupleExpr(tuple(expr_from_doc(i) for i in doc["items"]),
                                  sem_type_from_doc(doc["ty"]))
    if k == "map":
        return checker.TStreamMap(expr_from_doc(doc["src"]), doc["var"],
                                  expr_from_doc(doc["body"]), sem_type_from_doc(doc["ty"]))
    if k == "source":
        return checker.TStreamSource(sem_type_from_doc(doc["ty"]))
    if k == "remotecall":
        return RemoteCall(
            args=b"",
            value_sig=_valuesig_from(doc["val"]),
            target_peer=_peersig_from(doc["target"]),
            target_peer_id=_pid_from(doc["targetId"]),
            mult=ast.MULTIPLICITY_BY_KEYWORD[doc["mult"]],
            from_all=doc["fromAll"],
            mode=doc["mode"],
            result_codec=doc["resultCodec"],
            ty=sem_type_from_doc(doc["ty"]),
        )
    raise ComponentFormatError(f"unknown expression kind '{k}'")


FORMAT = "locic-component/1"


def emit_component(pc: PeerComponent) -> str:
    """Deterministic document for one component; `read_component` inverts it."""
    doc = {
        "format": FORMAT,
        "peer": _pid_doc(pc.peer),
        "sig": _peersig_doc(pc.sig),
        "rootModule": _modsig_doc(pc.root_module),
        "peers": [
            {"id": _pid_doc(pid), "sig": _peersig_doc(entry.sig),
             "supers": [_pid_doc(s) for s in entry.supers]}
            for pid, entry in sorted(pc.peer_table.items())
        ],
        "ties": [
            {"peer": _peersig_doc(sig), "mult": mult.keyword}
            for sig, mult in sorted(pc.tie_table.items())
        ],
        "slots": [
            {"name": name, "plan": "placeholder"} if isinstance(plan, Placeholder)
            else {"name": name, "plan": "eval", "body": expr_to_doc(plan.body)}
            for name, plan in pc.slots
        ],
        "dispatch": [
            {"val": _valuesig_doc(sig), "slot": plan.slot, "argCodec": plan.arg_codec,
             "resultCodec": plan.result_codec, "mode": plan.mode}
            for sig, plan in sorted(pc.dispatch.items())
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n"


def read_component(text: str) -> PeerComponent:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ComponentFormatError(f"not a component document: {e}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ComponentFormatError("not a component document")
    try:
        peer_table = {
            _pid_from(p["id"]): PeerEntry(_peersig_from(p["sig"]),
                                          tuple(_pid_from(s) for s in p["supers"]))
            for p in doc["peers"]
        }
        slots: list[tuple[str, InitPlan]] = []
        for s in doc["slots"]:
            if s["plan"] == "placeholder":
                slots.append((s["name"], PLACEHOLDER))
            else:
                slots.append((s["name"], Evaluate(expr_from_doc(s["body"]))))
        return PeerComponent(
            peer=_pid_from(doc["peer"]),
            sig=_peersig_from(doc["sig"]),
            root_module=_modsig_from(doc["rootModule"]),
            peer_table=peer_table,
            tie_table={
                _peersig_from(t["peer"]): ast.MULTIPLICITY_BY_KEYWORD[t["mult"]]
                for t in doc["ties"]
            },
            slots=slots,
            dispatch={
                _valuesig_from(d["val"]): AccessPlan(
                    _valuesig_from(d["val"]), d["slot"], d["argCodec"],
                    d["resultCodec"], d["mode"])
                for d in doc["dispatch"]
            },
        )
    except (KeyError, TypeError) as e:
        raise ComponentFormatError(f"malformed component document: {e}") from None


def component_filename(pc: PeerComponent) -> str:
    return f"{pc.root_module.name}.{pc.peer}.component"
