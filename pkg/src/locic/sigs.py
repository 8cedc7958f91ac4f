"""Stable identities used for dispatch and connection setup.

Signatures are pure functions of source names: recompiling identical source
yields identical signatures.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True, order=True)
class ModuleSig:
    name: str
    path: tuple[str, ...] = ()

    def __str__(self) -> str:
        return ".".join(self.path + (self.name,)) if self.path else self.name


@dataclass(frozen=True, order=True)
class PeerSig:
    peer_name: str
    module: ModuleSig

    def __str__(self) -> str:
        return f"{self.peer_name}@{self.module}"


@dataclass(frozen=True, order=True)
class ValueSig:
    canonical: str  # "name:Type", e.g. "i:Int"
    module: ModuleSig

    def __str__(self) -> str:
        return f"{self.canonical}@{self.module}"
