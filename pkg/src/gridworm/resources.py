"""Machine and clique model plus the TTL-driven aggregate directory.

Cliques are manually defined groups of machines advertised as a single
resource.  The directory holds registrations that expire unless refreshed;
stale entries are never visible to queries.  Derived clique ads aggregate
member attributes so that single-valued matchmaking expressions can reason
about a whole clique.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Tuple

from .classad import UNDEFINED, ClassAd, ListExpr, Literal


@dataclass(frozen=True)
class MachineSpec:
    name: str
    domain: str
    op_sys: str
    cpu_count: int
    cpu_speed_mhz: float
    mem_bytes: int
    base_load: float = 0.0
    iter_rate_factor: float = 1.0

    def __post_init__(self):
        if self.cpu_count < 1:
            raise ValueError(f"machine {self.name}: cpu_count must be >= 1")
        if self.mem_bytes <= 0:
            raise ValueError(f"machine {self.name}: mem_bytes must be > 0")
        if self.cpu_speed_mhz <= 0:
            raise ValueError(f"machine {self.name}: cpu_speed_mhz must be > 0")
        if self.base_load < 0:
            raise ValueError(f"machine {self.name}: base_load must be >= 0")
        if self.iter_rate_factor <= 0:
            raise ValueError(f"machine {self.name}: iter_rate_factor must be > 0")


@dataclass(frozen=True)
class Clique:
    name: str
    members: Tuple[MachineSpec, ...]
    link_bandwidth_mbps: float
    wan_bandwidth_mbps: float

    def __post_init__(self):
        if not self.members:
            raise ValueError(f"clique {self.name}: members must be non-empty")
        if self.link_bandwidth_mbps <= 0 or self.wan_bandwidth_mbps <= 0:
            raise ValueError(f"clique {self.name}: bandwidths must be > 0")

    def member(self, machine_name: str) -> MachineSpec:
        for m in self.members:
            if m.name == machine_name:
                return m
        raise KeyError(f"clique {self.name} has no machine {machine_name!r}")


@dataclass(frozen=True)
class Registration:
    clique: Clique
    ttl_seconds: float
    last_refresh: float

    def is_stale(self, now: float) -> bool:
        return now > self.last_refresh + self.ttl_seconds


@dataclass(frozen=True)
class Directory:
    """Aggregate directory of clique registrations; immutable snapshots."""

    registrations: Mapping[str, Registration] = field(default_factory=dict)

    def register(self, clique: Clique, ttl_seconds: float, now: float) -> "Directory":
        """Re-registration replaces the entry and re-arms its TTL."""
        if ttl_seconds <= 0:
            raise ValueError("ttl_seconds must be > 0")
        regs = dict(self.registrations)
        regs[clique.name] = Registration(clique, ttl_seconds, now)
        return Directory(regs)

    def deregister(self, clique_name: str) -> "Directory":
        regs = {k: v for k, v in self.registrations.items() if k != clique_name}
        return Directory(regs)

    def replace_clique(self, clique: Clique) -> "Directory":
        """Swap a clique's definition without touching its registration TTL."""
        reg = self.registrations.get(clique.name)
        if reg is None:
            raise KeyError(f"clique {clique.name!r} is not registered")
        regs = dict(self.registrations)
        regs[clique.name] = dataclasses.replace(reg, clique=clique)
        return Directory(regs)

    def refresh(self, now: float) -> "Directory":
        """Drop stale registrations.  Idempotent at fixed ``now``."""
        regs = {k: v for k, v in self.registrations.items() if not v.is_stale(now)}
        return Directory(regs)

    def live(self, now: float) -> Iterator[Clique]:
        for name in sorted(self.registrations):
            reg = self.registrations[name]
            if not reg.is_stale(now):
                yield reg.clique

    def get(self, clique_name: str, now: float) -> Optional[Clique]:
        reg = self.registrations.get(clique_name)
        if reg is None or reg.is_stale(now):
            return None
        return reg.clique


def derive_clique_ad(clique: Clique, now: float = 0.0) -> ClassAd:
    """Build the advertisement ad with aggregate attributes for a clique."""
    members = clique.members
    op_systems = {m.op_sys for m in members}
    op_sys: object = members[0].op_sys if len(op_systems) == 1 else UNDEFINED
    domains = list(dict.fromkeys(m.domain for m in members))
    attrs = [
        ("Type", Literal("resource")),
        ("name", Literal(clique.name)),
        ("CPUCount", Literal(sum(m.cpu_count for m in members))),
        ("minMemSize", Literal(min(m.mem_bytes for m in members))),
        ("minCPUSpeed", Literal(min(m.cpu_speed_mhz for m in members))),
        ("maxCPULoad", Literal(max(m.base_load for m in members))),
        ("opSys", Literal(op_sys)),
        ("domains", ListExpr(tuple(Literal(d) for d in domains))),
        ("minLinkBandwidth", Literal(clique.link_bandwidth_mbps)),
        ("bisectionBandwidth", Literal(clique.link_bandwidth_mbps * (len(members) // 2))),
    ]
    return ClassAd(attrs)


def apply_load(machine: MachineSpec, delta: float) -> MachineSpec:
    """Adjust a machine's external load; the result must stay nonnegative."""
    new_load = machine.base_load + delta
    if new_load < 0:
        raise ValueError(
            f"machine {machine.name}: load would become negative ({new_load})"
        )
    return dataclasses.replace(machine, base_load=new_load)


def apply_load_to_clique(clique: Clique, machine_name: str, delta: float) -> Clique:
    clique.member(machine_name)
    members = tuple(
        apply_load(m, delta) if m.name == machine_name else m for m in clique.members
    )
    return dataclasses.replace(clique, members=members)
