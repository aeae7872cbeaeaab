# mbansec/hub_access_control.py
"""
Hub-side admission: access-control list, configurable BAN size, per-source
rate limiting and backup-hub election.
"""
import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

import pandas as pd

from logger import setup_logger

from .errors import ConfigError, NetworkDown, Unauthorized
from .frame_codec import Address, SecuritySuiteSelector
from .mac_security_fsm import ConnectionStatus, negotiate_suite
from .schemas import HubPolicy

logger = setup_logger("HubAccessControl")

AUDIT_COLUMNS = ["seq", "tick", "kind", "subject", "decision", "detail"]


class Authorization(enum.Enum):
    sensor_read = "SensorRead"
    actuator_command = "ActuatorCommand"
    admin = "Admin"


class AclStatus(enum.Enum):
    authorized = "Authorized"
    revoked = "Revoked"


class AclOp(enum.Enum):
    add = "Add"
    revoke = "Revoke"


@dataclass(frozen=True)
class AclEntry:
    node: Address
    identity: str
    authorization: Authorization = Authorization.sensor_read
    status: AclStatus = AclStatus.authorized


Acl = dict  # Address -> AclEntry


@dataclass(frozen=True)
class AdmissionRequest:
    node: Address
    sss: SecuritySuiteSelector
    identity: Optional[str] = None
    touch_secure: bool = False


class AuditKind(enum.Enum):
    admission = "Admission"
    release = "Release"
    acl = "Acl"
    failover = "Failover"


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    tick: int
    kind: AuditKind
    subject: Address
    decision: str
    detail: str = ""


def admit_node(policy: HubPolicy, acl: Acl, request: AdmissionRequest, admitted_count: int = 0) -> ConnectionStatus:
    suite = negotiate_suite(request.sss, policy, request.touch_secure)
    if isinstance(suite, ConnectionStatus):
        return suite
    if admitted_count >= policy.max_ban_size:
        return ConnectionStatus.rejected_ban_full
    if policy.acl_required:
        entry = acl.get(request.node)
        if entry is None or entry.status != AclStatus.authorized:
            return ConnectionStatus.rejected_unauthorized
        if request.identity is None or entry.identity != request.identity:
            return ConnectionStatus.rejected_unauthorized
    return ConnectionStatus.accepted


def update_acl(acl: Acl, op: AclOp, entry: AclEntry, caller: Authorization) -> Acl:
    if caller != Authorization.admin:
        raise Unauthorized(f"{caller.value} may not {op.value.lower()} ACL entries")
    updated = dict(acl)
    if op == AclOp.add:
        updated[entry.node] = AclEntry(entry.node, entry.identity, entry.authorization, AclStatus.authorized)
    else:
        current = updated.get(entry.node, entry)
        updated[entry.node] = AclEntry(current.node, current.identity, current.authorization, AclStatus.revoked)
    return updated


def elect_hub(policy: HubPolicy, alive_hubs: Iterable[Address], primary: Address) -> Address:
    """Lowest-address live hub among the primary and (hardened only) its backups."""
    candidates = {primary}
    if policy.hardened:
        candidates |= set(policy.backup_hubs)
    alive = candidates & set(alive_hubs)
    if not alive:
        raise NetworkDown(f"no live hub among {sorted(candidates)}")
    return min(alive)


# -----------------------------
# ACL file: addr,fingerprint-hex,authorization,status
# -----------------------------
def load_acl(text: str) -> Acl:
    acl = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise ConfigError("acl", f"line {lineno}: expected 4 fields")
        try:
            node = int(parts[0], 0)
            bytes.fromhex(parts[1])
            entry = AclEntry(node, parts[1].lower(), Authorization(parts[2]), AclStatus(parts[3]))
        except ValueError as e:
            raise ConfigError("acl", f"line {lineno}: {e}") from e
        if node in acl:
            raise ConfigError("acl", f"line {lineno}: duplicate entry for {node:#06x}")
        acl[node] = entry
    return acl


def dump_acl(acl: Acl) -> str:
    lines = [f"{e.node:#06x},{e.identity},{e.authorization.value},{e.status.value}"
             for e in sorted(acl.values(), key=lambda e: e.node)]
    return "\n".join(lines) + ("\n" if lines else "")


class RateLimiter:
    """At most `limit` frames per source per tick; None disables limiting."""

    def __init__(self, limit: Optional[int]):
        self.limit = limit
        self._tick = None
        self._counts: Counter = Counter()

    def allow(self, source: Address, tick: int) -> bool:
        if self.limit is None:
            return True
        if tick != self._tick:
            self._tick = tick
            self._counts.clear()
        self._counts[source] += 1
        return self._counts[source] <= self.limit


@dataclass
class Hub:
    address: Address
    policy: HubPolicy
    acl: Acl = field(default_factory=dict)
    admitted: set = field(default_factory=set)
    audit: list = field(default_factory=list)
    alive_hubs: set = field(default_factory=set)
    active: Optional[Address] = None

    def __post_init__(self):
        self.alive_hubs = set(self.alive_hubs) | {self.address} | set(self.policy.backup_hubs)
        self.active = self.address if self.active is None else self.active

    def _record(self, tick: int, kind: AuditKind, subject: Address, decision: str, detail: str = "") -> None:
        self.audit.append(AuditRecord(len(self.audit) + 1, tick, kind, subject, decision, detail))

    def admission_log(self) -> list:
        return [r for r in self.audit if r.kind == AuditKind.admission]

    def admit(self, request: AdmissionRequest, tick: int = 0) -> ConnectionStatus:
        """A refused re-request leaves an existing admission in place; callers release explicitly."""
        others = len(self.admitted - {request.node})
        status = admit_node(self.policy, self.acl, request, others)
        if status == ConnectionStatus.accepted:
            self.admitted.add(request.node)
        self._record(tick, AuditKind.admission, request.node, status.value, request.identity or "")
        logger.info(f"t={tick} hub={self.active} node={request.node} {status.value}")
        return status

    def release_node(self, node: Address, tick: int = 0, reason: str = "released") -> None:
        if node in self.admitted:
            self.admitted.discard(node)
            self._record(tick, AuditKind.release, node, reason)

    def report_unreachable(self, node: Address, tick: int = 0) -> ConnectionStatus:
        self.release_node(node, tick, ConnectionStatus.rejected_not_reachable.value)
        return ConnectionStatus.rejected_not_reachable

    def update_acl(self, op: AclOp, entry: AclEntry, caller: Authorization, tick: int = 0) -> Acl:
        try:
            self.acl = update_acl(self.acl, op, entry, caller)
        except Unauthorized:
            self._record(tick, AuditKind.acl, entry.node, f"Acl{op.value}Denied", caller.value)
            raise
        self._record(tick, AuditKind.acl, entry.node, f"Acl{op.value}", entry.identity)
        if op == AclOp.revoke:
            self.release_node(entry.node, tick, "revoked")
        return self.acl

    def hub_failed(self, hub: Address, tick: int = 0) -> Address:
        """Mark a hub dead and re-run the election; raises NetworkDown when none is left."""
        self.alive_hubs.discard(hub)
        self._record(tick, AuditKind.failover, hub, "HubFailed")
        try:
            winner = elect_hub(self.policy, self.alive_hubs, self.address)
        except NetworkDown:
            self.active = None
            raise
        if winner != self.active:
            self.active = winner
            self.admitted.clear()
            self._record(tick, AuditKind.failover, winner, "HubElected")
            logger.info(f"t={tick} hub {winner:#06x} elected after failure of {hub:#06x}")
        return winner

    def audit_frame(self) -> pd.DataFrame:
        rows = [[r.seq, r.tick, r.kind.value, r.subject, r.decision, r.detail] for r in self.audit]
        return pd.DataFrame(rows, columns=AUDIT_COLUMNS)

    def export_audit_csv(self, path: Optional[str] = None) -> str:
        text = self.audit_frame().to_csv(index=False)
        if path:
            with open(path, "w", encoding="utf-8") as f:
                f.write(text)
        return text
