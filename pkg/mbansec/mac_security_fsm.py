# mbansec/mac_security_fsm.py
"""
Per-node MAC security state machine (orphan, associated, secured, connected),
security suite negotiation and the inbound acceptance policy.
Edge list with provenance: docs/fsm.md.
"""
import enum
from dataclasses import dataclass
from typing import Optional, Union

from logger import log_transition, setup_logger

from .channel import CONTROL_TYPES, Deliver, InboundVerdict, SecureChannel
from .frame_codec import Address, Discard, DiscardReason, Frame, SecurityLevel, SecuritySuiteSelector
from .schemas import HubPolicy

logger = setup_logger("MacSecurityFsm")

__all__ = [
    "SecurityState", "Event", "ActionKind", "Action", "ConnectionStatus", "handle_event",
    "negotiate_suite", "accept_inbound", "NodeFsm", "SecureChannel", "Deliver", "TRANSITIONS",
]


class SecurityState(enum.Enum):
    orphan = "Orphan"
    associated = "Associated"
    secured = "Secured"
    connected = "Connected"


class Event(enum.Enum):
    assoc_success = "AssocSuccess"
    assoc_aborted = "AssocAborted"
    ptk_established = "PtkEstablished"
    connection_assigned = "ConnectionAssigned"
    disassoc_done = "DisassocDone"
    peer_unreachable = "PeerUnreachable"
    key_revoked = "KeyRevoked"


class ActionKind(enum.Enum):
    erase_keys = "EraseKeys"
    erase_ptk = "ErasePtk"
    diagnostic = "Diagnostic"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    detail: str = ""


class ConnectionStatus(enum.Enum):
    accepted = "Accepted"
    rejected_ban_full = "RejectedBanFull"
    rejected_unauthorized = "RejectedUnauthorized"
    rejected_suite_mismatch = "RejectedSuiteMismatch"
    rejected_not_reachable = "RejectedNotReachable"
    rejected_hub_down = "RejectedHubDown"


S = SecurityState
E = Event
ERASE = (Action(ActionKind.erase_keys),)

TRANSITIONS = {
    (S.orphan, E.assoc_success): (S.associated, ()),
    (S.orphan, E.assoc_aborted): (S.orphan, ERASE),
    (S.associated, E.ptk_established): (S.secured, ()),
    (S.associated, E.assoc_aborted): (S.orphan, ERASE),
    (S.associated, E.disassoc_done): (S.orphan, ERASE),
    (S.associated, E.peer_unreachable): (S.orphan, ERASE),
    (S.associated, E.key_revoked): (S.orphan, ERASE),
    (S.secured, E.ptk_established): (S.secured, ()),
    (S.secured, E.connection_assigned): (S.connected, ()),
    (S.secured, E.assoc_aborted): (S.orphan, ERASE),
    (S.secured, E.disassoc_done): (S.orphan, ERASE),
    (S.secured, E.peer_unreachable): (S.orphan, ERASE),
    (S.secured, E.key_revoked): (S.associated, (Action(ActionKind.erase_ptk),)),
    (S.connected, E.ptk_established): (S.connected, ()),
    (S.connected, E.assoc_aborted): (S.orphan, ERASE),
    (S.connected, E.disassoc_done): (S.orphan, ERASE),
    (S.connected, E.peer_unreachable): (S.orphan, ERASE),
    (S.connected, E.key_revoked): (S.associated, (Action(ActionKind.erase_ptk),)),
}


def handle_event(state: SecurityState, event: Event) -> tuple:
    """Total transition function; unlisted pairs self-loop with a Diagnostic."""
    try:
        return TRANSITIONS[(state, event)]
    except KeyError:
        return state, (Action(ActionKind.diagnostic, f"{event.value} ignored in {state.value}"),)


def negotiate_suite(node_sss: SecuritySuiteSelector, policy: HubPolicy,
                    touch_secure: bool = False) -> Union[SecuritySuiteSelector, ConnectionStatus]:
    min_level = policy.min_level
    if touch_secure and policy.touch_secure_exemption:
        # physically secure channel, no cryptography required
        min_level = SecurityLevel.unsecured
    if node_sss.level < min_level:
        return ConnectionStatus.rejected_suite_mismatch
    if node_sss.level > SecurityLevel.unsecured or not touch_secure:
        if node_sss.protocol not in policy.allowed_protocols:
            return ConnectionStatus.rejected_suite_mismatch
        if node_sss.cipher not in policy.allowed_ciphers:
            return ConnectionStatus.rejected_suite_mismatch
    return node_sss


def accept_inbound(state: SecurityState, frame: Frame, channel: Optional[SecureChannel],
                   suite: Optional[SecuritySuiteSelector] = None) -> InboundVerdict:
    """
    Level0 frames pass only when the negotiated suite is Level0 (and control
    frames are not required to be authenticated). Sealed frames need a PTK,
    which exists only in Secured and Connected.
    """
    suite = suite or (channel.suite if channel is not None else None)
    if frame.level == SecurityLevel.unsecured:
        if suite is None or suite.level != SecurityLevel.unsecured:
            return Discard(DiscardReason.level_policy)
        if suite.auth_control_frames and frame.frame_type in CONTROL_TYPES:
            return Discard(DiscardReason.level_policy)
        return Deliver(payload=frame.payload, seq=frame.seq)

    if state == SecurityState.orphan:
        return Discard(DiscardReason.no_keys)
    if state == SecurityState.associated:
        return Discard(DiscardReason.wrong_state)
    if channel is None:
        return Discard(DiscardReason.no_keys)
    if suite is not None and frame.level < suite.level:
        return Discard(DiscardReason.level_policy)
    return channel.open(frame)


class NodeFsm:
    """One node's view of its association with the active hub."""

    def __init__(self, address: Address):
        self.address = address
        self.state = SecurityState.orphan
        self.history: list = []

    def fire(self, event: Event, tick: int = 0) -> tuple:
        old = self.state
        new, actions = handle_event(old, event)
        self.state = new
        line = log_transition(tick, self.address, old.value, new.value, event.value)
        self.history.append(line)
        for action in actions:
            if action.kind == ActionKind.diagnostic:
                logger.debug(f"t={tick} node={self.address} {action.detail}")
        return new, actions
