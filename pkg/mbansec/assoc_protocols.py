# mbansec/assoc_protocols.py
"""
Association (I-V), PTK creation (VI) and disassociation (VII) as
three-message session state machines: request, response, activate.

Each session records the raw octets it sent and received; the confirmation
tags are computed over those octets, so any in-flight modification of a
tagged field is caught by the side that did not produce it.
"""
from __future__ import annotations

import enum
import random
import secrets
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from cryptography.hazmat.primitives import hashes

from logger import setup_logger

from . import p256
from .channel import Deliver, SecureChannel
from .crypto_suite import (CONFIRM_MIC_LEN, KeyBits, KeyPair, KeyRole, Point, SymmetricKey, auth_tag,
                           cmac_tag, decode_point, derive_key, derive_shared_secret, encode_point,
                           generate_keypair, select_tag_algorithm, validate_public_key,
                           verify_tag, N)
from .errors import (AuthFailure, ConfigError, CryptoError, DecodeError, DecodeKind, DisplayUnavailable,
                     NotFound, NotSecured, UsageError)
from .frame_codec import (Address, AssocProtocol, Cipher, FrameType, SecurityLevel,
                          SecuritySuiteSelector, decode_frame, encode_frame)
from .key_mgmt import KeyStore, cipher_for, erase_pair, pair_key

logger = setup_logger("AssocProtocols")

NONCE_OCTETS = 16
CHECKVALUE_MODULUS = 100000

# phase(1) protocol(1) sender(2) recipient(2) sss(4) flags(1)
MSG_HEAD = struct.Struct(">BBHH4sB")
FLAG_NONCE = 0x01
FLAG_PUBLIC = 0x02

ECDH_PROTOCOLS = (
    AssocProtocol.unauthenticated,
    AssocProtocol.public_key_hidden,
    AssocProtocol.password,
    AssocProtocol.display,
)
MUTUAL_PROTOCOLS = (
    AssocProtocol.preshared_mk,
    AssocProtocol.public_key_hidden,
    AssocProtocol.password,
    AssocProtocol.display,
    AssocProtocol.ptk_creation,
    AssocProtocol.disassociation,
)


class Role(enum.Enum):
    initiator = "Initiator"
    responder = "Responder"


class Phase(enum.IntEnum):
    idle = 0
    requested = 1
    responded = 2
    activated = 3
    aborted = 4


class MsgPhase(enum.IntEnum):
    request = 1
    response = 2
    activate = 3


class AbortReason(enum.Enum):
    auth_failure = "AuthFailure"
    suite_mismatch = "SuiteMismatch"
    protocol_violation = "ProtocolViolation"


# -----------------------------
# Messages
# -----------------------------
@dataclass(frozen=True)
class HandshakeMsg:
    phase: MsgPhase
    protocol: AssocProtocol
    sender: Address
    recipient: Address
    sss: SecuritySuiteSelector
    nonce: bytes = b""
    public: Optional[Point] = None
    tag: bytes = b""


def _encode_body(msg: HandshakeMsg) -> bytes:
    flags = (FLAG_NONCE if msg.nonce else 0) | (FLAG_PUBLIC if msg.public is not None else 0)
    body = MSG_HEAD.pack(int(msg.phase), int(msg.protocol), msg.sender, msg.recipient, msg.sss.encode(), flags)
    if msg.nonce:
        if len(msg.nonce) != NONCE_OCTETS:
            raise UsageError(f"handshake nonce must be {NONCE_OCTETS} octets")
        body += msg.nonce
    if msg.public is not None:
        body += encode_point(msg.public)
    return body


def encode_handshake(msg: HandshakeMsg) -> bytes:
    """body ∥ tag length(1) ∥ tag; the body is what confirmation tags cover."""
    if msg.tag and len(msg.tag) != CONFIRM_MIC_LEN:
        raise UsageError(f"confirmation tag must be {CONFIRM_MIC_LEN} octets")
    return _encode_body(msg) + bytes([len(msg.tag)]) + msg.tag


def decode_handshake(data: bytes) -> HandshakeMsg:
    if len(data) < MSG_HEAD.size + 1:
        raise DecodeError(DecodeKind.truncated, f"handshake message of {len(data)} octets")
    phase, protocol, sender, recipient, sss, flags = MSG_HEAD.unpack_from(data)
    if flags & ~(FLAG_NONCE | FLAG_PUBLIC):
        raise DecodeError(DecodeKind.malformed, f"unknown handshake flags 0x{flags:02x}")
    try:
        phase = MsgPhase(phase)
        protocol = AssocProtocol(protocol)
    except ValueError as e:
        raise DecodeError(DecodeKind.malformed, str(e)) from e
    sss = SecuritySuiteSelector.decode(sss)

    pos = MSG_HEAD.size
    nonce = b""
    public = None
    if flags & FLAG_NONCE:
        nonce = bytes(data[pos:pos + NONCE_OCTETS])
        pos += NONCE_OCTETS
    if flags & FLAG_PUBLIC:
        raw = bytes(data[pos:pos + 64])
        if len(raw) != 64:
            raise DecodeError(DecodeKind.truncated, "public point")
        public = decode_point(raw)
        pos += 64
    if len(data) <= pos:
        raise DecodeError(DecodeKind.truncated, "tag length")
    tag_len = data[pos]
    if tag_len not in (0, CONFIRM_MIC_LEN):
        raise DecodeError(DecodeKind.malformed, f"tag length {tag_len}")
    tag = bytes(data[pos + 1:])
    if len(tag) < tag_len or len(nonce) != (NONCE_OCTETS if flags & FLAG_NONCE else 0):
        raise DecodeError(DecodeKind.truncated, "handshake message ends early")
    if len(tag) > tag_len:
        raise DecodeError(DecodeKind.malformed, "trailing octets after tag")
    return HandshakeMsg(phase=phase, protocol=protocol, sender=sender, recipient=recipient,
                        sss=sss, nonce=nonce, public=public, tag=tag)


def _body_of(raw: bytes) -> bytes:
    return raw[:len(raw) - 1 - raw[-1]] if raw else b""


# -----------------------------
# Display (out-of-band comparison by the user)
# -----------------------------
class DisplayPanel:
    """Both displays of a protocol-V pairing as seen by the person comparing them."""

    def __init__(self):
        self.shown: dict[Address, int] = {}

    def show(self, addr: Address, value: int) -> None:
        self.shown[addr] = value

    def confirm(self, addr: Address, value: int) -> bool:
        others = [v for a, v in self.shown.items() if a != addr]
        return bool(others) and all(v == value for v in others)


# -----------------------------
# Sessions
# -----------------------------
@dataclass
class SessionConfig:
    own: Address
    peer: Address
    sss: SecuritySuiteSelector = field(default_factory=SecuritySuiteSelector)
    master_key: Optional[SymmetricKey] = None
    password: Optional[str] = None
    static_keypair: Optional[KeyPair] = None
    peer_public: Optional[Point] = None
    display: Optional[DisplayPanel] = None
    has_display: bool = False
    ptk: Optional[SymmetricKey] = None
    hardened: bool = False
    entropy: Optional[random.Random] = None


@dataclass
class SessionResult:
    mk: Optional[SymmetricKey]
    mutually_authenticated: bool
    initiator_nonce: bytes = b""
    responder_nonce: bytes = b""
    erased: bool = False


@dataclass
class ProtocolSession:
    role: Role
    protocol: AssocProtocol
    sss: SecuritySuiteSelector
    config: SessionConfig
    own_nonce: bytes
    keypair: Optional[KeyPair] = None
    transcript: list = field(default_factory=list)
    peer_nonce: bytes = b""
    peer_public: Optional[Point] = None
    phase: Phase = Phase.idle
    result: Optional[SessionResult] = None
    abort_reason: Optional[AbortReason] = None
    _kck: Optional[SymmetricKey] = None
    _mk: Optional[SymmetricKey] = None

    @property
    def own(self) -> Address:
        return self.config.own

    @property
    def peer(self) -> Address:
        return self.config.peer

    @property
    def activated(self) -> bool:
        return self.phase == Phase.activated


def resolve_roles(a: Address, b: Address) -> tuple[Address, Address]:
    """(initiator, responder) for simultaneous attempts: the lower address initiates."""
    return (a, b) if a < b else (b, a)


def _random_nonce(entropy: Optional[random.Random]) -> bytes:
    if entropy is None:
        return secrets.token_bytes(NONCE_OCTETS)
    return entropy.randbytes(NONCE_OCTETS)


def _mk_bits(sss: SecuritySuiteSelector) -> KeyBits:
    return KeyBits.k256 if sss.cipher == Cipher.aes256_ccm else KeyBits.k128


def create_session(role: Role, protocol: AssocProtocol, config: SessionConfig) -> ProtocolSession:
    label = protocol.roman
    if protocol in (AssocProtocol.preshared_mk, AssocProtocol.ptk_creation) and config.master_key is None:
        raise ConfigError(label, "pre-shared master key")
    if protocol == AssocProtocol.password and not config.password:
        raise ConfigError(label, "password")
    if protocol == AssocProtocol.public_key_hidden:
        if role == Role.initiator and config.peer_public is None:
            raise ConfigError(label, "pre-provisioned responder public key")
        if role == Role.responder and config.static_keypair is None:
            raise ConfigError(label, "responder static key pair")
    if protocol == AssocProtocol.display and (config.display is None or not config.has_display):
        raise DisplayUnavailable(label, f"display at {role.value.lower()} {config.own}")
    if protocol == AssocProtocol.disassociation and config.ptk is None and config.master_key is None:
        raise ConfigError(label, "pairwise keys to erase")

    keypair = None
    if protocol in ECDH_PROTOCOLS:
        # a provisioned identity key pair stands in for the ephemeral one
        keypair = config.static_keypair or generate_keypair(config.entropy)

    session = ProtocolSession(
        role=role,
        protocol=protocol,
        sss=config.sss,
        config=config,
        own_nonce=_random_nonce(config.entropy),
        keypair=keypair,
    )
    if protocol == AssocProtocol.public_key_hidden and role == Role.initiator:
        session.peer_public = config.peer_public
    logger.debug(f"session {protocol.roman} {role.value} {config.own}->{config.peer} created")
    return session


def _password_point(password: str) -> Point:
    digest = hashes.Hash(hashes.SHA256())
    digest.update(b"mban-password" + password.encode("utf-8"))
    scalar = int.from_bytes(digest.finalize(), "big") % (N - 1) + 1
    return p256.base_mult(scalar)


def _blind(session: ProtocolSession, point: Point) -> Point:
    if session.protocol != AssocProtocol.password:
        return point
    return p256.add(point, _password_point(session.config.password))


def _unblind(session: ProtocolSession, point: Optional[Point]) -> Optional[Point]:
    if session.protocol != AssocProtocol.password or point is None:
        return point
    return p256.sub(point, _password_point(session.config.password))


def _nonces(session: ProtocolSession) -> tuple[bytes, bytes]:
    if session.role == Role.initiator:
        return session.own_nonce, session.peer_nonce
    return session.peer_nonce, session.own_nonce


def _addresses(session: ProtocolSession) -> bytes:
    ini, resp = (session.own, session.peer) if session.role == Role.initiator else (session.peer, session.own)
    return ini.to_bytes(2, "big") + resp.to_bytes(2, "big")


def _derive_keys(session: ProtocolSession) -> None:
    """Fill the session's MK and KCK once both nonces (and public points) are known."""
    ni, nr = _nonces(session)
    context = ni + nr + _addresses(session) + bytes([int(session.protocol)])
    proto = session.protocol
    if proto in ECDH_PROTOCOLS:
        shared = derive_shared_secret(session.keypair.private, session.peer_public)
        session._mk = derive_key(shared, "MK", context, _mk_bits(session.sss), KeyRole.mk)
        base = session._mk
    elif proto == AssocProtocol.disassociation and session.config.ptk is not None:
        session._mk = session.config.master_key
        base = session.config.ptk
    else:
        session._mk = session.config.master_key
        base = session._mk
    session._kck = derive_key(base, "KCK", context, KeyBits.k128, KeyRole.kck)


def _tag(session: ProtocolSession, direction: bytes, parts: list) -> bytes:
    message = direction + b"".join(parts)
    algorithm = select_tag_algorithm(len(message), session.config.hardened)
    return auth_tag(session._kck, message, algorithm)


def _public_x(point: Optional[Point]) -> bytes:
    return point[0].to_bytes(32, "big") if point is not None else b""


def _check_value(session: ProtocolSession) -> int:
    ni, nr = _nonces(session)
    own_pub = session.keypair.public
    if session.role == Role.initiator:
        pk_i, pk_r = own_pub, session.peer_public
    else:
        pk_i, pk_r = session.peer_public, own_pub
    transcript_key = derive_key(ni + nr, "KMAC", _public_x(pk_i) + _public_x(pk_r))
    transcript = encode_point(pk_i) + encode_point(pk_r) + ni + nr
    tag = cmac_tag(transcript_key, transcript)
    return (int.from_bytes(tag[:3], "big") >> 7) % CHECKVALUE_MODULUS


def display_checkvalue(session: ProtocolSession) -> int:
    if session.protocol != AssocProtocol.display:
        raise UsageError(f"protocol {session.protocol.roman} has no check value")
    if session.phase < Phase.responded or session.phase == Phase.aborted or session.peer_public is None:
        raise UsageError(f"check value needs phase >= Responded, session is {session.phase.name}")
    return _check_value(session)


def _abort(session: ProtocolSession, reason: AbortReason, detail: str = "") -> tuple:
    session.phase = Phase.aborted
    session.abort_reason = reason
    session.result = None
    session.keypair = None
    session._kck = None
    session._mk = None
    session.peer_public = None
    logger.warning(f"session {session.protocol.roman} {session.role.value} {session.own} aborted: "
                   f"{reason.value} {detail}".rstrip())
    return session, []


def _message(session: ProtocolSession, phase: MsgPhase, nonce: bytes = b"",
             public: Optional[Point] = None) -> HandshakeMsg:
    return HandshakeMsg(phase=phase, protocol=session.protocol, sender=session.own,
                        recipient=session.peer, sss=session.sss, nonce=nonce, public=public)


def _send(session: ProtocolSession, msg: HandshakeMsg, direction: Optional[bytes] = None) -> HandshakeMsg:
    if direction is not None:
        body = _encode_body(msg)
        msg = replace(msg, tag=_tag(session, direction, session.transcript + [body]))
    session.transcript.append(encode_handshake(msg))
    return msg


def _finish(session: ProtocolSession) -> None:
    ni, nr = _nonces(session)
    session.phase = Phase.activated
    session.result = SessionResult(
        mk=session._mk,
        mutually_authenticated=session.protocol in MUTUAL_PROTOCOLS,
        initiator_nonce=ni,
        responder_nonce=nr,
        erased=session.protocol == AssocProtocol.disassociation,
    )
    session._kck = None
    logger.info(f"session {session.protocol.roman} {session.role.value} {session.own}<->{session.peer} activated "
                f"mutual={session.result.mutually_authenticated}")


def advance(session: ProtocolSession, incoming: Optional[HandshakeMsg] = None,
            raw: Optional[bytes] = None) -> tuple:
    """
    Feed one message (or None to let the initiator start) and return the
    session with the messages it sends next. `raw` is the octet string the
    message arrived as; it defaults to the canonical encoding.
    """
    if session.phase in (Phase.aborted, Phase.activated):
        # stray messages after completion are ignored
        return session, []

    if incoming is None:
        if session.role != Role.initiator or session.phase != Phase.idle:
            return _abort(session, AbortReason.protocol_violation, "nothing to send")
        public = None
        if session.keypair is not None:
            public = _blind(session, session.keypair.public)
        msg = _send(session, _message(session, MsgPhase.request, session.own_nonce, public))
        session.phase = Phase.requested
        return session, [msg]

    raw = encode_handshake(incoming) if raw is None else raw
    if incoming.protocol != session.protocol or incoming.recipient != session.own \
            or incoming.sender != session.peer:
        return _abort(session, AbortReason.protocol_violation, "message for another session")

    expected = {
        (Role.responder, Phase.idle): MsgPhase.request,
        (Role.initiator, Phase.requested): MsgPhase.response,
        (Role.responder, Phase.responded): MsgPhase.activate,
    }.get((session.role, session.phase))
    if incoming.phase != expected:
        return _abort(session, AbortReason.protocol_violation,
                      f"got {incoming.phase.name} in {session.phase.name}")
    if incoming.sss != session.sss:
        return _abort(session, AbortReason.suite_mismatch)

    try:
        if incoming.phase == MsgPhase.request:
            return _on_request(session, incoming, raw)
        if incoming.phase == MsgPhase.response:
            return _on_response(session, incoming, raw)
        return _on_activate(session, incoming, raw)
    except CryptoError as e:
        return _abort(session, AbortReason.auth_failure, str(e))


def _take_peer_material(session: ProtocolSession, msg: HandshakeMsg) -> None:
    if len(msg.nonce) != NONCE_OCTETS:
        raise CryptoError("peer nonce missing")
    session.peer_nonce = msg.nonce
    if session.protocol in ECDH_PROTOCOLS:
        hidden = session.protocol == AssocProtocol.public_key_hidden
        if hidden and session.role == Role.initiator:
            if msg.public is not None:
                raise CryptoError("hidden public key was transmitted")
        else:
            session.peer_public = _unblind(session, msg.public)
        validate_public_key(session.peer_public)


def _on_request(session: ProtocolSession, msg: HandshakeMsg, raw: bytes) -> tuple:
    session.transcript.append(raw)
    _take_peer_material(session, msg)
    session.phase = Phase.requested
    _derive_keys(session)

    public = None
    hidden = session.protocol == AssocProtocol.public_key_hidden
    if session.keypair is not None and not hidden:
        public = _blind(session, session.keypair.public)
    if session.protocol == AssocProtocol.display:
        session.config.display.show(session.own, _check_value(session))
    out = _send(session, _message(session, MsgPhase.response, session.own_nonce, public), b"R")
    session.phase = Phase.responded
    return session, [out]


def _on_response(session: ProtocolSession, msg: HandshakeMsg, raw: bytes) -> tuple:
    _take_peer_material(session, msg)
    _derive_keys(session)
    expected = _tag(session, b"R", session.transcript + [_body_of(raw)])
    if not verify_tag(expected, msg.tag):
        return _abort(session, AbortReason.auth_failure, "responder tag")
    session.transcript.append(raw)
    session.phase = Phase.responded

    if session.protocol == AssocProtocol.display:
        value = _check_value(session)
        session.config.display.show(session.own, value)
        if not session.config.display.confirm(session.own, value):
            return _abort(session, AbortReason.auth_failure, "check values differ")

    out = _send(session, _message(session, MsgPhase.activate), b"I")
    _finish(session)
    return session, [out]


def _on_activate(session: ProtocolSession, msg: HandshakeMsg, raw: bytes) -> tuple:
    expected = _tag(session, b"I", session.transcript + [_body_of(raw)])
    if not verify_tag(expected, msg.tag):
        return _abort(session, AbortReason.auth_failure, "initiator tag")
    session.transcript.append(raw)
    if session.protocol == AssocProtocol.display:
        if not session.config.display.confirm(session.own, _check_value(session)):
            return _abort(session, AbortReason.auth_failure, "check values differ")
    _finish(session)
    return session, []


# -----------------------------
# Driving two sessions
# -----------------------------
@dataclass(frozen=True)
class TraceEntry:
    sender: Address
    recipient: Address
    phase: str
    size: int
    tagged: bool
    delivered: bool


Relay = Callable[[bytes], Optional[bytes]]


def run_handshake(initiator: ProtocolSession, responder: ProtocolSession,
                  relay: Optional[Relay] = None, max_messages: int = 6) -> list[TraceEntry]:
    """
    Exchange messages until neither side has anything to send. A relay may
    rewrite or drop (return None) each message in flight.
    """
    trace = []
    sessions = {initiator.own: initiator, responder.own: responder}
    _, pending = advance(initiator)
    while pending and len(trace) < max_messages:
        msg = pending.pop(0)
        data = encode_handshake(msg)
        if relay is not None:
            data = relay(data)
        target = sessions.get(msg.recipient)
        trace.append(TraceEntry(msg.sender, msg.recipient, msg.phase.name, len(encode_handshake(msg)),
                                bool(msg.tag), data is not None and target is not None))
        if data is None or target is None:
            continue
        try:
            received = decode_handshake(data)
        except (DecodeError, CryptoError) as e:
            _abort(target, AbortReason.protocol_violation, str(e))
            continue
        _, out = advance(target, received, data)
        pending.extend(out)
    return trace


# -----------------------------
# Disassociation (VII)
# -----------------------------
def _erase_suite(key: SymmetricKey) -> SecuritySuiteSelector:
    return SecuritySuiteSelector(level=SecurityLevel.auth_only, protocol=AssocProtocol.disassociation,
                                 cipher=cipher_for(key))


def accept_erase_frame(store: KeyStore, own: Address, frame_bytes: bytes) -> bool:
    """
    Receiver side of an erase request carried in a Level1 management frame.
    Frames that fail authentication are ignored and the keys are kept.
    """
    try:
        frame = decode_frame(frame_bytes)
    except DecodeError:
        return False
    if frame.recipient != own or frame.level < SecurityLevel.auth_only:
        logger.warning(f"unauthenticated erase request from {frame.sender} ignored")
        return False
    ptk = store.active(KeyRole.ptk, pair_key(own, frame.sender))
    if ptk is None:
        return False
    verdict = SecureChannel(own, frame.sender, store, _erase_suite(ptk.key)).open(frame)
    if not isinstance(verdict, Deliver):
        logger.warning(f"erase request from {frame.sender} rejected: {verdict.reason.value}")
        return False
    try:
        msg = decode_handshake(verdict.payload)
    except DecodeError:
        return False
    if msg.protocol != AssocProtocol.disassociation or msg.phase != MsgPhase.activate:
        return False
    erase_pair(store, (own, frame.sender))
    return True


def disassociate(store_a: KeyStore, store_b: KeyStore, a: Address, b: Address,
                 entropy: Optional[random.Random] = None) -> tuple:
    """
    Authenticated erase exchange between a and b. Returns both stores and the
    erase frame; afterwards neither store holds the pair's MK or PTK.
    """
    owner = pair_key(a, b)
    stores = {a: store_a, b: store_b}
    keys = {}
    for addr, store in stores.items():
        ptk = store.active(KeyRole.ptk, owner)
        mk = store.active(KeyRole.mk, owner)
        if ptk is None and mk is None:
            raise NotFound(f"no keys for pair {owner} at {addr}")
        if ptk is None:
            raise NotSecured(addr)
        keys[addr] = (mk, ptk)

    initiator, responder = resolve_roles(a, b)
    suite = _erase_suite(keys[initiator][1].key)
    sessions = {}
    for own, peer, role in ((initiator, responder, Role.initiator), (responder, initiator, Role.responder)):
        mk, ptk = keys[own]
        cfg = SessionConfig(own=own, peer=peer, sss=suite, master_key=mk.key if mk else None,
                            ptk=ptk.key, entropy=entropy)
        sessions[own] = create_session(role, AssocProtocol.disassociation, cfg)

    held = []

    def hold_activate(data: bytes) -> Optional[bytes]:
        if decode_handshake(data).phase == MsgPhase.activate:
            held.append(data)
            return None
        return data

    run_handshake(sessions[initiator], sessions[responder], relay=hold_activate)
    if not sessions[initiator].activated or not held:
        raise AuthFailure(f"erase handshake between {a} and {b} did not complete")

    # the activate message travels as the authenticated erase frame
    frame = SecureChannel(initiator, responder, stores[initiator], suite).seal(
        FrameType.management, held[0], SecurityLevel.auth_only)
    frame_bytes = encode_frame(frame)
    advance(sessions[responder], decode_handshake(held[0]), held[0])
    if not sessions[responder].activated or not accept_erase_frame(stores[responder], responder, frame_bytes):
        raise AuthFailure(f"erase frame from {initiator} was not accepted")
    erase_pair(stores[initiator], owner)
    logger.info(f"pair {owner} disassociated")
    return store_a, store_b, frame_bytes
