# mbansec/frame_codec.py
"""
Wire codec for MAC frames, nonce construction and security sequence numbers.

Header layout (10 octets, big-endian):
    sender(2) | recipient(2) | type(1) | level(1) | key_id(1) | low SN(2) | payload length(1)
followed by the payload and then the MIC. The high-order SN is never sent;
the receiver keeps it per key. See docs/wire.md.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import DecodeError, DecodeKind, EncodeError, SequenceExhausted

HEADER = struct.Struct(">HHBBBHB")
HEADER_LEN = HEADER.size
NONCE_LEN = 13
MAX_PAYLOAD = 255
MIC_LENGTHS = (8, 16)

HIGH_MAX = 0xFFFFFFFF
LOW_MAX = 0xFFFF

UNASSIGNED = 0
HUB_BASE = 0xFF00

Address = int


def is_hub(addr: Address) -> bool:
    return HUB_BASE <= addr <= 0xFFFF


def check_address(addr: Address) -> Address:
    if not isinstance(addr, int) or not 0 <= addr <= 0xFFFF:
        raise ValueError(f"address out of range: {addr!r}")
    return addr


class SecurityLevel(enum.IntEnum):
    unsecured = 0
    auth_only = 1
    auth_enc = 2


class FrameType(enum.IntEnum):
    beacon = 0
    management = 1
    control = 2
    data = 3
    wakeup = 4


class AssocProtocol(enum.IntEnum):
    preshared_mk = 1        # I
    unauthenticated = 2     # II
    public_key_hidden = 3   # III
    password = 4            # IV
    display = 5             # V
    ptk_creation = 6        # VI
    disassociation = 7      # VII

    @property
    def roman(self) -> str:
        return ("I", "II", "III", "IV", "V", "VI", "VII")[self.value - 1]

    @classmethod
    def from_roman(cls, text: str) -> "AssocProtocol":
        romans = {p.roman: p for p in cls}
        key = text.strip().upper()
        if key in romans:
            return romans[key]
        return cls[text.strip().lower()]


ASSOCIATION_PROTOCOLS = (
    AssocProtocol.preshared_mk,
    AssocProtocol.unauthenticated,
    AssocProtocol.public_key_hidden,
    AssocProtocol.password,
    AssocProtocol.display,
)


class Cipher(enum.IntEnum):
    aes128_ccm = 0
    aes256_ccm = 1
    camellia128_ccm = 2


@dataclass(frozen=True, order=True)
class SequencePair:
    high: int = 0
    low: int = 0

    def __post_init__(self):
        if not 0 <= self.high <= HIGH_MAX or not 0 <= self.low <= LOW_MAX:
            raise ValueError(f"sequence pair out of range: ({self.high}, {self.low})")

    def flat(self) -> int:
        return (self.high << 16) | self.low


@dataclass(frozen=True)
class SecuritySuiteSelector:
    level: SecurityLevel = SecurityLevel.auth_enc
    protocol: AssocProtocol = AssocProtocol.preshared_mk
    cipher: Cipher = Cipher.aes128_ccm
    auth_control_frames: bool = False

    def encode(self) -> bytes:
        flags = 1 if self.auth_control_frames else 0
        return bytes([int(self.level), int(self.protocol), int(self.cipher), flags])

    @classmethod
    def decode(cls, data: bytes) -> "SecuritySuiteSelector":
        if len(data) != 4:
            raise DecodeError(DecodeKind.malformed, "SSS must be 4 octets")
        if data[3] > 1:
            raise DecodeError(DecodeKind.malformed, f"SSS flags 0x{data[3]:02x}")
        try:
            return cls(
                level=SecurityLevel(data[0]),
                protocol=AssocProtocol(data[1]),
                cipher=Cipher(data[2]),
                auth_control_frames=bool(data[3] & 1),
            )
        except ValueError as e:
            raise DecodeError(DecodeKind.malformed, str(e)) from e


@dataclass(frozen=True)
class Frame:
    sender: Address
    recipient: Address
    frame_type: FrameType
    level: SecurityLevel
    seq: SequencePair = field(default_factory=SequencePair)
    key_id: int = 0
    payload: bytes = b""
    mic: bytes = b""


class DiscardReason(enum.Enum):
    not_fresh = "NotFresh"
    high_wrap = "HighWrap"
    no_keys = "NoKeys"
    auth_failure = "AuthFailure"
    level_policy = "LevelPolicy"
    wrong_state = "WrongState"
    malformed = "Malformed"
    revoked = "Revoked"
    rate_limited = "RateLimited"
    hub_overloaded = "HubOverloaded"
    peer_dead = "PeerDead"
    jammed = "Jammed"
    no_route = "NoRoute"


@dataclass(frozen=True)
class Accept:
    pass


@dataclass(frozen=True)
class Discard:
    reason: DiscardReason


ACCEPT = Accept()
ReplayVerdict = Union[Accept, Discard]


def _check_frame(frame: Frame, exc=EncodeError) -> None:
    if len(frame.payload) > MAX_PAYLOAD:
        raise exc(f"payload of {len(frame.payload)} octets exceeds {MAX_PAYLOAD}")
    if frame.level == SecurityLevel.unsecured and frame.mic:
        raise exc("unsecured frame carries a MIC")
    if frame.level != SecurityLevel.unsecured and len(frame.mic) not in MIC_LENGTHS:
        raise exc(f"secured frame needs a MIC of {MIC_LENGTHS} octets, got {len(frame.mic)}")
    if not 0 <= frame.key_id <= 0xFF:
        raise exc(f"key_id out of range: {frame.key_id}")
    try:
        check_address(frame.sender)
        check_address(frame.recipient)
    except ValueError as e:
        raise exc(str(e)) from e


def encode_header(frame: Frame) -> bytes:
    """The 10 header octets; also the additional authenticated data of a sealed frame."""
    if len(frame.payload) > MAX_PAYLOAD:
        raise EncodeError(f"payload of {len(frame.payload)} octets exceeds {MAX_PAYLOAD}")
    return HEADER.pack(
        frame.sender,
        frame.recipient,
        int(frame.frame_type),
        int(frame.level),
        frame.key_id,
        frame.seq.low,
        len(frame.payload),
    )


def encode_frame(frame: Frame) -> bytes:
    _check_frame(frame)
    return encode_header(frame) + frame.payload + frame.mic


def decode_frame(data: bytes, high_order: int = 0) -> Frame:
    if len(data) < HEADER_LEN:
        raise DecodeError(DecodeKind.truncated, f"{len(data)} octets, header needs {HEADER_LEN}")
    sender, recipient, ftype, level, key_id, low, plen = HEADER.unpack_from(data)
    if len(data) < HEADER_LEN + plen:
        raise DecodeError(DecodeKind.truncated, f"payload needs {plen} octets")
    try:
        ftype = FrameType(ftype)
        level = SecurityLevel(level)
    except ValueError as e:
        raise DecodeError(DecodeKind.malformed, str(e)) from e
    payload = bytes(data[HEADER_LEN:HEADER_LEN + plen])
    mic = bytes(data[HEADER_LEN + plen:])
    if level == SecurityLevel.unsecured and mic:
        raise DecodeError(DecodeKind.malformed, "trailing octets after unsecured frame")
    if level != SecurityLevel.unsecured and len(mic) not in MIC_LENGTHS:
        raise DecodeError(DecodeKind.malformed, f"level {level.value} frame with {len(mic)}-octet MIC")
    return Frame(
        sender=sender,
        recipient=recipient,
        frame_type=ftype,
        level=level,
        seq=SequencePair(high_order, low),
        key_id=key_id,
        payload=payload,
        mic=mic,
    )


def advance_sequence(seq: SequencePair) -> SequencePair:
    if seq.low < LOW_MAX:
        return SequencePair(seq.high, seq.low + 1)
    if seq.high == HIGH_MAX:
        raise SequenceExhausted(f"sequence space exhausted at ({seq.high}, {seq.low})")
    return SequencePair(seq.high + 1, 0)


def check_replay(last_accepted: SequencePair, incoming: SequencePair) -> ReplayVerdict:
    if incoming.high < last_accepted.high:
        return Discard(DiscardReason.high_wrap)
    if incoming <= last_accepted:
        return Discard(DiscardReason.not_fresh)
    return ACCEPT


def infer_sequence(last_accepted: SequencePair, low: int) -> tuple[SequencePair, Optional[SequencePair]]:
    """
    Rebuild the full pair from the on-air low-order SN.
    Returns (same-high candidate, rollover candidate or None). The rollover
    candidate only exists when low did not increase; it wraps high to 0 when
    high is at its maximum so check_replay reports the wrap.
    """
    same = SequencePair(last_accepted.high, low)
    if low >= last_accepted.low:
        return same, None
    rolled_high = 0 if last_accepted.high == HIGH_MAX else last_accepted.high + 1
    return same, SequencePair(rolled_high, low)


def level_tag(level: SecurityLevel, frame_type: FrameType) -> int:
    return (int(level) << 4) | int(frame_type)


def build_nonce(sender: Address, recipient: Address, tag: int, seq: SequencePair) -> bytes:
    nonce = struct.pack(">HHBIH", sender, recipient, tag & 0xFF, seq.high, seq.low) + b"\x00\x00"
    assert len(nonce) == NONCE_LEN
    return nonce
