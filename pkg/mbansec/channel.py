# mbansec/channel.py
from dataclasses import dataclass, replace
from typing import Optional, Union

from logger import setup_logger

from .crypto_suite import KeyRole, NonceGuard, ccm_open, ccm_seal
from .errors import AuthFailure, NotSecured
from .frame_codec import (Address, Discard, DiscardReason, Frame, FrameType, SecurityLevel,
                          SecuritySuiteSelector, SequencePair, advance_sequence, build_nonce,
                          check_replay, encode_header, infer_sequence, level_tag, LOW_MAX)
from .key_mgmt import KeyRecord, KeyState, KeyStore, pair_key

logger = setup_logger("SecureChannel")

CONTROL_TYPES = (FrameType.control, FrameType.management)


@dataclass(frozen=True)
class Deliver:
    payload: bytes
    seq: SequencePair


InboundVerdict = Union[Deliver, Discard]


class SecureChannel:
    """Sealing and opening of unicast frames between `own` and `peer` under their active PTK."""

    def __init__(self, own: Address, peer: Address, store: KeyStore, suite: SecuritySuiteSelector,
                 guard: Optional[NonceGuard] = None):
        self.own = own
        self.peer = peer
        self.store = store
        self.suite = suite
        self.guard = guard if guard is not None else NonceGuard()
        self._plain_low = 0

    @property
    def pair(self) -> tuple:
        return pair_key(self.own, self.peer)

    def record(self) -> Optional[KeyRecord]:
        return self.store.active(KeyRole.ptk, self.pair)

    def level_for(self, frame_type: FrameType) -> SecurityLevel:
        level = self.suite.level
        if self.suite.auth_control_frames and frame_type in CONTROL_TYPES:
            level = max(level, SecurityLevel.auth_only)
        return level

    def seal(self, frame_type: FrameType, payload: bytes, level: Optional[SecurityLevel] = None) -> Frame:
        level = self.level_for(frame_type) if level is None else level
        if level == SecurityLevel.unsecured:
            self._plain_low = (self._plain_low + 1) & LOW_MAX
            return Frame(sender=self.own, recipient=self.peer, frame_type=frame_type, level=level,
                         seq=SequencePair(0, self._plain_low), payload=payload)

        rec = self.record()
        if rec is None:
            raise NotSecured(self.own)
        rec.last_seq_tx = advance_sequence(rec.last_seq_tx)
        header = Frame(sender=self.own, recipient=self.peer, frame_type=frame_type, level=level,
                       seq=rec.last_seq_tx, key_id=rec.key_id, payload=payload)
        nonce = build_nonce(self.own, self.peer, level_tag(level, frame_type), rec.last_seq_tx)
        if level == SecurityLevel.auth_only:
            _, mic = ccm_seal(rec.key, nonce, encode_header(header) + payload, b"",
                              cipher=self.suite.cipher, guard=self.guard)
            return replace(header, mic=mic)
        ct, mic = ccm_seal(rec.key, nonce, encode_header(header), payload,
                           cipher=self.suite.cipher, guard=self.guard)
        return replace(header, payload=ct, mic=mic)

    def _try_open(self, rec: KeyRecord, frame: Frame, seq: SequencePair) -> Optional[bytes]:
        candidate = replace(frame, seq=seq)
        nonce = build_nonce(frame.sender, frame.recipient, level_tag(frame.level, frame.frame_type), seq)
        try:
            if frame.level == SecurityLevel.auth_only:
                ccm_open(rec.key, nonce, encode_header(candidate) + frame.payload, b"", frame.mic,
                         cipher=self.suite.cipher)
                return frame.payload
            return ccm_open(rec.key, nonce, encode_header(candidate), frame.payload, frame.mic,
                            cipher=self.suite.cipher)
        except AuthFailure:
            return None

    def open(self, frame: Frame) -> InboundVerdict:
        """Authenticate and decrypt an inbound sealed frame; the high-order SN is inferred."""
        rec = self.store.by_key_id(KeyRole.ptk, self.pair, frame.key_id)
        if rec is None:
            return Discard(DiscardReason.no_keys)
        if rec.state == KeyState.revoked:
            return Discard(DiscardReason.revoked)
        if rec.state == KeyState.retired and rec.grace_left <= 0:
            return Discard(DiscardReason.no_keys)

        same, rolled = infer_sequence(rec.last_seq_rx, frame.seq.low)
        verdict = check_replay(rec.last_seq_rx, same)
        if not isinstance(verdict, Discard):
            plaintext = self._try_open(rec, frame, same)
            if plaintext is None:
                return Discard(DiscardReason.auth_failure)
            return self._accepted(rec, same, plaintext)
        if rolled is None:
            return verdict
        wrap = check_replay(rec.last_seq_rx, rolled)
        if isinstance(wrap, Discard):
            return wrap
        plaintext = self._try_open(rec, frame, rolled)
        if plaintext is None:
            return verdict
        return self._accepted(rec, rolled, plaintext)

    def _accepted(self, rec: KeyRecord, seq: SequencePair, plaintext: bytes) -> Deliver:
        rec.last_seq_rx = seq
        if rec.state == KeyState.retired:
            rec.grace_left -= 1
        return Deliver(payload=plaintext, seq=seq)
