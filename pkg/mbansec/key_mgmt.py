# mbansec/key_mgmt.py
import enum
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Union

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.pbkdf2 import PBKDF2HMAC

from config import Config
from logger import setup_logger

from .crypto_suite import (CONFIRM_MIC_LEN, KeyBits, KeyRole, SymmetricKey, ccm_open, ccm_seal,
                           derive_key, key_fingerprint)
from .errors import AuthFailure, KeyConflict, MissingMasterKey, NotFound, NotSecured
from .frame_codec import (Address, Cipher, Frame, FrameType, SecurityLevel, SequencePair, advance_sequence,
                          build_nonce, check_replay, encode_header, level_tag, Discard)

logger = setup_logger("KeyManagement")

KEYSTORE_MAGIC = b"BKS1"
STORE_NONCE_LEN = 13

Owner = Union[tuple[Address, Address], str]


class KeyState(enum.Enum):
    active = "Active"
    retired = "Retired"
    revoked = "Revoked"


def pair_key(a: Address, b: Address) -> tuple[Address, Address]:
    return (a, b) if a <= b else (b, a)


def group_id(hub: Address) -> str:
    return f"group-{hub:04x}"


@dataclass
class KeyRecord:
    record_id: str
    key: SymmetricKey
    owner: Owner
    origin: str
    epoch: int = 0
    state: KeyState = KeyState.active
    last_seq_tx: SequencePair = field(default_factory=SequencePair)
    last_seq_rx: SequencePair = field(default_factory=SequencePair)
    key_id: int = 0
    grace_left: int = 0

    @property
    def role(self) -> KeyRole:
        return self.key.role


@dataclass
class KeyStore:
    records: dict = field(default_factory=dict)
    store_nonce: int = 0
    sealed_blob: Optional[bytes] = None
    _next_id: int = 1

    def new_id(self, role: KeyRole) -> str:
        rid = f"{role.value.lower()}-{self._next_id:05d}"
        self._next_id += 1
        return rid

    def active(self, role: KeyRole, owner: Owner) -> Optional[KeyRecord]:
        for rec in self.records.values():
            if rec.role == role and rec.owner == owner and rec.state == KeyState.active:
                return rec
        return None

    def find(self, record_id: str) -> KeyRecord:
        if record_id not in self.records:
            raise NotFound(f"no key record {record_id}")
        return self.records[record_id]

    def by_key_id(self, role: KeyRole, owner: Owner, key_id: int) -> Optional[KeyRecord]:
        """Active record first, then a retired one still in grace, then anything else carrying the id."""
        matches = [r for r in self.records.values() if r.role == role and r.owner == owner and r.key_id == key_id]
        if not matches:
            return None
        return min(matches, key=_lookup_rank)

    def of_role(self, role: KeyRole) -> list:
        return [r for r in self.records.values() if r.role == role]


def _lookup_rank(rec: KeyRecord) -> int:
    if rec.state == KeyState.active:
        return 0
    if rec.state == KeyState.retired and rec.grace_left > 0:
        return 1
    return 2 if rec.state == KeyState.revoked else 3


def _prune_spent(store: KeyStore, record: KeyRecord) -> None:
    # a spent retired key would shadow the new key under the same id
    spent = [rid for rid, r in store.records.items()
             if rid != record.record_id and r.role == record.role and r.owner == record.owner
             and r.key_id == record.key_id and r.state == KeyState.retired and r.grace_left <= 0]
    for rid in spent:
        del store.records[rid]
    if spent:
        logger.debug(f"dropped {len(spent)} spent {record.role.value} records with key id {record.key_id}")


def install_key(store: KeyStore, record: KeyRecord, replace_active: bool = False) -> KeyStore:
    current = store.active(record.role, record.owner)
    if current is not None and current.record_id != record.record_id:
        if not replace_active:
            raise KeyConflict(f"{record.role.value} already active for {record.owner}")
        current.state = KeyState.retired
        current.grace_left = Config.RETIRED_KEY_GRACE
    record.state = KeyState.active
    _prune_spent(store, record)
    store.records[record.record_id] = record
    logger.info(f"installed {record.role.value} {record.record_id} owner={record.owner} epoch={record.epoch} origin={record.origin}")
    return store


def install_master_key(store: KeyStore, pair: tuple, mk: SymmetricKey, origin: str) -> KeyRecord:
    record = KeyRecord(record_id=store.new_id(KeyRole.mk), key=mk, owner=pair_key(*pair), origin=origin)
    install_key(store, record, replace_active=True)
    return record


def _ptk_context(pair: tuple, initiator_nonce: bytes, responder_nonce: bytes) -> bytes:
    a, b = pair_key(*pair)
    return initiator_nonce + responder_nonce + a.to_bytes(2, "big") + b.to_bytes(2, "big")


def rotate_ptk(store: KeyStore, pair: tuple, initiator_nonce: bytes, responder_nonce: bytes) -> tuple:
    owner = pair_key(*pair)
    mk = store.active(KeyRole.mk, owner)
    if mk is None:
        raise MissingMasterKey(f"no active MK for {owner}")
    epochs = [r.epoch for r in store.of_role(KeyRole.ptk) if r.owner == owner]
    epoch = max(epochs, default=0) + 1
    ptk = derive_key(mk.key, "PTK", _ptk_context(owner, initiator_nonce, responder_nonce),
                     KeyBits(mk.key.bits), KeyRole.ptk)
    record = KeyRecord(
        record_id=store.new_id(KeyRole.ptk),
        key=ptk,
        owner=owner,
        origin=mk.origin,
        epoch=epoch,
        key_id=epoch & 0xFF,
    )
    install_key(store, record, replace_active=True)
    return store, epoch


def revoke_key(store: KeyStore, record_id: str) -> KeyStore:
    record = store.find(record_id)
    if record.state != KeyState.revoked:
        record.state = KeyState.revoked
        record.grace_left = 0
        logger.info(f"revoked {record.role.value} {record_id} owner={record.owner}")
    return store


def erase_pair(store: KeyStore, pair: tuple) -> KeyStore:
    owner = pair_key(*pair)
    doomed = [rid for rid, r in store.records.items()
              if r.owner == owner and r.role in (KeyRole.mk, KeyRole.ptk)]
    if not doomed:
        raise NotFound(f"no MK/PTK for {owner}")
    for rid in doomed:
        del store.records[rid]
    logger.info(f"erased {len(doomed)} key records for {owner}")
    return store


# -----------------------------
# GTK distribution (unicast, sealed under each member's PTK)
# -----------------------------
def _gtk_wrap_key(ptk: KeyRecord, hub: Address, member: Address) -> SymmetricKey:
    return derive_key(ptk.key, "GTKWRAP", hub.to_bytes(2, "big") + member.to_bytes(2, "big"),
                      KeyBits(ptk.key.bits), KeyRole.gtk)


def distribute_gtk(hub_store: KeyStore, hub: Address, group: Iterable[Address], gtk_material: bytes) -> tuple:
    members = sorted(set(group))
    ptks = {}
    for member in members:
        ptk = hub_store.active(KeyRole.ptk, pair_key(member, hub))
        if ptk is None:
            raise NotSecured(member)
        ptks[member] = ptk

    owner = group_id(hub)
    epochs = [r.epoch for r in hub_store.of_role(KeyRole.gtk) if r.owner == owner]
    epoch = max(epochs, default=0) + 1
    gtk = SymmetricKey(bits=KeyBits(len(gtk_material) * 8), material=gtk_material, role=KeyRole.gtk)
    record = KeyRecord(record_id=hub_store.new_id(KeyRole.gtk), key=gtk, owner=owner, origin="gtk",
                       epoch=epoch, key_id=0x80 | (epoch & 0x7F))
    install_key(hub_store, record, replace_active=True)

    frames = []
    for member in members:
        ptk = ptks[member]
        ptk.last_seq_tx = advance_sequence(ptk.last_seq_tx)
        header = Frame(sender=hub, recipient=member, frame_type=FrameType.management,
                       level=SecurityLevel.auth_enc, seq=ptk.last_seq_tx, key_id=ptk.key_id,
                       payload=bytes(1 + len(gtk_material)))
        plaintext = bytes([epoch & 0xFF]) + gtk_material
        nonce = build_nonce(hub, member, level_tag(header.level, header.frame_type), ptk.last_seq_tx)
        ct, mic = ccm_seal(_gtk_wrap_key(ptk, hub, member), nonce, encode_header(header), plaintext,
                           cipher=cipher_for(ptk.key))
        frames.append(replace(header, payload=ct, mic=mic))
    logger.info(f"GTK epoch {epoch} distributed to {len(frames)} members of {owner}")
    return frames, record


def cipher_for(key: SymmetricKey) -> Cipher:
    return Cipher.aes256_ccm if key.bits == KeyBits.k256 else Cipher.aes128_ccm


def open_gtk_frame(member_store: KeyStore, frame: Frame) -> KeyRecord:
    """Member side: verify the unicast GTK frame under the PTK and install the GTK."""
    hub, member = frame.sender, frame.recipient
    ptk = member_store.active(KeyRole.ptk, pair_key(member, hub))
    if ptk is None or ptk.key_id != frame.key_id:
        raise NotSecured(member)
    verdict = check_replay(ptk.last_seq_rx, frame.seq)
    if isinstance(verdict, Discard):
        raise AuthFailure(f"stale GTK frame: {verdict.reason.value}")
    nonce = build_nonce(hub, member, level_tag(frame.level, frame.frame_type), frame.seq)
    plaintext = ccm_open(_gtk_wrap_key(ptk, hub, member), nonce, encode_header(frame), frame.payload,
                         frame.mic, cipher=cipher_for(ptk.key))
    ptk.last_seq_rx = frame.seq
    epoch, material = plaintext[0], plaintext[1:]
    gtk = SymmetricKey(bits=KeyBits(len(material) * 8), material=material, role=KeyRole.gtk)
    record = KeyRecord(record_id=member_store.new_id(KeyRole.gtk), key=gtk, owner=group_id(hub),
                       origin="gtk", epoch=epoch, key_id=0x80 | (epoch & 0x7F))
    install_key(member_store, record, replace_active=True)
    return record


# -----------------------------
# At-rest sealing
# -----------------------------
def _record_to_dict(rec: KeyRecord) -> dict:
    return {
        "record_id": rec.record_id,
        "bits": int(rec.key.bits),
        "material": rec.key.material.hex(),
        "role": rec.key.role.value,
        "owner": list(rec.owner) if isinstance(rec.owner, tuple) else rec.owner,
        "origin": rec.origin,
        "epoch": rec.epoch,
        "state": rec.state.value,
        "tx": [rec.last_seq_tx.high, rec.last_seq_tx.low],
        "rx": [rec.last_seq_rx.high, rec.last_seq_rx.low],
        "key_id": rec.key_id,
        "grace_left": rec.grace_left,
    }


def _record_from_dict(d: dict) -> KeyRecord:
    key = SymmetricKey(bits=KeyBits(d["bits"]), material=bytes.fromhex(d["material"]), role=KeyRole(d["role"]))
    owner = tuple(d["owner"]) if isinstance(d["owner"], list) else d["owner"]
    return KeyRecord(
        record_id=d["record_id"],
        key=key,
        owner=owner,
        origin=d["origin"],
        epoch=d["epoch"],
        state=KeyState(d["state"]),
        last_seq_tx=SequencePair(*d["tx"]),
        last_seq_rx=SequencePair(*d["rx"]),
        key_id=d["key_id"],
        grace_left=d["grace_left"],
    )


def store_key_from_passphrase(passphrase: str, bits: KeyBits = KeyBits.k128,
                              salt: Optional[bytes] = None) -> SymmetricKey:
    """PBKDF2-HMAC-SHA256 stretches the passphrase; the STORE label binds the result to the keystore."""
    salt = Config.KEYSTORE_SALT.encode("utf-8") if salt is None else salt
    stretch = PBKDF2HMAC(algorithm=hashes.SHA256(), length=32, salt=salt, iterations=Config.KEYSTORE_KDF_ITERATIONS)
    secret = stretch.derive(passphrase.encode("utf-8"))
    return derive_key(secret, "STORE", KEYSTORE_MAGIC + salt, bits, KeyRole.store)


def persist_keystore(store: KeyStore, store_key: SymmetricKey) -> bytes:
    store.store_nonce += 1
    nonce = store.store_nonce.to_bytes(STORE_NONCE_LEN, "big")
    document = json.dumps({
        "next_id": store._next_id,
        "records": [_record_to_dict(r) for r in store.records.values()],
    }, sort_keys=True).encode("utf-8")
    ct, mic = ccm_seal(store_key, nonce, KEYSTORE_MAGIC, document, mic_len=CONFIRM_MIC_LEN,
                       cipher=cipher_for(store_key))
    blob = KEYSTORE_MAGIC + nonce + ct + mic
    store.sealed_blob = blob
    logger.info(f"keystore sealed: {len(store.records)} records, store key {key_fingerprint(store_key)}")
    return blob


def open_keystore(blob: bytes, store_key: SymmetricKey) -> KeyStore:
    head = len(KEYSTORE_MAGIC) + STORE_NONCE_LEN
    if len(blob) < head + CONFIRM_MIC_LEN or blob[:len(KEYSTORE_MAGIC)] != KEYSTORE_MAGIC:
        raise AuthFailure("not a sealed keystore")
    nonce = blob[len(KEYSTORE_MAGIC):head]
    ct, mic = blob[head:-CONFIRM_MIC_LEN], blob[-CONFIRM_MIC_LEN:]
    document = json.loads(ccm_open(store_key, nonce, KEYSTORE_MAGIC, ct, mic, cipher=cipher_for(store_key)))
    store = KeyStore(store_nonce=int.from_bytes(nonce, "big"), sealed_blob=blob, _next_id=document["next_id"])
    for d in document["records"]:
        rec = _record_from_dict(d)
        store.records[rec.record_id] = rec
    return store
