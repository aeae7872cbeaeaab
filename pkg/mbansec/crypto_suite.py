# mbansec/crypto_suite.py
"""
Primitives the association protocols and the secure channel rely on:
P-256 ECDH, AES-CMAC, a CMAC counter-mode KDF and AES-CCM with 13-octet nonces.
"""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Optional, Union

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import cmac, constant_time, hashes, hmac
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.ciphers import algorithms
from cryptography.hazmat.primitives.ciphers.aead import AESCCM

from .errors import (AuthFailure, CryptoError, InvalidPublicKey, NonceReuse,
                     UnsupportedCipher, UsageError)
from .frame_codec import NONCE_LEN, Cipher

# FIPS 186-3 P-256 domain parameters
P = 0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFF
N = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
A = P - 3
B = 0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B
GX = 0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296
GY = 0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5

CURVE = ec.SECP256R1()
BLOCK = 16
FRAME_MIC_LEN = 8
CONFIRM_MIC_LEN = 16

Point = tuple[int, int]


class KeyBits(enum.IntEnum):
    k128 = 128
    k256 = 256


class KeyRole(enum.Enum):
    mk = "MK"
    ptk = "PTK"
    gtk = "GTK"
    kck = "KCK"
    store = "STORE"


@dataclass(frozen=True)
class KeyPair:
    private: int
    public: Point


@dataclass(frozen=True)
class SymmetricKey:
    bits: KeyBits
    material: bytes
    role: KeyRole

    def __post_init__(self):
        if len(self.material) * 8 != int(self.bits):
            raise ValueError(f"{self.bits.name} key needs {int(self.bits) // 8} octets, got {len(self.material)}")

    def __repr__(self):
        # never print key material
        return f"SymmetricKey({self.role.value}, {self.bits.name}, fp={key_fingerprint(self.material)})"


KeyLike = Union[SymmetricKey, bytes]


def _material(key: KeyLike) -> bytes:
    material = key.material if isinstance(key, SymmetricKey) else bytes(key)
    if len(material) not in (16, 32):
        raise UsageError(f"AES keys are 16 or 32 octets, got {len(material)}")
    return material


# -----------------------------
# P-256
# -----------------------------
def on_curve(point: Point) -> bool:
    x, y = point
    return (y * y - (x * x * x + A * x + B)) % P == 0


def keypair_from_scalar(scalar: int) -> KeyPair:
    if not 1 <= scalar < N:
        raise CryptoError("private scalar outside [1, n-1]")
    numbers = ec.derive_private_key(scalar, CURVE).public_key().public_numbers()
    return KeyPair(private=scalar, public=(numbers.x, numbers.y))


def generate_keypair(entropy: Optional[random.Random] = None) -> KeyPair:
    """
    Seeded `random.Random` gives a deterministic key (simulation mode);
    None draws from the OS key-quality source.
    """
    try:
        if entropy is None:
            private = ec.generate_private_key(CURVE)
            return keypair_from_scalar(private.private_numbers().private_value)
        return keypair_from_scalar(entropy.randrange(1, N))
    except CryptoError:
        raise
    except Exception as e:
        raise CryptoError(f"entropy source failed: {e}") from e


def validate_public_key(point: Optional[Point]) -> ec.EllipticCurvePublicKey:
    if point is None:
        raise InvalidPublicKey("point at infinity")
    x, y = point
    if not (0 <= x < P and 0 <= y < P):
        raise InvalidPublicKey("coordinate outside the field")
    if not on_curve(point):
        raise InvalidPublicKey("point is not on P-256")
    try:
        return ec.EllipticCurvePublicNumbers(x, y, CURVE).public_key()
    except ValueError as e:
        raise InvalidPublicKey(str(e)) from e


def derive_shared_secret(own: int, peer: Optional[Point]) -> bytes:
    peer_key = validate_public_key(peer)
    private = ec.derive_private_key(own, CURVE)
    return private.exchange(ec.ECDH(), peer_key)


def encode_point(point: Point) -> bytes:
    return point[0].to_bytes(32, "big") + point[1].to_bytes(32, "big")


def decode_point(data: bytes) -> Point:
    if len(data) != 64:
        raise InvalidPublicKey(f"point encoding is 64 octets, got {len(data)}")
    return int.from_bytes(data[:32], "big"), int.from_bytes(data[32:], "big")


# -----------------------------
# Tags
# -----------------------------
class TagAlgorithm(enum.Enum):
    cmac = "CMAC"
    hmac_sha256 = "HMAC-SHA256"


def cmac_tag(key: KeyLike, message: bytes) -> bytes:
    c = cmac.CMAC(algorithms.AES(_material(key)))
    c.update(message)
    return c.finalize()


def auth_tag(key: KeyLike, message: bytes, algorithm: TagAlgorithm = TagAlgorithm.cmac) -> bytes:
    if algorithm is TagAlgorithm.cmac:
        return cmac_tag(key, message)
    h = hmac.HMAC(_material(key), hashes.SHA256())
    h.update(message)
    return h.finalize()[:BLOCK]


def select_tag_algorithm(message_len: int, hardened: bool) -> TagAlgorithm:
    # CMAC stays the default up to two blocks
    if hardened and message_len > 2 * BLOCK:
        return TagAlgorithm.hmac_sha256
    return TagAlgorithm.cmac


def verify_tag(expected: bytes, received: bytes) -> bool:
    return constant_time.bytes_eq(expected, received)


def key_fingerprint(item: Union[SymmetricKey, bytes, Point]) -> str:
    if isinstance(item, SymmetricKey):
        data = item.material
    elif isinstance(item, tuple):
        data = encode_point(item)
    else:
        data = bytes(item)
    digest = hashes.Hash(hashes.SHA256())
    digest.update(data)
    return digest.finalize()[:8].hex()


# -----------------------------
# Key derivation
# -----------------------------
KDF_LABELS = {
    "PTK": KeyRole.ptk,
    "KCK": KeyRole.kck,
    "KMAC": KeyRole.kck,
    "GTKWRAP": KeyRole.gtk,
    "MK": KeyRole.mk,
    "STORE": KeyRole.store,
}


def derive_key(base: KeyLike, label: str, context: bytes, out_bits: KeyBits = KeyBits.k128,
               role: Optional[KeyRole] = None) -> SymmetricKey:
    """blockᵢ = CMAC(base, i ∥ label ∥ context), i from 1, truncated to out_bits."""
    if label not in KDF_LABELS:
        raise UsageError(f"unknown derivation label {label!r}")
    out_len = int(out_bits) // 8
    stream = b""
    counter = 1
    while len(stream) < out_len:
        stream += cmac_tag(base, bytes([counter]) + label.encode("ascii") + context)
        counter += 1
    return SymmetricKey(bits=out_bits, material=stream[:out_len], role=role or KDF_LABELS[label])


# -----------------------------
# CCM
# -----------------------------
class NonceGuard:
    """Remembers every (key, nonce) used for sealing."""

    def __init__(self):
        self._seen: set[tuple[str, bytes]] = set()

    def claim(self, key: KeyLike, nonce: bytes) -> None:
        entry = (key_fingerprint(_material(key)), bytes(nonce))
        if entry in self._seen:
            raise NonceReuse(f"nonce {nonce.hex()} already used under key {entry[0]}")
        self._seen.add(entry)

    def __len__(self):
        return len(self._seen)


def _ccm(key: KeyLike, cipher: Cipher, mic_len: int) -> AESCCM:
    if cipher == Cipher.camellia128_ccm:
        raise UnsupportedCipher("Camellia-128 CCM is not available in this build")
    material = _material(key)
    expected = 16 if cipher == Cipher.aes128_ccm else 32
    if len(material) != expected:
        raise UsageError(f"{cipher.name} needs a {expected * 8}-bit key")
    try:
        return AESCCM(material, tag_length=mic_len)
    except ValueError as e:
        raise AuthFailure(f"invalid MIC length {mic_len}") from e


def ccm_seal(key: KeyLike, nonce: bytes, aad: bytes, plaintext: bytes, *,
             mic_len: int = FRAME_MIC_LEN, cipher: Cipher = Cipher.aes128_ccm,
             guard: Optional[NonceGuard] = None) -> tuple[bytes, bytes]:
    if len(nonce) != NONCE_LEN:
        raise UsageError(f"CCM nonce must be {NONCE_LEN} octets")
    aead = _ccm(key, cipher, mic_len)
    if guard is not None:
        guard.claim(key, nonce)
    sealed = aead.encrypt(nonce, plaintext, aad)
    return sealed[:-mic_len], sealed[-mic_len:]


def ccm_open(key: KeyLike, nonce: bytes, aad: bytes, ciphertext: bytes, mic: bytes, *,
             cipher: Cipher = Cipher.aes128_ccm) -> bytes:
    if len(nonce) != NONCE_LEN:
        raise AuthFailure("bad nonce length")
    aead = _ccm(key, cipher, len(mic))
    try:
        return aead.decrypt(nonce, ciphertext + mic, aad)
    except InvalidTag as e:
        raise AuthFailure("MIC does not verify") from e


# -----------------------------
# Known-answer vectors
# -----------------------------
_CMAC_KEY_128 = "2b7e151628aed2a6abf7158809cf4f3c"
_CMAC_KEY_256 = "603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9810a30914dff4"
_CMAC_MSG = ("6bc1bee22e409f96e93d7e117393172a"
             "ae2d8a571e03ac9c9eb76fac45af8e51"
             "30c81c46a35ce411e5fbc1191a0a52ef"
             "f69f2445df4f9b17ad2b417be66c3710")

CMAC_VECTORS = [
    ("cmac-aes128-empty", _CMAC_KEY_128, "", "bb1d6929e95937287fa37d129b756746"),
    ("cmac-aes128-16", _CMAC_KEY_128, _CMAC_MSG[:32], "070a16b46b4d4144f79bdd9dd04a287c"),
    ("cmac-aes128-40", _CMAC_KEY_128, _CMAC_MSG[:80], "dfa66747de9ae63030ca32611497c827"),
    ("cmac-aes128-64", _CMAC_KEY_128, _CMAC_MSG, "51f0bebf7e3b9d92fc49741779363cfe"),
    ("cmac-aes256-empty", _CMAC_KEY_256, "", "028962f61b7bf89efc6b551f4667d983"),
    ("cmac-aes256-16", _CMAC_KEY_256, _CMAC_MSG[:32], "28a7023f452e8f82bd4bf28d8c37c35c"),
]

# (name, key, nonce, aad, plaintext, ciphertext, mic)
CCM_VECTORS = [
    ("ccm-13-octet-nonce-1", "c0c1c2c3c4c5c6c7c8c9cacbcccdcecf", "00000003020100a0a1a2a3a4a5",
     "0001020304050607", "08090a0b0c0d0e0f101112131415161718191a1b1c1d1e",
     "588c979a61c663d2f066d0c2c0f989806d5f6b61dac384", "17e8d12cfdf926e0"),
    ("ccm-13-octet-nonce-2", "c0c1c2c3c4c5c6c7c8c9cacbcccdcecf", "00000004030201a0a1a2a3a4a5",
     "0001020304050607", "08090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f",
     "72c91a36e135f8cf291ca894085c87e3cc15c439c9e43a3b", "a091d56e10400916"),
]

# (name, private scalar, expected public x, y)
SCALAR_VECTORS = [
    ("p256-mult-1", 1, GX, GY),
    ("p256-mult-2", 2,
     0x7CF27B188D034F7E8A52380304B51AC3C08969E277F21B35A60B48FC47669978,
     0x07775510DB8ED040293D9AC69F7430DBBA7DADE63CE982299E04B79D227873D1),
    ("p256-mult-cavs-0", 0x7d7dc5f71eb29ddaf80d6214632eeae03d9058af1fb6d22ed80badb62bc1a534,
     0xead218590119e8876b29146ff89ca61770c4edbbf97d38ce385ed281d8a6b230,
     0x28af61281fd35e2fa7002523acc85a429cb06ee6648325389f59edfce1405141),
]

# (name, own scalar, peer x, peer y, shared secret)
ECDH_VECTORS = [
    ("p256-ecdh-cavs-0", 0x7d7dc5f71eb29ddaf80d6214632eeae03d9058af1fb6d22ed80badb62bc1a534,
     0x700c48f77f56584c5cc632ca65640db91b6bacce3a4df6b42ce7cc838833d287,
     0xdb71e509e3fd9b060ddb20ba5c51dcc5948d46fbf640dfe0441782cab85fa4ac,
     "46fc62106420ff012e54a434fbdd2d25ccc5852060561e68040dd7778997bd7b"),
]


def _check(fn) -> bool:
    try:
        return bool(fn())
    except Exception:
        return False


def run_vectors() -> list[tuple[str, bool]]:
    results = []
    for name, key, msg, tag in CMAC_VECTORS:
        results.append((name, _check(lambda: cmac_tag(bytes.fromhex(key), bytes.fromhex(msg)).hex() == tag)))
    for name, key, nonce, aad, pt, ct, mic in CCM_VECTORS:
        def ccm_case(key=key, nonce=nonce, aad=aad, pt=pt, ct=ct, mic=mic):
            sealed = ccm_seal(bytes.fromhex(key), bytes.fromhex(nonce), bytes.fromhex(aad), bytes.fromhex(pt))
            opened = ccm_open(bytes.fromhex(key), bytes.fromhex(nonce), bytes.fromhex(aad),
                              bytes.fromhex(ct), bytes.fromhex(mic))
            return sealed == (bytes.fromhex(ct), bytes.fromhex(mic)) and opened == bytes.fromhex(pt)
        results.append((name, _check(ccm_case)))
    for name, scalar, x, y in SCALAR_VECTORS:
        results.append((name, _check(lambda: keypair_from_scalar(scalar).public == (x, y))))
    for name, own, x, y, z in ECDH_VECTORS:
        results.append((name, _check(lambda: derive_shared_secret(own, (x, y)).hex() == z)))
    return results
