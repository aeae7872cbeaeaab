# mbansec/errors.py
import enum


class MbanError(Exception):
    """Root of every error raised by mbansec."""


class EncodeError(MbanError):
    pass


class DecodeKind(enum.Enum):
    truncated = "Truncated"
    malformed = "Malformed"


class DecodeError(MbanError):
    def __init__(self, kind: DecodeKind, detail: str = ""):
        self.kind = kind
        super().__init__(f"{kind.value}: {detail}" if detail else kind.value)


class SequenceExhausted(MbanError):
    """Both sequence counters are at their maximum; the key must be retired."""


class CryptoError(MbanError):
    pass


class InvalidPublicKey(CryptoError):
    pass


class AuthFailure(CryptoError):
    pass


class NonceReuse(CryptoError):
    pass


class UnsupportedCipher(CryptoError):
    pass


class UsageError(MbanError):
    pass


class KeyConflict(MbanError):
    pass


class MissingMasterKey(MbanError):
    pass


class NotSecured(MbanError):
    def __init__(self, member):
        self.member = member
        super().__init__(f"node {member} has no active PTK with the hub")


class NotFound(MbanError):
    pass


class ConfigError(MbanError):
    def __init__(self, subject, missing: str = ""):
        self.subject = subject
        self.missing = missing
        super().__init__(f"{subject}: {missing}" if missing else str(subject))


class DisplayUnavailable(ConfigError):
    def __init__(self, subject="V", missing="display"):
        super().__init__(subject, missing)


class Unauthorized(MbanError):
    pass


class NetworkDown(MbanError):
    pass


class RegistryError(MbanError):
    pass


class TraceabilityError(MbanError):
    pass
