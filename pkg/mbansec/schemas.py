# mbansec/schemas.py
from decimal import Decimal
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, model_validator

from config import Config

from .frame_codec import AssocProtocol, Cipher, SecurityLevel, ASSOCIATION_PROTOCOLS


class Profile(str, Enum):
    baseline = "baseline"
    hardened = "hardened"


class Topology(str, Enum):
    star = "T1"
    two_hop = "T2"
    peer_to_peer = "T3"


class DeviceClass(str, Enum):
    invasive = "Invasive"
    semi_invasive = "SemiInvasive"
    wearable = "Wearable"
    ambient = "Ambient"


class EnergyClass(str, Enum):
    passive = "E1"
    non_rechargeable = "E2"
    rechargeable = "E3"


class MemoryClass(str, Enum):
    m1 = "M1"
    m2 = "M2"
    m3 = "M3"


class ComputeClass(str, Enum):
    c1 = "C1"
    c2 = "C2"
    c3 = "C3"


class NodeRole(str, Enum):
    end_node = "EndNode"
    relay = "Relay"
    coordinator = "Coordinator"


class HubPolicy(BaseModel):
    profile: Profile = Profile.baseline
    max_ban_size: int = Config.BASELINE_MAX_BAN_SIZE
    min_level: SecurityLevel = SecurityLevel.unsecured
    allowed_protocols: List[AssocProtocol] = Field(default_factory=lambda: list(ASSOCIATION_PROTOCOLS))
    allowed_ciphers: List[Cipher] = Field(default_factory=lambda: [Cipher.aes128_ccm, Cipher.camellia128_ccm])
    acl_required: bool = False
    rate_limit: Optional[int] = None
    backup_hubs: List[int] = []
    liveness: bool = False
    replay_protection: bool = True
    touch_secure_exemption: bool = False

    @model_validator(mode="after")
    def baseline_is_the_standard(self):
        if self.profile == Profile.baseline:
            if self.max_ban_size != Config.BASELINE_MAX_BAN_SIZE:
                raise ValueError(f"baseline max_ban_size is fixed at {Config.BASELINE_MAX_BAN_SIZE}")
            if self.acl_required or self.backup_hubs:
                raise ValueError("baseline profile has no ACL and no backup hubs")
            if Cipher.aes256_ccm in self.allowed_ciphers:
                raise ValueError("AES-256 CCM is a hardened-profile cipher")
        if self.max_ban_size < 1:
            raise ValueError("max_ban_size must be positive")
        if self.rate_limit is not None and self.rate_limit < 1:
            raise ValueError("rate_limit must be positive")
        return self

    @property
    def hardened(self) -> bool:
        return self.profile == Profile.hardened

    @classmethod
    def baseline(cls, **overrides) -> "HubPolicy":
        return cls(profile=Profile.baseline, **overrides)

    @classmethod
    def hardened_default(cls, **overrides) -> "HubPolicy":
        values = dict(
            profile=Profile.hardened,
            max_ban_size=Config.HARDENED_MAX_BAN_SIZE,
            min_level=SecurityLevel.auth_enc,
            allowed_ciphers=[Cipher.aes128_ccm, Cipher.aes256_ccm, Cipher.camellia128_ccm],
            acl_required=True,
            rate_limit=Config.HARDENED_RATE_LIMIT,
            liveness=True,
            touch_secure_exemption=True,
        )
        values.update(overrides)
        return cls(**values)


class NodeSpec(BaseModel):
    name: str
    address: int = Field(ge=1, le=0xFFFF)
    device_class: DeviceClass = DeviceClass.wearable
    energy: EnergyClass = EnergyClass.non_rechargeable
    capacity: Decimal = Decimal(1000)
    recharge: Decimal = Decimal(0)
    memory: MemoryClass = MemoryClass.m2
    compute: ComputeClass = ComputeClass.c2
    roles: List[NodeRole] = [NodeRole.end_node]
    display: bool = False
    link_touch_secure: bool = False
    parent: Optional[str] = None
    peers: List[str] = []
    sink: Optional[str] = None
    protocol: AssocProtocol = AssocProtocol.preshared_mk
    level: SecurityLevel = SecurityLevel.auth_enc
    cipher: Cipher = Cipher.aes128_ccm
    password: Optional[str] = None
    group: Optional[str] = None
    traffic: bool = True

    @model_validator(mode="after")
    def resources_are_consistent(self):
        if self.energy == EnergyClass.passive and self.capacity != 0:
            self.capacity = Decimal(0)
        if self.energy != EnergyClass.rechargeable and self.recharge != 0:
            raise ValueError(f"{self.name}: only E3 nodes recharge")
        if self.compute == ComputeClass.c1:
            if not self.link_touch_secure:
                raise ValueError(f"{self.name}: C1 nodes need a touch-secure link")
            if self.level != SecurityLevel.unsecured:
                raise ValueError(f"{self.name}: C1 nodes run no cryptography, level must be 0")
        return self

    @property
    def is_coordinator(self) -> bool:
        return NodeRole.coordinator in self.roles

    @property
    def is_relay(self) -> bool:
        return NodeRole.relay in self.roles

    @property
    def runs_crypto(self) -> bool:
        return self.compute != ComputeClass.c1


class TrafficSpec(BaseModel):
    interval: int = Field(10, ge=1)
    payload: int = Field(8, ge=0, le=200)
    start: int = Field(5, ge=0)


class EnergyCosts(BaseModel):
    tx_base: Decimal = Decimal(2)
    tx_per_octet: Decimal = Decimal(1) / Decimal(16)
    rx: Decimal = Decimal(1)
    ecdh: Decimal = Decimal(20)
    ccm_block: Decimal = Decimal(1)
    idle: Decimal = Decimal("0.01")
    wake: Decimal = Decimal(5)
    hibernate: Decimal = Decimal(0)


class HubSettings(BaseModel):
    coordinator: str
    backups: List[str] = []
    preset: Optional[str] = None
    acl: str = "auto"
    max_ban_size: int = Config.HARDENED_MAX_BAN_SIZE
    rate_limit: int = Config.HARDENED_RATE_LIMIT
    min_level: SecurityLevel = SecurityLevel.auth_enc


class ScenarioConfig(BaseModel):
    name: str = "scenario"
    topology: Topology = Topology.star
    baseline_fallback: Optional[Topology] = None
    nodes: List[NodeSpec]
    hub: HubSettings
    traffic: TrafficSpec = TrafficSpec()
    energy: EnergyCosts = EnergyCosts()
    seed: int = Config.DEFAULT_SEED
    duration: int = Field(100, ge=1)

    def node(self, name: str) -> NodeSpec:
        for spec in self.nodes:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def by_address(self, address: int) -> Optional[NodeSpec]:
        for spec in self.nodes:
            if spec.address == address:
                return spec
        return None
