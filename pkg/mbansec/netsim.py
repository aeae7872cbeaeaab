# mbansec/netsim.py
"""
Deterministic tick-driven network simulator for the three MBAN use cases.

Each tick runs, in order: scheduled failures, energy (recharge and idle),
liveness and hub election (hardened), re-association of orphaned nodes,
adversary injections, one delivery per link, and new traffic.
"""
import configparser
import math
import random
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Callable, Optional, Union

import pandas as pd
from pydantic import ValidationError

from config import Config
from logger import setup_logger

from .assoc_protocols import (AssocProtocol, DisplayPanel, ProtocolSession, Role, SessionConfig, create_session,
                              resolve_roles, run_handshake)
from .channel import SecureChannel
from .crypto_suite import KeyBits, KeyPair, KeyRole, SymmetricKey, generate_keypair, key_fingerprint
from .errors import ConfigError, DecodeError, MbanError, NetworkDown, NotFound, UsageError
from .frame_codec import (Address, Cipher, Discard, DiscardReason, Frame, FrameType, SecurityLevel,
                          SecuritySuiteSelector, decode_frame, encode_frame, is_hub)
from .hub_access_control import AclEntry, AdmissionRequest, Authorization, Hub, RateLimiter
from .key_mgmt import KeyStore, erase_pair, install_master_key, pair_key, rotate_ptk
from .mac_security_fsm import ConnectionStatus, Event, NodeFsm, SecurityState, accept_inbound
from .schemas import (EnergyClass, EnergyCosts, HubPolicy, HubSettings, NodeRole, NodeSpec, Profile,
                      ScenarioConfig, Topology, TrafficSpec)

logger = setup_logger("NetSim")

TRACE_COLUMNS = ["tick", "src", "dst", "type", "level", "outcome", "reason"]
METRICS = ("delivered_frames", "rejected_frames", "battery", "state", "admitted_count",
           "unreachable", "hub", "trace_csv")
PRESETS = ("legacy_pump",)

DELIVERED = "Delivered"
DISCARDED = "Discarded"
DROPPED = "Dropped"

# origin(2) | length(1) | reading
RECORD_HEAD = 3
MAX_AGGREGATE = 255

_BOOLEANS = {"yes": True, "true": True, "on": True, "1": True,
             "no": False, "false": False, "off": False, "0": False}
_CIPHERS = {"aes128": Cipher.aes128_ccm, "aes256": Cipher.aes256_ccm, "camellia128": Cipher.camellia128_ccm}


# -----------------------------
# Scenario files
# -----------------------------
def _as_bool(value: str) -> bool:
    try:
        return _BOOLEANS[value.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {value!r}")


def _as_list(value: str) -> list:
    return [v.strip() for v in value.split(",") if v.strip()]


def _node_fields(raw: dict) -> dict:
    out = {}
    for key, value in raw.items():
        if key in ("display", "link_touch_secure", "traffic"):
            out[key] = _as_bool(value)
        elif key == "roles":
            out[key] = [NodeRole(r) for r in _as_list(value)]
        elif key == "peers":
            out[key] = _as_list(value)
        elif key == "protocol":
            out[key] = AssocProtocol.from_roman(value)
        elif key == "level":
            out[key] = SecurityLevel(int(value))
        elif key == "cipher":
            out[key] = _CIPHERS[value.strip().lower()]
        elif key in ("capacity", "recharge"):
            out[key] = Decimal(value)
        elif key == "address":
            out[key] = int(value, 0)
        else:
            out[key] = value.strip()
    return out


def load_scenario(text: str) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError("scenario", str(e)) from e
    for section in ("topology", "hub"):
        if not parser.has_section(section):
            raise ConfigError("scenario", f"[{section}] section")

    topo = dict(parser["topology"])
    nodes = []
    groups = defaultdict(list)
    for section in parser.sections():
        if not section.startswith("node."):
            continue
        base = section[len("node."):]
        raw = dict(parser[section])
        try:
            count = int(raw.pop("count", "1"))
            first = raw.pop("first_address", None)
            fields = _node_fields(raw)
        except (ValueError, KeyError) as e:
            raise ConfigError(base, str(e)) from e
        if first is None and count != 1:
            raise ConfigError(base, "first_address for a node group")
        for i in range(count):
            name = base if count == 1 else f"{base}-{i + 1:04d}"
            values = dict(fields, name=name)
            if count != 1 or first is not None:
                values["address"] = int(first, 0) + i
                values["group"] = base
            groups[base].append(values)
            nodes.append(values)

    # a parent naming a group spreads members round-robin over it
    for values in nodes:
        parent = values.get("parent")
        if parent in groups and len(groups[parent]) > 1:
            members = groups[parent]
            index = len([v for v in nodes[:nodes.index(values)] if v.get("parent") == parent])
            values["parent"] = members[index % len(members)]["name"]

    try:
        hub_raw = dict(parser["hub"])
        hub = HubSettings(
            coordinator=hub_raw.get("coordinator", ""),
            backups=_as_list(hub_raw.get("backups", "")),
            preset=hub_raw.get("preset") or None,
            acl=hub_raw.get("acl", "auto"),
            max_ban_size=int(hub_raw.get("max_ban_size", Config.HARDENED_MAX_BAN_SIZE)),
            rate_limit=int(hub_raw.get("rate_limit", Config.HARDENED_RATE_LIMIT)),
            min_level=SecurityLevel(int(hub_raw.get("min_level", "2"))),
        )
        traffic = TrafficSpec(**dict(parser["traffic"])) if parser.has_section("traffic") else TrafficSpec()
        energy = EnergyCosts(**{k: Decimal(v) for k, v in parser["energy"].items()}) \
            if parser.has_section("energy") else EnergyCosts()
        config = ScenarioConfig(
            name=topo.get("name", "scenario"),
            topology=Topology(topo.get("kind", "T1")),
            baseline_fallback=Topology(topo["baseline_fallback"]) if topo.get("baseline_fallback") else None,
            nodes=[NodeSpec(**values) for values in nodes],
            hub=hub,
            traffic=traffic,
            energy=energy,
            seed=int(topo.get("seed", Config.DEFAULT_SEED)),
            duration=int(topo.get("duration", "100")),
        )
    except ValidationError as e:
        raise ConfigError("scenario", str(e)) from e
    except ValueError as e:
        raise ConfigError("scenario", str(e)) from e
    if config.hub.preset is not None and config.hub.preset not in PRESETS:
        raise ConfigError("hub", f"unknown preset {config.hub.preset!r}")
    check_topology(config)
    return config


def load_scenario_file(path: str) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return load_scenario(f.read())
    except OSError as e:
        raise ConfigError(path, f"unreadable scenario file: {e.strerror}") from e


_PAIR_TEMPLATE = """
[topology]
name = pair-{roman}
kind = T1
duration = 20

[hub]
coordinator = hub
min_level = 2

[node.hub]
address = 0xFF00
roles = Coordinator
energy = E3
capacity = 100000
recharge = 10
display = yes
protocol = {roman}
cipher = {cipher}

[node.sensor]
address = 0x0001
energy = E3
capacity = 100000
recharge = 10
display = yes
parent = hub
protocol = {roman}
cipher = {cipher}
"""


def pair_scenario(protocol: AssocProtocol, cipher: str = "aes128") -> ScenarioConfig:
    """A sensor and its hub, both with displays, associating with `protocol`."""
    return load_scenario(_PAIR_TEMPLATE.format(roman=AssocProtocol(protocol).roman, cipher=cipher))


def check_topology(config: ScenarioConfig) -> None:
    names = [n.name for n in config.nodes]
    addresses = [n.address for n in config.nodes]
    if len(set(names)) != len(names) or len(set(addresses)) != len(addresses):
        raise ConfigError(config.name, "unique node names and addresses")
    by_name = {n.name: n for n in config.nodes}

    coordinators = [n for n in config.nodes if n.is_coordinator and n.name not in config.hub.backups]
    if not coordinators:
        raise ConfigError(config.name, "a coordinator")
    if config.topology == Topology.star and len(coordinators) != 1:
        raise ConfigError(config.name, f"T1 star needs exactly one coordinator, found {len(coordinators)}")
    if config.hub.coordinator not in by_name or not by_name[config.hub.coordinator].is_coordinator:
        raise ConfigError("hub", f"coordinator {config.hub.coordinator!r} is not a coordinator node")
    for name in config.hub.backups:
        if name not in by_name:
            raise ConfigError("hub", f"unknown backup hub {name!r}")

    hubs = {config.hub.coordinator, *config.hub.backups}
    for node in config.nodes:
        if (node.name in hubs) != is_hub(node.address):
            raise ConfigError(node.name, "hub addresses are 0xFF00 and above, node addresses below")
        for ref in [node.parent, node.sink, *node.peers]:
            if ref is not None and ref not in by_name:
                raise ConfigError(node.name, f"unknown node {ref!r}")
        if node.peers and config.topology != Topology.peer_to_peer:
            raise ConfigError(node.name, "peer links need the T3 topology")
        if node.parent is not None:
            parent = by_name[node.parent]
            if config.topology == Topology.star and not parent.is_coordinator:
                raise ConfigError(node.name, "T1 star nodes hang off the coordinator")
            if parent.is_relay and parent.parent is not None and not by_name[parent.parent].is_coordinator:
                raise ConfigError(node.name, "more than two hops to the coordinator")
        if node.energy == EnergyClass.passive and _power_source(node, by_name) is None:
            raise ConfigError(node.name, "a powered parent for an E1 node")


def _power_source(node: NodeSpec, by_name: dict) -> Optional[NodeSpec]:
    seen = set()
    current = node
    while current.energy == EnergyClass.passive:
        if current.parent is None or current.parent in seen:
            return None
        seen.add(current.name)
        current = by_name[current.parent]
    return current


# -----------------------------
# Energy
# -----------------------------
def _frac(value: Decimal) -> Fraction:
    return Fraction(value)


class EnergyLedger:
    """Exact per-node energy accounting; E1 nodes hold no charge."""

    def __init__(self, costs: EnergyCosts):
        self.costs = costs
        self.balance: dict = {}
        self.capacity: dict = {}
        self.recharge_rate: dict = {}
        self.initial: dict = {}
        self.debited: dict = defaultdict(Fraction)
        self.recharged: dict = defaultdict(Fraction)

    def register(self, spec: NodeSpec) -> None:
        if spec.energy == EnergyClass.passive:
            return
        self.capacity[spec.address] = _frac(spec.capacity)
        self.balance[spec.address] = _frac(spec.capacity)
        self.initial[spec.address] = _frac(spec.capacity)
        self.recharge_rate[spec.address] = _frac(spec.recharge)

    def has_battery(self, addr: Address) -> bool:
        return addr in self.balance

    def tx_cost(self, octets: int) -> Fraction:
        return _frac(self.costs.tx_base) + _frac(self.costs.tx_per_octet) * octets

    def ccm_cost(self, octets: int) -> Fraction:
        return _frac(self.costs.ccm_block) * max(1, math.ceil(octets / 16))

    @property
    def rx_cost(self) -> Fraction:
        return _frac(self.costs.rx)

    @property
    def ecdh_cost(self) -> Fraction:
        return _frac(self.costs.ecdh)

    @property
    def idle_cost(self) -> Fraction:
        return _frac(self.costs.idle)

    @property
    def wake_cost(self) -> Fraction:
        return _frac(self.costs.wake)

    def debit(self, addr: Address, amount: Fraction) -> bool:
        """Returns False once the node is empty."""
        if addr not in self.balance:
            return True
        taken = min(self.balance[addr], amount)
        self.balance[addr] -= taken
        self.debited[addr] += taken
        return self.balance[addr] > 0

    def recharge(self, addr: Address) -> None:
        rate = self.recharge_rate.get(addr, Fraction(0))
        if rate and addr in self.balance:
            added = min(rate, self.capacity[addr] - self.balance[addr])
            self.balance[addr] += added
            self.recharged[addr] += added

    def set(self, addr: Address, units: Fraction) -> None:
        if addr not in self.balance:
            raise NotFound(f"node {addr} has no battery")
        # BatterySet resets the accounting baseline
        self.balance[addr] = Fraction(units)
        self.initial[addr] = Fraction(units)
        self.debited[addr] = Fraction(0)
        self.recharged[addr] = Fraction(0)

    def empty(self, addr: Address) -> bool:
        return addr in self.balance and self.balance[addr] <= 0


# -----------------------------
# Events and trace
# -----------------------------
@dataclass(frozen=True)
class NodeFailure:
    addr: Address
    tick: int


@dataclass(frozen=True)
class LinkJam:
    link: tuple
    start: int
    end: int


@dataclass(frozen=True)
class BatterySet:
    addr: Address
    units: Union[int, Fraction]
    tick: int = 0


SimEvent = Union[NodeFailure, LinkJam, BatterySet]


@dataclass(frozen=True)
class TraceRow:
    tick: int
    src: Address
    dst: Address
    type: str
    level: str
    outcome: str
    reason: str = ""


@dataclass
class InFlight:
    octets: bytes
    src: Address
    dst: Address
    legit: bool = True


@dataclass
class NodeRuntime:
    spec: NodeSpec
    fsm: NodeFsm
    store: KeyStore = field(default_factory=KeyStore)
    channels: dict = field(default_factory=dict)
    suites: dict = field(default_factory=dict)
    alive: bool = True
    hub: Optional[Address] = None
    last_beacon: int = 0
    rejected: bool = False
    buffer: deque = field(default_factory=deque)
    limiter: Optional[RateLimiter] = None
    received: int = 0

    @property
    def address(self) -> Address:
        return self.spec.address


@dataclass
class SimResult:
    trace: list
    final: dict


Observer = Callable[[tuple, bytes, bool], None]


# -----------------------------
# Simulation
# -----------------------------
class Simulation:
    def __init__(self, config: ScenarioConfig, profile: Union[Profile, str] = Profile.baseline,
                 seed: Optional[int] = None):
        self.config = config
        self.profile = Profile(profile)
        self.seed = config.seed if seed is None else seed
        self.rng = random.Random(f"{self.seed}:sim")
        self.topology = self._effective_topology()
        self.legacy = config.hub.preset == "legacy_pump" and self.profile == Profile.baseline

        self.nodes: dict = {}
        for spec in sorted(config.nodes, key=lambda n: n.address):
            self.nodes[spec.address] = NodeRuntime(spec=spec, fsm=NodeFsm(spec.address))
        self.by_name = {rt.spec.name: rt.address for rt in self.nodes.values()}
        self.primary = self.by_name[config.hub.coordinator]
        self.policy = self._policy()
        self.hub = Hub(address=self.primary, policy=self.policy)
        for rt in self.nodes.values():
            rt.limiter = RateLimiter(self.policy.rate_limit)

        self.ledger = EnergyLedger(config.energy)
        for rt in self.nodes.values():
            self.ledger.register(rt.spec)

        self.tick = 0
        self.trace: list = []
        self.queues: dict = defaultdict(deque)
        self.pending_events: list = []
        self.jams: list = []
        self.injected: dict = defaultdict(list)
        self.adversary_log: list = []
        self.observers: list = []
        self.unreachable: set = set()
        self.last_heard: dict = {}
        self.network_down = False
        self.hub_failed_at: Optional[int] = None
        self.hub_processed: Counter = Counter()
        self.legit_to_hub: Counter = Counter()
        self.legit_lost: Counter = Counter()
        self.dead_at: dict = {}

        self._identity_keys: dict = {}
        self._serials: dict = {}
        if self.policy.acl_required and config.hub.acl == "auto":
            self._register_acl()
        self._setup_network()

    # ---- configuration ----
    def _effective_topology(self) -> Topology:
        topo = self.config.topology
        if topo == Topology.peer_to_peer and self.profile == Profile.baseline:
            if self.config.baseline_fallback is None:
                logger.error(f"{self.config.name}: peer-to-peer links are outside the baseline standard")
                raise ConfigError(self.config.name, "T3 peer links need the hardened profile or baseline_fallback")
            return self.config.baseline_fallback
        return topo

    def _policy(self) -> HubPolicy:
        backups = [self.by_name[n] for n in self.config.hub.backups]
        if self.profile == Profile.baseline:
            return HubPolicy.baseline(replay_protection=not (self.config.hub.preset == "legacy_pump"))
        return HubPolicy.hardened_default(
            max_ban_size=self.config.hub.max_ban_size,
            rate_limit=self.config.hub.rate_limit,
            min_level=self.config.hub.min_level,
            backup_hubs=backups,
        )

    def hubs(self) -> list:
        return [self.primary, *self.policy.backup_hubs]

    def suite_for(self, spec: NodeSpec) -> SecuritySuiteSelector:
        level, protocol, cipher = spec.level, spec.protocol, spec.cipher
        if self.legacy and spec.runs_crypto:
            level, protocol = SecurityLevel.unsecured, AssocProtocol.preshared_mk
        if self.policy.hardened and spec.runs_crypto:
            level = max(level, self.policy.min_level)
        return SecuritySuiteSelector(level=level, protocol=protocol, cipher=cipher,
                                     auth_control_frames=self.policy.hardened and spec.runs_crypto)

    # ---- provisioning ----
    def identity_keypair(self, addr: Address) -> KeyPair:
        if addr not in self._identity_keys:
            self._identity_keys[addr] = generate_keypair(random.Random(f"{self.seed}:id:{addr}"))
        return self._identity_keys[addr]

    def _serial(self, addr: Address) -> bytes:
        if addr not in self._serials:
            self._serials[addr] = random.Random(f"{self.seed}:serial:{addr}").randbytes(16)
        return self._serials[addr]

    def preshared_key(self, a: Address, b: Address, bits: KeyBits = KeyBits.k128) -> SymmetricKey:
        # one pairing key per node towards the hub side, whichever hub is active
        lo, hi = pair_key(a, b)
        owner = f"{lo}:hub" if is_hub(hi) else f"{lo}:{hi}"
        rng = random.Random(f"{self.seed}:psk:{owner}:{int(bits)}")
        return SymmetricKey(bits=bits, material=rng.randbytes(int(bits) // 8), role=KeyRole.mk)

    def password(self, a: Address, b: Address) -> str:
        node = self.nodes[min(a, b)].spec
        return node.password or f"pw-{self.seed}-{min(a, b)}"

    def expected_identity(self, addr: Address) -> str:
        spec = self.nodes[addr].spec
        if not spec.runs_crypto:
            return key_fingerprint(self._serial(addr))
        sss = self.suite_for(spec)
        if sss.protocol == AssocProtocol.preshared_mk:
            return key_fingerprint(self.preshared_key(addr, self.primary, _bits(sss)))
        return key_fingerprint(self.identity_keypair(addr).public)

    def _register_acl(self) -> None:
        for rt in self.nodes.values():
            if is_hub(rt.address):
                continue
            entry = AclEntry(rt.address, self.expected_identity(rt.address), Authorization.sensor_read)
            self.hub.acl[rt.address] = entry
        logger.info(f"{self.config.name}: {len(self.hub.acl)} ACL entries registered")

    def session_configs(self, a: Address, b: Address, sss: SecuritySuiteSelector,
                        entropy: Optional[random.Random] = None) -> tuple:
        """(initiator config, responder config) for an association between a and b."""
        ini, resp = resolve_roles(a, b)
        entropy = entropy or self.rng
        common = dict(sss=sss, hardened=self.policy.hardened, entropy=entropy)
        configs = {}
        panel = DisplayPanel()
        for own, peer in ((ini, resp), (resp, ini)):
            cfg = SessionConfig(own=own, peer=peer, **common)
            proto = sss.protocol
            if proto in (AssocProtocol.preshared_mk, AssocProtocol.ptk_creation):
                cfg.master_key = self.preshared_key(own, peer, _bits(sss))
            elif proto == AssocProtocol.password:
                cfg.password = self.password(own, peer)
            elif proto == AssocProtocol.display:
                cfg.display = panel
                cfg.has_display = self.nodes[own].spec.display
            if proto in (AssocProtocol.unauthenticated, AssocProtocol.public_key_hidden,
                         AssocProtocol.password, AssocProtocol.display):
                cfg.static_keypair = self.identity_keypair(own)
            if proto == AssocProtocol.public_key_hidden and own == ini:
                cfg.peer_public = self.identity_keypair(resp).public
            configs[own] = cfg
        return configs[ini], configs[resp]

    # ---- association ----
    def _debit(self, addr: Address, amount: Fraction) -> None:
        if not self.ledger.debit(addr, amount) and addr not in self.dead_at:
            self._kill(addr, self.tick, "battery empty")

    def _handshake(self, a: Address, b: Address, sss: SecuritySuiteSelector) -> Optional[tuple]:
        cfg_i, cfg_r = self.session_configs(a, b, sss)
        try:
            ini = create_session(Role.initiator, sss.protocol, cfg_i)
            resp = create_session(Role.responder, sss.protocol, cfg_r)
        except ConfigError as e:
            logger.warning(f"t={self.tick} association {a}<->{b} not possible: {e}")
            return None
        trace = run_handshake(ini, resp)
        for entry in trace:
            self._debit(entry.sender, self.ledger.tx_cost(entry.size))
            self._debit(entry.recipient, self.ledger.rx_cost)
        if ini.keypair is not None:
            self._debit(ini.own, self.ledger.ecdh_cost)
            self._debit(resp.own, self.ledger.ecdh_cost)
        if not (ini.activated and resp.activated):
            return None
        return ini, resp

    def _establish_pair(self, a: Address, b: Address, sss: SecuritySuiteSelector) -> Optional[tuple]:
        """Association plus PTK creation; returns the responder-side session of the association."""
        done = self._handshake(a, b, sss)
        if done is None:
            return None
        ini, resp = done
        stores = {ini.own: self.nodes[ini.own].store, resp.own: self.nodes[resp.own].store}
        for session in (ini, resp):
            install_master_key(stores[session.own], (a, b), session.result.mk, sss.protocol.roman)

        ptk_sss = SecuritySuiteSelector(level=sss.level, protocol=AssocProtocol.ptk_creation,
                                        cipher=sss.cipher, auth_control_frames=sss.auth_control_frames)
        cfg_i, cfg_r = self.session_configs(a, b, ptk_sss)
        cfg_i.master_key = ini.result.mk
        cfg_r.master_key = resp.result.mk
        p_ini = create_session(Role.initiator, AssocProtocol.ptk_creation, cfg_i)
        p_resp = create_session(Role.responder, AssocProtocol.ptk_creation, cfg_r)
        for entry in run_handshake(p_ini, p_resp):
            self._debit(entry.sender, self.ledger.tx_cost(entry.size))
            self._debit(entry.recipient, self.ledger.rx_cost)
        if not (p_ini.activated and p_resp.activated):
            return None
        for session in (p_ini, p_resp):
            rotate_ptk(stores[session.own], (a, b), session.result.initiator_nonce, session.result.responder_nonce)
        return ini, resp

    def _observed_identity(self, node: Address, hub_session: Optional[ProtocolSession]) -> str:
        spec = self.nodes[node].spec
        if hub_session is None or not spec.runs_crypto:
            return key_fingerprint(self._serial(node))
        if hub_session.protocol == AssocProtocol.preshared_mk:
            return key_fingerprint(hub_session.result.mk)
        return key_fingerprint(hub_session.peer_public)

    def _open_channels(self, a: Address, b: Address, sss: SecuritySuiteSelector) -> None:
        for own, peer in ((a, b), (b, a)):
            rt = self.nodes[own]
            rt.suites[peer] = sss
            rt.channels[peer] = SecureChannel(own, peer, rt.store, sss)

    def _close_channels(self, a: Address, b: Address) -> None:
        for own, peer in ((a, b), (b, a)):
            rt = self.nodes[own]
            rt.channels.pop(peer, None)
            rt.suites.pop(peer, None)
            try:
                erase_pair(rt.store, (own, peer))
            except NotFound:
                pass

    def associate(self, addr: Address, tick: Optional[int] = None) -> ConnectionStatus:
        """Full join of one node with the active hub: association, PTK, admission."""
        tick = self.tick if tick is None else tick
        rt = self.nodes[addr]
        hub = self.hub.active
        if hub is None or self.network_down:
            return ConnectionStatus.rejected_hub_down
        spec = rt.spec
        sss = self.suite_for(spec)
        touch = spec.link_touch_secure and not spec.runs_crypto
        if not self.powered(addr):
            return ConnectionStatus.rejected_not_reachable

        hub_session = None
        if spec.runs_crypto:
            done = self._establish_pair(addr, hub, sss)
            if done is None:
                rt.fsm.fire(Event.assoc_aborted, tick)
                self._close_channels(addr, hub)
                rt.rejected = True
                return ConnectionStatus.rejected_unauthorized
            hub_session = done[1] if done[1].own == hub else done[0]
        rt.fsm.fire(Event.assoc_success, tick)
        rt.fsm.fire(Event.ptk_established, tick)

        request = AdmissionRequest(addr, sss, self._observed_identity(addr, hub_session), touch)
        status = self.hub.admit(request, tick)
        if status != ConnectionStatus.accepted:
            self.hub.release_node(addr, tick)
            rt.fsm.fire(Event.disassoc_done, tick)
            self._close_channels(addr, hub)
            rt.rejected = True
            return status
        if spec.runs_crypto:
            self._open_channels(addr, hub, sss)
        else:
            rt.suites[hub] = sss
            if spec.parent is not None:
                self.nodes[self.by_name[spec.parent]].suites[addr] = sss
        rt.fsm.fire(Event.connection_assigned, tick)
        rt.hub = hub
        rt.last_beacon = tick
        rt.rejected = False
        self.last_heard[addr] = tick
        self.unreachable.discard(addr)
        return status

    def _link_peers(self, tick: int) -> None:
        if self.topology != Topology.peer_to_peer:
            return
        for rt in self.nodes.values():
            for name in rt.spec.peers:
                peer = self.by_name[name]
                a, b = pair_key(rt.address, peer)
                if b in self.nodes[a].channels or is_hub(a) or is_hub(b):
                    continue
                if any(self.nodes[x].fsm.state != SecurityState.connected for x in (a, b)):
                    continue
                sss = self.suite_for(self.nodes[a].spec)
                if self._establish_pair(a, b, sss) is not None:
                    self._open_channels(a, b, sss)
                    logger.info(f"t={tick} peer link {a}<->{b} secured with protocol {sss.protocol.roman}")

    def _setup_network(self) -> None:
        for rt in self.nodes.values():
            if is_hub(rt.address):
                continue
            self.associate(rt.address, 0)
        self._link_peers(0)
        logger.info(f"{self.config.name} [{self.profile.value}] ready: {len(self.hub.admitted)} admitted, "
                    f"topology {self.topology.value}")

    def hub_handshake(self, claimed: Address, sss: SecuritySuiteSelector, entropy: random.Random,
                      keypair: Optional[KeyPair] = None) -> ConnectionStatus:
        """
        Association attempt by an outside party claiming `claimed`, followed by
        admission. Only protocols that need no pre-shared secret can complete.
        """
        hub = self.hub.active
        if hub is None or self.network_down or not self.powered(hub):
            return ConnectionStatus.rejected_hub_down
        own = SessionConfig(own=claimed, peer=hub, sss=sss, hardened=self.policy.hardened, entropy=entropy,
                            static_keypair=keypair or generate_keypair(entropy))
        theirs = SessionConfig(own=hub, peer=claimed, sss=sss, hardened=self.policy.hardened, entropy=entropy,
                               static_keypair=self.identity_keypair(hub))
        configs = {claimed: own, hub: theirs}
        ini, resp = resolve_roles(claimed, hub)
        try:
            sessions = {ini: create_session(Role.initiator, sss.protocol, configs[ini]),
                        resp: create_session(Role.responder, sss.protocol, configs[resp])}
        except ConfigError:
            return ConnectionStatus.rejected_unauthorized
        for entry in run_handshake(sessions[ini], sessions[resp]):
            if entry.recipient == hub:
                self._debit(hub, self.ledger.rx_cost)
        hub_side = sessions[hub]
        if not hub_side.activated:
            return ConnectionStatus.rejected_unauthorized
        identity = key_fingerprint(hub_side.peer_public) if hub_side.peer_public is not None \
            else key_fingerprint(hub_side.result.mk)
        return self.hub.admit(AdmissionRequest(claimed, sss, identity), self.tick)

    # ---- liveness and power ----
    def powered(self, addr: Address) -> bool:
        rt = self.nodes[addr]
        if not rt.alive:
            return False
        if rt.spec.energy == EnergyClass.passive:
            parent = rt.spec.parent
            return parent is not None and self.powered(self.by_name[parent])
        return not self.ledger.empty(addr)

    def _kill(self, addr: Address, tick: int, why: str) -> None:
        rt = self.nodes[addr]
        rt.alive = False
        self.dead_at.setdefault(addr, tick)
        logger.info(f"t={tick} node {addr} down: {why}")
        if addr in self.hubs() and addr == self.hub.active:
            self.hub_failed_at = tick
            if not self.policy.hardened:
                self._fail_over(addr, tick)

    def _fail_over(self, hub: Address, tick: int) -> None:
        try:
            winner = self.hub.hub_failed(hub, tick)
        except NetworkDown as e:
            self.network_down = True
            logger.warning(f"t={tick} network down: {e}")
            return
        self.hub_failed_at = None
        logger.info(f"t={tick} active hub is now {winner}")

    def _liveness(self, tick: int) -> None:
        timeout = Config.BEACON_INTERVAL * Config.LIVENESS_MISSED_BEACONS
        active = self.hub.active
        if self.hub_failed_at is not None and tick - self.hub_failed_at >= timeout:
            self._fail_over(active, tick)
            active = self.hub.active

        if active is not None and self.powered(active) and tick % Config.BEACON_INTERVAL == 0:
            for rt in self.nodes.values():
                if rt.hub == active and rt.spec.runs_crypto and self.powered(rt.address) \
                        and not self._jammed((active, rt.address), tick):
                    rt.last_beacon = tick
                    self._debit(rt.address, self.ledger.rx_cost)
                    # poll answer
                    self._debit(rt.address, self.ledger.tx_cost(0))
                    self.last_heard[rt.address] = tick

        for rt in self.nodes.values():
            if rt.hub is None or not rt.spec.runs_crypto or not self.powered(rt.address):
                continue
            if tick - rt.last_beacon > timeout:
                old_hub = rt.hub
                rt.fsm.fire(Event.peer_unreachable, tick)
                self._close_channels(rt.address, old_hub)
                rt.hub = None
                for child in self._children(rt.address):
                    self.nodes[child].fsm.fire(Event.peer_unreachable, tick)
                    self.nodes[child].hub = None

        if active is not None and self.powered(active):
            for node in sorted(self.hub.admitted):
                if tick - self.last_heard.get(node, tick) > timeout:
                    self.hub.report_unreachable(node, tick)
                    self.unreachable.add(node)
                    self._close_channels(node, active)
                    logger.info(f"t={tick} hub {active} reports node {node} unreachable")

    def _children(self, addr: Address) -> list:
        name = self.nodes[addr].spec.name
        return [rt.address for rt in self.nodes.values() if rt.spec.parent == name and not rt.spec.runs_crypto]

    def _reassociate(self, tick: int) -> None:
        active = self.hub.active
        if active is None or not self.powered(active):
            return
        for rt in self.nodes.values():
            if is_hub(rt.address) or rt.hub is not None or rt.rejected or not self.powered(rt.address):
                continue
            if rt.fsm.state != SecurityState.orphan or not rt.fsm.history:
                continue
            if not rt.spec.runs_crypto:
                parent = self.nodes[self.by_name[rt.spec.parent]]
                if parent.spec.runs_crypto and parent.hub != active:
                    continue
            self.associate(rt.address, tick)

    # ---- events ----
    def inject(self, event: SimEvent) -> "Simulation":
        if isinstance(event, LinkJam):
            for addr in event.link:
                if addr not in self.nodes:
                    raise NotFound(f"unknown address {addr}")
            self.jams.append(event)
            return self
        if event.addr not in self.nodes:
            raise NotFound(f"unknown address {event.addr}")
        if isinstance(event, BatterySet) and not self.ledger.has_battery(event.addr):
            raise NotFound(f"node {event.addr} has no battery")
        self.pending_events.append(event)
        return self

    def inject_raw(self, tick: int, octets: bytes, src: Address, dst: Address) -> None:
        """Adversary frames bypass link scheduling and are processed at `tick`."""
        if tick <= self.tick:
            raise UsageError(f"tick {tick} is not in the future (now {self.tick})")
        self.injected[tick].append(InFlight(bytes(octets), src, dst, legit=False))

    def _apply_events(self, tick: int) -> None:
        due = [e for e in self.pending_events if e.tick == tick]
        self.pending_events = [e for e in self.pending_events if e.tick != tick]
        for event in due:
            if isinstance(event, NodeFailure):
                self._kill(event.addr, tick, "failure injected")
            elif isinstance(event, BatterySet):
                self.ledger.set(event.addr, Fraction(event.units))

    def _jammed(self, link: tuple, tick: int) -> bool:
        for jam in self.jams:
            if jam.start <= tick < jam.end and set(jam.link) == set(link):
                return True
        return False

    # ---- frames ----
    def _send(self, src: Address, dst: Address, frame: Frame) -> None:
        octets = encode_frame(frame)
        self._debit(src, self.ledger.tx_cost(len(octets)))
        if frame.level != SecurityLevel.unsecured:
            self._debit(src, self.ledger.ccm_cost(len(frame.payload)))
        touch = self.nodes[src].spec.link_touch_secure or self.nodes[dst].spec.link_touch_secure
        for observer in self.observers:
            observer((src, dst), octets, touch)
        self.queues[(src, dst)].append(InFlight(octets, src, dst))

    def _lost(self, msg: InFlight, tick: int) -> None:
        if msg.legit and is_hub(msg.dst):
            self.legit_lost[tick] += 1

    def _record(self, tick: int, msg: InFlight, frame: Optional[Frame], outcome: str, reason: str = "") -> None:
        row = TraceRow(
            tick, msg.src, msg.dst,
            frame.frame_type.name if frame is not None else "unknown",
            str(int(frame.level)) if frame is not None else "",
            outcome, reason,
        )
        self.trace.append(row)
        if not msg.legit:
            self.adversary_log.append(row)

    def _deliver(self, tick: int, msg: InFlight) -> None:
        dst = msg.dst
        rt = self.nodes.get(dst)
        if msg.legit and is_hub(dst):
            self.legit_to_hub[tick] += 1
        if rt is None or not self.powered(dst):
            self._lost(msg, tick)
            self._record(tick, msg, _peek(msg.octets), DROPPED, DiscardReason.peer_dead.value)
            return
        if self._jammed((msg.src, dst), tick):
            self._record(tick, msg, _peek(msg.octets), DROPPED, DiscardReason.jammed.value)
            return
        to_hub = dst == self.hub.active
        if not rt.limiter.allow(msg.src, tick):
            self._record(tick, msg, _peek(msg.octets), DISCARDED, DiscardReason.rate_limited.value)
            return
        if to_hub:
            if self.hub_processed[tick] >= Config.HUB_CAPACITY:
                self._lost(msg, tick)
                self._record(tick, msg, _peek(msg.octets), DISCARDED, DiscardReason.hub_overloaded.value)
                return
            self.hub_processed[tick] += 1

        self._debit(dst, self.ledger.rx_cost)
        try:
            frame = decode_frame(msg.octets)
        except DecodeError:
            self._record(tick, msg, None, DISCARDED, DiscardReason.malformed.value)
            return
        if frame.frame_type == FrameType.wakeup:
            if self.policy.hardened and rt.spec.runs_crypto and frame.level == SecurityLevel.unsecured:
                self._record(tick, msg, frame, DISCARDED, DiscardReason.level_policy.value)
                return
            self._debit(dst, self.ledger.wake_cost)
            self._record(tick, msg, frame, DELIVERED)
            return
        if frame.level != SecurityLevel.unsecured:
            self._debit(dst, self.ledger.ccm_cost(len(frame.payload)))

        src = frame.sender
        channel = rt.channels.get(src)
        suite = rt.suites.get(src)
        if is_hub(dst):
            state = SecurityState.connected if src in self.hub.admitted and suite is not None \
                else SecurityState.orphan
        elif is_hub(src):
            state = rt.fsm.state
        else:
            state = SecurityState.connected if suite is not None else SecurityState.orphan
        try:
            verdict = accept_inbound(state, frame, channel, suite)
        except MbanError as e:
            logger.debug(f"t={tick} frame {src}->{dst} rejected: {e}")
            self._record(tick, msg, frame, DISCARDED, DiscardReason.auth_failure.value)
            return
        if isinstance(verdict, Discard):
            self._record(tick, msg, frame, DISCARDED, verdict.reason.value)
            return
        self._record(tick, msg, frame, DELIVERED)
        rt.received += 1
        self._on_payload(tick, rt, src, verdict.payload)

    def _on_payload(self, tick: int, rt: NodeRuntime, src: Address, payload: bytes) -> None:
        if rt.spec.is_relay and not self.nodes[src].spec.runs_crypto:
            rt.buffer.append(src.to_bytes(2, "big") + bytes([len(payload)]) + payload)
            return
        if rt.address != self.hub.active:
            return
        if self.nodes[src].spec.is_relay:
            pos = 0
            while pos + RECORD_HEAD <= len(payload):
                origin = int.from_bytes(payload[pos:pos + 2], "big")
                size = payload[pos + 2]
                self.last_heard[origin] = tick
                pos += RECORD_HEAD + size
        self.last_heard[src] = tick

    def _sink(self, rt: NodeRuntime) -> Optional[Address]:
        spec = rt.spec
        if not spec.runs_crypto:
            return self.by_name[spec.parent] if spec.parent else rt.hub
        if self.topology == Topology.peer_to_peer and spec.sink is not None:
            peer = self.by_name[spec.sink]
            if peer in rt.channels:
                return peer
        return rt.hub

    def _traffic(self, tick: int) -> None:
        traffic = self.config.traffic
        for rt in self.nodes.values():
            if is_hub(rt.address) or not self.powered(rt.address):
                continue
            if rt.fsm.state != SecurityState.connected or rt.hub is None:
                continue
            if rt.spec.is_relay and rt.buffer:
                self._forward(rt)
            if not rt.spec.traffic or tick < traffic.start or (tick + rt.address) % traffic.interval:
                continue
            sink = self._sink(rt)
            if sink is None:
                continue
            if self.network_down:
                self.trace.append(TraceRow(tick, rt.address, sink, FrameType.data.name, "", DROPPED,
                                           DiscardReason.no_route.value))
                continue
            reading = self.rng.randbytes(traffic.payload)
            if rt.spec.runs_crypto:
                channel = rt.channels.get(sink)
                if channel is None:
                    continue
                self._send(rt.address, sink, channel.seal(FrameType.data, reading))
            else:
                self._send(rt.address, sink, Frame(sender=rt.address, recipient=sink, frame_type=FrameType.data,
                                                   level=SecurityLevel.unsecured, payload=reading))

    def _forward(self, rt: NodeRuntime) -> None:
        channel = rt.channels.get(rt.hub)
        if channel is None:
            return
        payload = b""
        while rt.buffer and len(payload) + len(rt.buffer[0]) <= MAX_AGGREGATE:
            payload += rt.buffer.popleft()
        if payload:
            self._send(rt.address, rt.hub, channel.seal(FrameType.data, payload))

    # ---- main loop ----
    def step(self, tick: int) -> None:
        self.tick = tick
        self._apply_events(tick)
        for rt in self.nodes.values():
            if not rt.alive or not self.ledger.has_battery(rt.address):
                continue
            self.ledger.recharge(rt.address)
            self._debit(rt.address, self.ledger.idle_cost)
        if self.policy.liveness:
            self._liveness(tick)
            self._reassociate(tick)
            self._link_peers(tick)
        for msg in self.injected.pop(tick, []):
            self._deliver(tick, msg)
        for link in sorted(self.queues):
            queue = self.queues[link]
            if queue:
                self._deliver(tick, queue.popleft())
        self._traffic(tick)

    def run(self, until: int) -> SimResult:
        for tick in range(self.tick + 1, until + 1):
            self.step(tick)
        return SimResult(trace=list(self.trace), final=self.snapshot())

    def snapshot(self) -> dict:
        return {
            "tick": self.tick,
            "profile": self.profile.value,
            "hub": self.hub.active,
            "admitted": len(self.hub.admitted),
            "delivered": self.count(DELIVERED),
            "states": {addr: rt.fsm.state.value for addr, rt in self.nodes.items()},
            "battery": {addr: self.ledger.balance[addr] for addr in self.ledger.balance},
        }

    # ---- observation ----
    def count(self, outcome: str, reason: Optional[str] = None) -> int:
        return sum(1 for r in self.trace if r.outcome == outcome and (reason is None or r.reason == reason))

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame([[r.tick, r.src, r.dst, r.type, r.level, r.outcome, r.reason] for r in self.trace],
                            columns=TRACE_COLUMNS)

    def trace_csv(self) -> str:
        return self.trace_frame().to_csv(index=False)

    def legit_loss(self, start: int, end: int) -> Fraction:
        """Share of legitimate hub-bound frames lost in [start, end)."""
        offered = sum(self.legit_to_hub[t] for t in range(start, end))
        if not offered:
            return Fraction(0)
        lost = sum(self.legit_lost[t] for t in range(start, end))
        return Fraction(lost, offered)


def _bits(sss: SecuritySuiteSelector) -> KeyBits:
    return KeyBits.k256 if sss.cipher == Cipher.aes256_ccm else KeyBits.k128


def _peek(octets: bytes) -> Optional[Frame]:
    try:
        return decode_frame(octets)
    except DecodeError:
        return None


# -----------------------------
# Module-level operations
# -----------------------------
def run(sim: Simulation, until: int) -> SimResult:
    return sim.run(until)


def inject(sim: Simulation, event: SimEvent) -> Simulation:
    return sim.inject(event)


def observe(sim: Simulation, metric: str, arg=None):
    if metric not in METRICS:
        raise UsageError(f"unknown metric {metric!r}; one of {', '.join(METRICS)}")
    if metric == "delivered_frames":
        return sim.count(DELIVERED)
    if metric == "rejected_frames":
        return sum(1 for r in sim.trace if r.outcome != DELIVERED and (arg is None or r.reason == arg))
    if metric == "admitted_count":
        return len(sim.hub.admitted)
    if metric == "unreachable":
        return sorted(sim.unreachable)
    if metric == "hub":
        return sim.hub.active
    if metric == "trace_csv":
        return sim.trace_csv()
    if arg not in sim.nodes:
        raise NotFound(f"unknown address {arg}")
    if metric == "battery":
        return sim.ledger.balance.get(arg, Fraction(0))
    return sim.nodes[arg].fsm.state
