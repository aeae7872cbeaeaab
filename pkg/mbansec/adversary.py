# mbansec/adversary.py
"""
Attack library run against a live Simulation.

An Adversary sees traffic only as octet strings handed to `observe` on the
links it sits on, and acts only through `Simulation.inject_raw` or through
handshake messages it relays. Each attack class evaluates its own success
predicate and returns an AttackReport.
"""
import enum
import math
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Optional

import pandas as pd

from logger import setup_logger

from .assoc_protocols import (AssocProtocol, DisplayPanel, Role, SessionConfig, advance, create_session,
                              decode_handshake, encode_handshake, resolve_roles, run_handshake)
from .crypto_suite import KeyBits, KeyRole, SymmetricKey, generate_keypair
from .errors import ConfigError, DecodeError, UsageError
from .frame_codec import (Address, Cipher, Frame, FrameType, SecurityLevel, SecuritySuiteSelector, decode_frame,
                          encode_frame, is_hub)
from .mac_security_fsm import ConnectionStatus
from .netsim import DELIVERED, Simulation
from .schemas import EnergyClass, Profile, ScenarioConfig

logger = setup_logger("Adversary")

REPORT_COLUMNS = ["kind", "profile", "attempts", "successes", "success_rate", "side_metric"]

STRANGER_BASE = 0x7F00
WAKEUP_SOURCE = 0x7FFD
FLOOD_SOURCE = 0x7FFE
WAKEUP_RATE = 100
INVALID_RATE = 200
REPLAYS_PER_TICK = 4
LOSS_THRESHOLD = Fraction(1, 2)


class AttackKind(enum.Enum):
    eavesdrop = "Eavesdrop"
    replay = "Replay"
    impersonate = "Impersonate"
    mitm_handshake = "MitmHandshake"
    dos_wakeup_flood = "DosWakeupFlood"
    dos_invalid_frame_flood = "DosInvalidFrameFlood"

    @classmethod
    def parse(cls, text: str) -> "AttackKind":
        key = text.strip().lower().replace("-", "_")
        for kind in cls:
            if key in (kind.name, kind.value.lower()):
                return kind
        aliases = {"mitm": cls.mitm_handshake, "wakeup": cls.dos_wakeup_flood, "flood": cls.dos_invalid_frame_flood}
        if key in aliases:
            return aliases[key]
        raise UsageError(f"unknown attack kind {text!r}")


PASSIVE_KINDS = (AttackKind.eavesdrop,)


@dataclass(frozen=True)
class AdversaryModel:
    """`position` None means every link is observed."""
    position: Optional[frozenset] = None
    can_inject: bool = True
    touching: bool = False
    knows: frozenset = frozenset()
    target: Optional[Address] = None


@dataclass
class AttackReport:
    kind: AttackKind
    profile: Profile
    attempts: int
    successes: int
    side_metrics: dict = field(default_factory=dict)
    side_metric_name: str = ""

    def __post_init__(self):
        if not 0 <= self.successes <= self.attempts:
            raise ValueError(f"{self.successes} successes out of {self.attempts} attempts")

    @property
    def success_rate(self) -> float:
        return self.successes / self.attempts if self.attempts else 0.0

    @property
    def side_metric(self):
        return self.side_metrics.get(self.side_metric_name, "")

    def row(self) -> dict:
        return {"kind": self.kind.value, "profile": self.profile.value, "attempts": self.attempts,
                "successes": self.successes, "success_rate": self.success_rate, "side_metric": _render(self.side_metric)}


def _render(value) -> str:
    if isinstance(value, Fraction):
        return str(value) if value.denominator != 1 else str(value.numerator)
    return "" if value is None else str(value)


@dataclass(frozen=True)
class CapturedFrame:
    tick: int
    link: tuple
    octets: bytes
    touch_secure: bool


class Adversary:
    def __init__(self, model: AdversaryModel):
        self.model = model
        self.captured: list = []
        self.listening = True

    def sees(self, link: tuple) -> bool:
        if self.model.position is None:
            return True
        return tuple(link) in self.model.position or tuple(reversed(link)) in self.model.position

    def observe(self, link: tuple, octets: bytes, touch_secure: bool, tick: int = 0) -> None:
        if self.listening and self.sees(link):
            self.captured.append(CapturedFrame(tick, tuple(link), bytes(octets), touch_secure))

    def attach(self, sim: Simulation) -> None:
        sim.observers.append(lambda link, octets, touch: self.observe(link, octets, touch, sim.tick))

    def readable_octets(self, capture: CapturedFrame) -> int:
        """Payload octets readable in clear from one captured frame."""
        if capture.touch_secure and not self.model.touching:
            return 0
        try:
            frame = decode_frame(capture.octets)
        except DecodeError:
            return 0
        if frame.level == SecurityLevel.auth_enc:
            return 0
        return len(frame.payload)


def preset_profiles() -> dict:
    """Named suites standing in for device archetypes."""
    return {
        "legacy_pump": SecuritySuiteSelector(level=SecurityLevel.unsecured, protocol=AssocProtocol.preshared_mk,
                                             cipher=Cipher.aes128_ccm),
        "level2": SecuritySuiteSelector(level=SecurityLevel.auth_enc, protocol=AssocProtocol.preshared_mk,
                                        cipher=Cipher.aes128_ccm, auth_control_frames=True),
    }


class _OwnPanel(DisplayPanel):
    """The adversary's own display: it never refuses its values."""

    def confirm(self, addr: Address, value: int) -> bool:
        return True


# -----------------------------
# Attacks
# -----------------------------
class Attack:
    kind: AttackKind
    side_metric_name = ""

    def __init__(self, scenario: ScenarioConfig, adversary: AdversaryModel, profile: Profile, seed: int,
                 attempts: Optional[int] = None):
        if self.kind not in PASSIVE_KINDS and not adversary.can_inject:
            raise ConfigError(self.kind.value, "an adversary able to inject")
        self.scenario = scenario
        self.model = adversary
        self.profile = Profile(profile)
        self.seed = seed
        self.attempts = attempts

    def simulation(self) -> Simulation:
        return Simulation(self.scenario, self.profile, self.seed)

    def report(self, attempts: int, successes: int, **side) -> AttackReport:
        report = AttackReport(self.kind, self.profile, attempts, successes, side, self.side_metric_name)
        logger.info(f"{self.kind.value} [{self.profile.value}] {successes}/{attempts} side={side}")
        return report

    def target_node(self, sim: Simulation) -> Address:
        if self.model.target is not None:
            if self.model.target not in sim.nodes:
                raise ConfigError(self.kind.value, f"target {self.model.target} in the scenario")
            return self.model.target
        for addr, rt in sim.nodes.items():
            if not is_hub(addr) and rt.spec.runs_crypto:
                return addr
        raise ConfigError(self.kind.value, "a node running cryptography")

    def run(self) -> AttackReport:
        raise NotImplementedError


class EavesdropAttack(Attack):
    kind = AttackKind.eavesdrop
    side_metric_name = "plaintext_octets"

    def run(self) -> AttackReport:
        sim = self.simulation()
        adversary = Adversary(self.model)
        adversary.attach(sim)
        sim.run(self.scenario.duration)
        data = [c for c in adversary.captured if _frame_type(c.octets) == FrameType.data]
        recovered = [adversary.readable_octets(c) for c in data]
        total = sum(len(decode_frame(c.octets).payload) for c in data)
        return self.report(len(data), sum(1 for n in recovered if n > 0),
                           plaintext_octets=sum(recovered), payload_octets=total)


class ReplayAttack(Attack):
    kind = AttackKind.replay
    side_metric_name = "not_fresh"

    def run(self) -> AttackReport:
        attempts = self.attempts or 1000
        sim = self.simulation()
        adversary = Adversary(self.model)
        adversary.attach(sim)
        capture_until = max(2, self.scenario.duration // 4)
        sim.run(capture_until)
        adversary.listening = False
        frames = [c for c in adversary.captured if _frame_type(c.octets) == FrameType.data]
        if self.model.target is not None:
            frames = [c for c in frames if c.link[1] == self.model.target]
        if not frames:
            raise ConfigError(self.kind.value, "captured data frames to replay")

        # leave time for the originals to be delivered first
        first = capture_until + 5
        for i in range(attempts):
            capture = frames[i % len(frames)]
            sim.inject_raw(first + i // REPLAYS_PER_TICK, capture.octets, capture.link[0], capture.link[1])
        sim.run(first + (attempts - 1) // REPLAYS_PER_TICK)
        delivered = sum(1 for r in sim.adversary_log if r.outcome == DELIVERED)
        not_fresh = sum(1 for r in sim.adversary_log if r.reason == "NotFresh")
        return self.report(attempts, delivered, not_fresh=not_fresh, captured=len(frames))


class ImpersonateAttack(Attack):
    kind = AttackKind.impersonate
    side_metric_name = "forged_admissions"

    def run(self) -> AttackReport:
        attempts = self.attempts or 10
        sim = self.simulation()
        entropy = random.Random(f"{self.seed}:impersonate")
        level = SecurityLevel.unsecured if sim.profile == Profile.baseline else sim.policy.min_level
        sss = SecuritySuiteSelector(level=level, protocol=AssocProtocol.unauthenticated, cipher=Cipher.aes128_ccm,
                                    auth_control_frames=sim.policy.hardened)
        accepted = 0
        statuses = {}
        for i in range(attempts):
            claimed = self.model.target if self.model.target is not None else STRANGER_BASE + i
            status = sim.hub_handshake(claimed, sss, entropy)
            statuses[status.value] = statuses.get(status.value, 0) + 1
            if status == ConnectionStatus.accepted:
                accepted += 1
                sim.hub.release_node(claimed, sim.tick, "impostor released")
        return self.report(attempts, accepted, forged_admissions=accepted, statuses=statuses)


class MitmHandshakeAttack(Attack):
    """
    Sits between a node and the hub during association, running its own
    session towards each side. Succeeds when both honest ends activate and
    the adversary holds both master keys.
    """
    kind = AttackKind.mitm_handshake
    side_metric_name = "keys_recovered"

    def __init__(self, *args, protocol: Optional[AssocProtocol] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.protocol = protocol

    def run(self) -> AttackReport:
        attempts = self.attempts or 100
        sim = self.simulation()
        node = self.target_node(sim)
        hub = sim.hub.active
        sss = sim.suite_for(sim.nodes[node].spec)
        if self.protocol is not None:
            sss = replace(sss, protocol=self.protocol)
        if sss.protocol not in (AssocProtocol.preshared_mk, AssocProtocol.unauthenticated,
                                AssocProtocol.public_key_hidden, AssocProtocol.password, AssocProtocol.display):
            raise UsageError(f"protocol {sss.protocol.roman} is not an association protocol")
        successes = 0
        for i in range(attempts):
            if self._attempt(sim, node, hub, sss, random.Random(f"{self.seed}:mitm:{i}")):
                successes += 1
        return self.report(attempts, successes, keys_recovered=successes, protocol=sss.protocol.roman)

    def _attempt(self, sim: Simulation, a: Address, b: Address, sss: SecuritySuiteSelector,
                 entropy: random.Random) -> bool:
        ini_addr, resp_addr = resolve_roles(a, b)
        cfg_i, cfg_r = sim.session_configs(a, b, sss, entropy)
        honest_i = create_session(Role.initiator, sss.protocol, cfg_i)
        honest_r = create_session(Role.responder, sss.protocol, cfg_r)

        # fake responder towards the initiator, fake initiator towards the responder
        fake_r = create_session(Role.responder, sss.protocol, self._forged(sim, resp_addr, ini_addr, sss, entropy))
        fake_i = create_session(Role.initiator, sss.protocol, self._forged(sim, ini_addr, resp_addr, sss, entropy))
        held = {}

        def relay(data: bytes) -> Optional[bytes]:
            msg = decode_handshake(data)
            if msg.sender == ini_addr:
                _, out = advance(fake_r, msg, data)
                if msg.phase.name == "request":
                    held["response"] = out
                    _, out = advance(fake_i)
                    return _first(out)
                return _first(held.pop("activate", []))
            _, out = advance(fake_i, msg, data)
            held["activate"] = out
            return _first(held.pop("response", []))

        run_handshake(honest_i, honest_r, relay=relay)
        if not (honest_i.activated and honest_r.activated and fake_i.activated and fake_r.activated):
            return False
        return (fake_r.result.mk.material == honest_i.result.mk.material
                and fake_i.result.mk.material == honest_r.result.mk.material)

    def _forged(self, sim: Simulation, own: Address, peer: Address, sss: SecuritySuiteSelector,
                entropy: random.Random) -> SessionConfig:
        knows = self.model.knows
        cfg = SessionConfig(own=own, peer=peer, sss=sss, hardened=sim.policy.hardened, entropy=entropy)
        proto = sss.protocol
        if proto == AssocProtocol.preshared_mk:
            bits = KeyBits.k256 if sss.cipher == Cipher.aes256_ccm else KeyBits.k128
            if "MK" in knows:
                cfg.master_key = sim.preshared_key(own, peer, bits)
            else:
                cfg.master_key = SymmetricKey(bits, entropy.randbytes(int(bits) // 8), KeyRole.mk)
        elif proto == AssocProtocol.password:
            cfg.password = sim.password(own, peer) if "password" in knows else f"guess-{entropy.randrange(10 ** 6)}"
        elif proto == AssocProtocol.public_key_hidden:
            ini, resp = resolve_roles(own, peer)
            if own == resp:
                cfg.static_keypair = sim.identity_keypair(own) if "responder_private" in knows \
                    else generate_keypair(entropy)
            else:
                cfg.peer_public = sim.identity_keypair(resp).public
        elif proto == AssocProtocol.display:
            cfg.display = _OwnPanel()
            cfg.has_display = True
        return cfg


class WakeupFloodAttack(Attack):
    """Keeps a node awake with unauthenticated wake-up frames until its battery runs out."""
    kind = AttackKind.dos_wakeup_flood
    side_metric_name = "time_to_empty"

    def victim(self, sim: Simulation) -> Address:
        if self.model.target is not None:
            return self.target_node(sim)
        for addr, rt in sim.nodes.items():
            if not is_hub(addr) and rt.spec.energy == EnergyClass.non_rechargeable:
                return addr
        return self.target_node(sim)

    def run(self) -> AttackReport:
        rate = self.attempts or WAKEUP_RATE
        sim = self.simulation()
        victim = self.victim(sim)
        if not sim.ledger.has_battery(victim):
            raise ConfigError(self.kind.value, f"a battery-powered victim, {victim} has none")
        battery = sim.ledger.balance[victim]
        horizon = self.scenario.duration
        flood = encode_frame(Frame(sender=WAKEUP_SOURCE, recipient=victim, frame_type=FrameType.wakeup,
                                   level=SecurityLevel.unsecured))
        for tick in range(1, horizon + 1):
            for _ in range(rate):
                sim.inject_raw(tick, flood, WAKEUP_SOURCE, victim)
        sim.run(horizon)
        died = sim.dead_at.get(victim)
        return self.report(1, 1 if died is not None else 0,
                           time_to_empty=died, survival=died if died is not None else horizon,
                           battery_at_start=battery,
                           predicted=predicted_time_to_empty(sim, battery, rate))


def predicted_time_to_empty(sim: Simulation, battery: Fraction, rate: int) -> int:
    """Closed form for a silent, non-recharging victim under an unthrottled flood."""
    per_tick = sim.ledger.idle_cost + rate * (sim.ledger.rx_cost + sim.ledger.wake_cost)
    return math.ceil(Fraction(battery) / per_tick)


class InvalidFrameFloodAttack(Attack):
    """Floods the active hub with frames it has no keys for."""
    kind = AttackKind.dos_invalid_frame_flood
    side_metric_name = "legit_loss"

    def run(self) -> AttackReport:
        rate = self.attempts or INVALID_RATE
        sim = self.simulation()
        hub = sim.hub.active
        entropy = random.Random(f"{self.seed}:flood")
        horizon = self.scenario.duration
        for tick in range(1, horizon + 1):
            for i in range(rate):
                junk = Frame(sender=FLOOD_SOURCE, recipient=hub, frame_type=FrameType.data,
                             level=SecurityLevel.auth_enc, key_id=entropy.randrange(256),
                             payload=entropy.randbytes(8), mic=entropy.randbytes(8))
                sim.inject_raw(tick, encode_frame(junk), FLOOD_SOURCE, hub)
        sim.run(horizon)
        loss = sim.legit_loss(1, horizon + 1)
        hub_dead = hub in sim.dead_at
        success = loss >= LOSS_THRESHOLD or hub_dead
        return self.report(1, 1 if success else 0, legit_loss=loss, hub_dead=hub_dead)


ATTACKS = {
    AttackKind.eavesdrop: EavesdropAttack,
    AttackKind.replay: ReplayAttack,
    AttackKind.impersonate: ImpersonateAttack,
    AttackKind.mitm_handshake: MitmHandshakeAttack,
    AttackKind.dos_wakeup_flood: WakeupFloodAttack,
    AttackKind.dos_invalid_frame_flood: InvalidFrameFloodAttack,
}


def _frame_type(octets: bytes) -> Optional[FrameType]:
    try:
        return decode_frame(octets).frame_type
    except DecodeError:
        return None


def _first(messages: list) -> Optional[bytes]:
    return encode_handshake(messages[0]) if messages else None


def run_attack(scenario: ScenarioConfig, kind: AttackKind, adversary: AdversaryModel, seed: int = 0,
               profile: Profile = Profile.baseline, attempts: Optional[int] = None,
               protocol: Optional[AssocProtocol] = None) -> AttackReport:
    cls = ATTACKS[AttackKind(kind)]
    extra = {"protocol": protocol} if cls is MitmHandshakeAttack else {}
    return cls(scenario, adversary, profile, seed, attempts, **extra).run()


def compare_profiles(scenario: ScenarioConfig, kinds: Iterable[AttackKind], seed: int = 0,
                     adversary: Optional[AdversaryModel] = None,
                     profiles: Iterable[Profile] = (Profile.baseline, Profile.hardened),
                     attempts: Optional[int] = None) -> list:
    """Report rows, one per (kind, profile), in the order given."""
    adversary = adversary or AdversaryModel()
    return [run_attack(scenario, kind, adversary, seed, profile, attempts)
            for kind in kinds for profile in profiles]


def report_frame(reports: Iterable[AttackReport]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in reports], columns=REPORT_COLUMNS)


def write_report_csv(reports: Iterable[AttackReport], path: Optional[str] = None) -> str:
    text = report_frame(reports).to_csv(index=False)
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    return text
