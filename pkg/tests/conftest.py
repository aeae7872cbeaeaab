"""Shared fixtures: bundled scenarios and honest handshake pairs."""
import random
from pathlib import Path

import pytest

from mbansec.assoc_protocols import DisplayPanel, Role, SessionConfig, create_session
from mbansec.crypto_suite import KeyBits, KeyRole, SymmetricKey, generate_keypair
from mbansec.frame_codec import AssocProtocol, SecuritySuiteSelector
from mbansec.netsim import load_scenario_file

ROOT = Path(__file__).resolve().parent.parent
SCENARIO_DIR = ROOT / "data" / "scenarios"

SENSOR = 0x0001
HUB = 0xFF00


@pytest.fixture(scope="session")
def scenario_dir() -> Path:
    return SCENARIO_DIR


@pytest.fixture
def pancreas():
    return load_scenario_file(str(SCENARIO_DIR / "pancreas.scn"))


@pytest.fixture
def lcp():
    return load_scenario_file(str(SCENARIO_DIR / "lcp.scn"))


@pytest.fixture(scope="session")
def neural_dust():
    return load_scenario_file(str(SCENARIO_DIR / "neural_dust.scn"))


def pair_configs(protocol: AssocProtocol, seed: int = 0, hardened: bool = False,
                 sss: SecuritySuiteSelector = None) -> tuple:
    """Initiator and responder configs for an honest sensor/hub association."""
    sss = sss or SecuritySuiteSelector(protocol=protocol)
    rng = random.Random(f"pair:{seed}")
    ini = SessionConfig(own=SENSOR, peer=HUB, sss=sss, hardened=hardened, entropy=random.Random(f"{seed}:i"))
    resp = SessionConfig(own=HUB, peer=SENSOR, sss=sss, hardened=hardened, entropy=random.Random(f"{seed}:r"))
    if protocol in (AssocProtocol.preshared_mk, AssocProtocol.ptk_creation):
        mk = SymmetricKey(KeyBits.k128, rng.randbytes(16), KeyRole.mk)
        ini.master_key = resp.master_key = mk
    elif protocol == AssocProtocol.public_key_hidden:
        resp.static_keypair = generate_keypair(rng)
        ini.peer_public = resp.static_keypair.public
    elif protocol == AssocProtocol.password:
        ini.password = resp.password = f"pin-{seed}"
    elif protocol == AssocProtocol.display:
        panel = DisplayPanel()
        ini.display = resp.display = panel
        ini.has_display = resp.has_display = True
    return ini, resp


def honest_sessions(protocol: AssocProtocol, seed: int = 0, hardened: bool = False) -> tuple:
    ini_cfg, resp_cfg = pair_configs(protocol, seed, hardened)
    return (create_session(Role.initiator, protocol, ini_cfg),
            create_session(Role.responder, protocol, resp_cfg))


@pytest.fixture
def make_sessions():
    return honest_sessions
