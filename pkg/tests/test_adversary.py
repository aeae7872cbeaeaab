"""Attack library: each attack against the baseline and the hardened profile."""
from fractions import Fraction

import pandas as pd
import pytest

from mbansec.adversary import (
    REPORT_COLUMNS, WAKEUP_RATE, Adversary, AdversaryModel, AttackKind, AttackReport, compare_profiles,
    predicted_time_to_empty, preset_profiles, report_frame, run_attack, write_report_csv,
)
from mbansec.errors import ConfigError, UsageError
from mbansec.frame_codec import AssocProtocol, SecurityLevel
from mbansec.netsim import Simulation, pair_scenario
from mbansec.schemas import Profile

EVERYWHERE = AdversaryModel()


class TestKinds:
    @pytest.mark.parametrize("text,kind", [
        ("replay", AttackKind.replay),
        ("MitmHandshake", AttackKind.mitm_handshake),
        ("mitm", AttackKind.mitm_handshake),
        ("dos-wakeup-flood", AttackKind.dos_wakeup_flood),
    ])
    def test_parse(self, text, kind):
        assert AttackKind.parse(text) == kind

    def test_parse_unknown(self):
        with pytest.raises(UsageError):
            AttackKind.parse("teleport")

    def test_active_attack_needs_injection(self, lcp):
        with pytest.raises(ConfigError):
            run_attack(lcp, AttackKind.replay, AdversaryModel(can_inject=False))

    def test_report_bounds(self):
        with pytest.raises(ValueError):
            AttackReport(AttackKind.replay, Profile.baseline, attempts=1, successes=2)


class TestAdversaryView:
    def test_position_limits_what_is_seen(self):
        adversary = Adversary(AdversaryModel(position=frozenset({(1, 0xFF00)})))
        adversary.observe((0xFF00, 1), b"\x00", False)
        adversary.observe((2, 0xFF00), b"\x00", False)
        assert len(adversary.captured) == 1

    def test_touch_secure_links_are_opaque(self, pancreas):
        sim = Simulation(pancreas, Profile.baseline)
        adversary = Adversary(EVERYWHERE)
        adversary.attach(sim)
        sim.run(30)
        assert adversary.captured
        capture = adversary.captured[0]
        opaque = type(capture)(capture.tick, capture.link, capture.octets, True)
        assert adversary.readable_octets(opaque) == 0


class TestEavesdrop:
    def test_baseline_legacy_pump_leaks(self, pancreas):
        report = run_attack(pancreas, AttackKind.eavesdrop, EVERYWHERE, profile=Profile.baseline)
        assert report.successes > 0
        assert report.side_metric > 0

    def test_hardened_encrypts(self, pancreas):
        report = run_attack(pancreas, AttackKind.eavesdrop, EVERYWHERE, profile=Profile.hardened)
        assert report.attempts > 0
        assert report.successes == 0


class TestReplay:
    def test_baseline_accepts_replays(self, pancreas):
        report = run_attack(pancreas, AttackKind.replay, EVERYWHERE, profile=Profile.baseline, attempts=40)
        assert report.success_rate == 1.0

    def test_hardened_rejects_every_replay(self, pancreas):
        report = run_attack(pancreas, AttackKind.replay, EVERYWHERE, profile=Profile.hardened, attempts=40)
        assert report.successes == 0
        assert report.side_metrics["not_fresh"] > 0


class TestImpersonate:
    def test_baseline_admits_strangers(self, lcp):
        report = run_attack(lcp, AttackKind.impersonate, EVERYWHERE, attempts=5)
        assert report.successes == 5

    def test_acl_refuses_strangers(self, lcp):
        report = run_attack(lcp, AttackKind.impersonate, EVERYWHERE, profile=Profile.hardened, attempts=5)
        assert report.successes == 0


class TestMitm:
    def test_unauthenticated_protocol_falls(self):
        scenario = pair_scenario(AssocProtocol.unauthenticated)
        report = run_attack(scenario, AttackKind.mitm_handshake, EVERYWHERE, attempts=5)
        assert report.successes == 5

    @pytest.mark.parametrize("protocol", [
        AssocProtocol.preshared_mk, AssocProtocol.public_key_hidden, AssocProtocol.password, AssocProtocol.display,
    ], ids=lambda p: p.roman)
    def test_authenticated_protocols_hold(self, protocol):
        report = run_attack(pair_scenario(protocol), AttackKind.mitm_handshake, EVERYWHERE, attempts=5)
        assert report.successes == 0

    def test_leaked_master_key(self):
        model = AdversaryModel(knows=frozenset({"MK"}))
        report = run_attack(pair_scenario(AssocProtocol.preshared_mk), AttackKind.mitm_handshake, model, attempts=3)
        assert report.successes == 3

    def test_protocol_override(self):
        report = run_attack(pair_scenario(AssocProtocol.preshared_mk), AttackKind.mitm_handshake, EVERYWHERE,
                            attempts=2, protocol=AssocProtocol.unauthenticated)
        assert report.side_metrics["protocol"] == "II"
        assert report.successes == 2

    def test_ptk_creation_is_not_an_association(self):
        with pytest.raises(UsageError):
            run_attack(pair_scenario(AssocProtocol.preshared_mk), AttackKind.mitm_handshake, EVERYWHERE,
                       attempts=1, protocol=AssocProtocol.ptk_creation)


class TestDenialOfService:
    def test_wakeup_flood_drains_baseline_pacer(self, lcp):
        report = run_attack(lcp, AttackKind.dos_wakeup_flood, EVERYWHERE, profile=Profile.baseline)
        assert report.successes == 1
        assert report.side_metric <= report.side_metrics["predicted"]

    def test_rate_limit_saves_the_pacer(self, lcp):
        report = run_attack(lcp, AttackKind.dos_wakeup_flood, EVERYWHERE, profile=Profile.hardened)
        assert report.successes == 0
        assert report.side_metrics["survival"] == lcp.duration

    def test_predicted_time_to_empty(self, lcp):
        sim = Simulation(lcp)
        # 0.01 idle + 100 * (1 rx + 5 wake) per tick
        assert predicted_time_to_empty(sim, Fraction(3000), WAKEUP_RATE) == 5

    def test_invalid_flood(self):
        scenario = pair_scenario(AssocProtocol.preshared_mk)
        baseline = run_attack(scenario, AttackKind.dos_invalid_frame_flood, EVERYWHERE, profile=Profile.baseline)
        hardened = run_attack(scenario, AttackKind.dos_invalid_frame_flood, EVERYWHERE, profile=Profile.hardened)
        assert baseline.successes == 1
        assert hardened.successes == 0
        assert hardened.side_metric < Fraction(1, 2)


class TestReports:
    def test_compare_profiles_order(self, lcp):
        reports = compare_profiles(lcp, [AttackKind.impersonate], attempts=2)
        assert [(r.kind, r.profile) for r in reports] == [
            (AttackKind.impersonate, Profile.baseline), (AttackKind.impersonate, Profile.hardened)]

    def test_csv(self, lcp, tmp_path):
        reports = compare_profiles(lcp, [AttackKind.impersonate], attempts=2)
        path = tmp_path / "report.csv"
        text = write_report_csv(reports, str(path))
        frame = pd.read_csv(path)
        assert list(frame.columns) == REPORT_COLUMNS
        assert frame["success_rate"].tolist() == [1.0, 0.0]
        assert text == report_frame(reports).to_csv(index=False)


def test_preset_profiles():
    presets = preset_profiles()
    assert presets["legacy_pump"].level == SecurityLevel.unsecured
    assert presets["level2"].level == SecurityLevel.auth_enc
    assert presets["level2"].auth_control_frames
