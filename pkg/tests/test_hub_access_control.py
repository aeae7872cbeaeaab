"""ACL admission, BAN size, rate limiting and hub election."""
import pandas as pd
import pytest

from mbansec.errors import ConfigError, NetworkDown, Unauthorized
from mbansec.frame_codec import SecurityLevel, SecuritySuiteSelector
from mbansec.hub_access_control import (
    AUDIT_COLUMNS, AclEntry, AclOp, AclStatus, AdmissionRequest, AuditKind, Authorization, Hub, RateLimiter,
    admit_node, dump_acl, elect_hub, load_acl, update_acl,
)
from mbansec.mac_security_fsm import ConnectionStatus
from mbansec.schemas import HubPolicy

HUB = 0xFF00
BACKUP = 0xFF01
SSS = SecuritySuiteSelector(level=SecurityLevel.auth_enc)
FP = "a1b2c3d4e5f60718"


def request(node: int, identity: str = None) -> AdmissionRequest:
    return AdmissionRequest(node=node, sss=SSS, identity=identity)


class TestAdmission:
    def test_baseline_admits_anyone(self):
        assert admit_node(HubPolicy.baseline(), {}, request(1)) == ConnectionStatus.accepted

    def test_baseline_ban_is_full_at_64(self):
        policy = HubPolicy.baseline()
        assert admit_node(policy, {}, request(64), admitted_count=63) == ConnectionStatus.accepted
        assert admit_node(policy, {}, request(65), admitted_count=64) == ConnectionStatus.rejected_ban_full

    def test_hardened_ban_size(self):
        policy = HubPolicy.hardened_default(acl_required=False)
        assert admit_node(policy, {}, request(65), admitted_count=64) == ConnectionStatus.accepted
        assert admit_node(policy, {}, request(1), admitted_count=2048) == ConnectionStatus.rejected_ban_full

    def test_hardened_requires_acl_entry(self):
        policy = HubPolicy.hardened_default()
        acl = {1: AclEntry(1, FP)}
        assert admit_node(policy, acl, request(1, FP)) == ConnectionStatus.accepted
        assert admit_node(policy, acl, request(2, FP)) == ConnectionStatus.rejected_unauthorized
        assert admit_node(policy, acl, request(1, "00" * 8)) == ConnectionStatus.rejected_unauthorized
        assert admit_node(policy, acl, request(1)) == ConnectionStatus.rejected_unauthorized

    def test_revoked_entry(self):
        acl = {1: AclEntry(1, FP, status=AclStatus.revoked)}
        assert admit_node(HubPolicy.hardened_default(), acl, request(1, FP)) == ConnectionStatus.rejected_unauthorized

    def test_suite_checked_first(self):
        req = AdmissionRequest(node=1, sss=SecuritySuiteSelector(level=SecurityLevel.unsecured), identity=FP)
        status = admit_node(HubPolicy.hardened_default(), {1: AclEntry(1, FP)}, req)
        assert status == ConnectionStatus.rejected_suite_mismatch


class TestAclUpdates:
    def test_admin_adds_and_revokes(self):
        acl = update_acl({}, AclOp.add, AclEntry(1, FP), Authorization.admin)
        assert acl[1].status == AclStatus.authorized
        acl = update_acl(acl, AclOp.revoke, AclEntry(1, FP), Authorization.admin)
        assert acl[1].status == AclStatus.revoked

    def test_update_does_not_mutate(self):
        acl = {}
        update_acl(acl, AclOp.add, AclEntry(1, FP), Authorization.admin)
        assert acl == {}

    @pytest.mark.parametrize("caller", [Authorization.sensor_read, Authorization.actuator_command])
    def test_non_admin_refused(self, caller):
        with pytest.raises(Unauthorized):
            update_acl({}, AclOp.add, AclEntry(1, FP), caller)

    def test_hub_revocation_releases_node(self):
        hub = Hub(HUB, HubPolicy.hardened_default(), acl={1: AclEntry(1, FP)})
        assert hub.admit(request(1, FP)) == ConnectionStatus.accepted
        hub.update_acl(AclOp.revoke, AclEntry(1, FP), Authorization.admin, tick=3)
        assert 1 not in hub.admitted
        assert hub.admit(request(1, FP), tick=4) == ConnectionStatus.rejected_unauthorized

    def test_refused_update_is_audited(self):
        hub = Hub(HUB, HubPolicy.hardened_default())
        with pytest.raises(Unauthorized):
            hub.update_acl(AclOp.add, AclEntry(1, FP), Authorization.sensor_read)
        assert hub.audit[-1].decision == "AclAddDenied"


class TestAclFile:
    def test_load_and_dump(self):
        text = "# hub ACL\n0x0001,A1B2C3D4E5F60718,SensorRead,Authorized\n0x0002,ffff,Admin,Revoked\n"
        acl = load_acl(text)
        assert acl[1] == AclEntry(1, FP, Authorization.sensor_read, AclStatus.authorized)
        assert acl[2].authorization == Authorization.admin
        assert load_acl(dump_acl(acl)) == acl

    @pytest.mark.parametrize("line", [
        "0x0001,abcd,SensorRead",
        "0x0001,nothex,SensorRead,Authorized",
        "0x0001,abcd,Root,Authorized",
        "zz,abcd,SensorRead,Authorized",
    ])
    def test_bad_lines(self, line):
        with pytest.raises(ConfigError):
            load_acl(line)

    def test_duplicate_entries(self):
        with pytest.raises(ConfigError):
            load_acl("1,ab,Admin,Authorized\n1,cd,Admin,Authorized\n")

    def test_empty(self):
        assert load_acl("") == {}
        assert dump_acl({}) == ""


class TestRateLimiter:
    def test_limit_per_source_per_tick(self):
        limiter = RateLimiter(2)
        assert [limiter.allow(7, 0) for _ in range(3)] == [True, True, False]
        assert limiter.allow(8, 0)
        assert limiter.allow(7, 1)

    def test_disabled(self):
        limiter = RateLimiter(None)
        assert all(limiter.allow(7, 0) for _ in range(1000))


class TestElection:
    def test_lowest_live_hub(self):
        policy = HubPolicy.hardened_default(backup_hubs=[BACKUP, 0xFF02])
        assert elect_hub(policy, {BACKUP, 0xFF02}, HUB) == BACKUP
        assert elect_hub(policy, {HUB, BACKUP}, HUB) == HUB

    def test_baseline_has_no_backups(self):
        with pytest.raises(NetworkDown):
            elect_hub(HubPolicy.baseline(), {BACKUP}, HUB)

    def test_failover_clears_admissions(self):
        hub = Hub(HUB, HubPolicy.hardened_default(acl_required=False, backup_hubs=[BACKUP]))
        hub.admit(request(1))
        assert hub.hub_failed(HUB, tick=10) == BACKUP
        assert hub.active == BACKUP
        assert hub.admitted == set()
        with pytest.raises(NetworkDown):
            hub.hub_failed(BACKUP, tick=11)
        assert hub.active is None


class TestAudit:
    def test_frame_and_csv(self, tmp_path):
        hub = Hub(HUB, HubPolicy.baseline())
        hub.admit(request(1), tick=0)
        hub.report_unreachable(1, tick=5)
        frame = hub.audit_frame()
        assert list(frame.columns) == AUDIT_COLUMNS
        assert list(frame["decision"]) == ["Accepted", "RejectedNotReachable"]
        assert list(frame["kind"]) == ["Admission", "Release"]
        path = tmp_path / "audit.csv"
        text = hub.export_audit_csv(str(path))
        assert path.read_text(encoding="utf-8") == text
        assert pd.read_csv(path)["seq"].tolist() == [1, 2]

    def test_readmission_does_not_count_twice(self):
        hub = Hub(HUB, HubPolicy.baseline())
        hub.admit(request(1))
        hub.admit(request(1))
        assert hub.admitted == {1}

    def test_refused_rerequest_keeps_admission(self):
        hub = Hub(HUB, HubPolicy.hardened_default(), acl={1: AclEntry(1, FP)})
        assert hub.admit(request(1, FP)) == ConnectionStatus.accepted
        assert hub.admit(request(1, "ffff"), tick=2) == ConnectionStatus.rejected_unauthorized
        assert hub.admitted == {1}
        assert [r.decision for r in hub.audit] == ["Accepted", "RejectedUnauthorized"]

    def test_member_of_full_ban_can_rerequest(self):
        hub = Hub(HUB, HubPolicy.baseline())
        for node in range(1, 65):
            hub.admit(request(node))
        assert hub.admit(request(5)) == ConnectionStatus.accepted
        assert hub.admit(request(65)) == ConnectionStatus.rejected_ban_full
        assert len(hub.admitted) == 64

    def test_admission_log_leaves_out_other_events(self):
        hub = Hub(HUB, HubPolicy.hardened_default(acl_required=False, backup_hubs=[BACKUP]))
        hub.admit(request(1), tick=0)
        hub.release_node(1, tick=1)
        hub.hub_failed(HUB, tick=2)
        hub.admit(request(1), tick=3)
        assert [r.kind for r in hub.audit] == [
            AuditKind.admission, AuditKind.release, AuditKind.failover, AuditKind.failover, AuditKind.admission]
        assert [(r.tick, r.decision) for r in hub.admission_log()] == [(0, "Accepted"), (3, "Accepted")]
