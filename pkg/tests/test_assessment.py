"""Registries, coverage, fulfillment and recommendation traceability."""
import pytest
import yaml

from conftest import ROOT
from mbansec.assessment import (
    FULFILLMENT_COLUMNS, FulfillmentStatus, baseline_verdicts, completeness_gaps, covered_attributes,
    coverage_matrix, export_report, fulfillment_matrix, load_assessment, parse_assessment, parse_report_csv,
    policy_features, profile_features, reconstructed_links, trace_recommendations, verdicts_of,
)
from mbansec.errors import RegistryError, TraceabilityError
from mbansec.schemas import HubPolicy, Profile

ALL_USE_CASES = ["UC1", "UC2", "UC3"]


@pytest.fixture(scope="module")
def data():
    return load_assessment()


@pytest.fixture
def raw():
    return yaml.safe_load((ROOT / "data" / "assessment.yml").read_text(encoding="utf-8"))


class TestRegistry:
    def test_cardinalities(self, data):
        assert len(data.security_attributes) == 11
        assert len(data.physical_attributes) == 12
        assert len(data.device_classes) == 4
        assert len(data.recommendations) == 14
        assert len(data.specs) == 26
        per_use_case = [sum(1 for s in data.specs if s.use_case == uc) for uc in ALL_USE_CASES]
        assert per_use_case == [9, 9, 8]

    def test_every_verdict_carries_a_quote(self, data):
        assert all(spec.quote.strip() for spec in data.specs)

    def test_unknown_ids(self, data):
        with pytest.raises(RegistryError):
            data.spec("U9.9")
        with pytest.raises(RegistryError):
            data.use_case("UC4")

    def test_duplicate_spec(self, raw):
        raw["specs"][1]["id"] = raw["specs"][0]["id"]
        with pytest.raises(RegistryError):
            parse_assessment(yaml.safe_dump(raw))

    def test_unknown_attribute(self, raw):
        raw["specs"][0]["attributes"] = ["S99"]
        with pytest.raises(RegistryError):
            parse_assessment(yaml.safe_dump(raw))

    def test_empty_attribute_set(self, raw):
        raw["specs"][0]["attributes"] = []
        with pytest.raises(RegistryError):
            parse_assessment(yaml.safe_dump(raw))

    def test_missing_recommendation(self, raw):
        raw["recommendations"].pop()
        with pytest.raises(RegistryError):
            parse_assessment(yaml.safe_dump(raw))

    def test_not_yaml(self):
        with pytest.raises(RegistryError):
            parse_assessment("specs: [unclosed")

    def test_missing_file(self, tmp_path):
        with pytest.raises(RegistryError):
            load_assessment(str(tmp_path / "none.yml"))


class TestCoverage:
    def test_three_use_cases_cover_everything(self, data):
        matrix = coverage_matrix(ALL_USE_CASES, data)
        assert len(matrix) == 27
        assert matrix["covered"].all()
        assert completeness_gaps(ALL_USE_CASES, data) == []

    def test_without_pancreas(self, data):
        gaps = set(completeness_gaps(["UC1", "UC2"], data))
        assert {"E3", "M3", "C3", "T3"} <= gaps
        uc3_only = covered_attributes(data.use_case("UC3"), data) - (
            covered_attributes(data.use_case("UC1"), data) | covered_attributes(data.use_case("UC2"), data))
        assert gaps == uc3_only
        assert gaps == {"E3", "M3", "C3", "T3", "SemiInvasive"}

    def test_no_use_case(self, data):
        assert completeness_gaps([], data) == data.attribute_ids

    def test_column_per_use_case(self, data):
        matrix = coverage_matrix(["UC2"], data)
        assert list(matrix.columns) == ["attribute", "UC2", "covered"]
        assert matrix.set_index("attribute").loc["Ambient", "UC2"]


class TestFulfillment:
    def test_baseline_verdicts(self, data):
        verdicts = verdicts_of(fulfillment_matrix(Profile.baseline, data=data))
        assert verdicts["U3.2"] == FulfillmentStatus.not_satisfied
        assert verdicts["U2.9"] == FulfillmentStatus.satisfied
        assert verdicts["U1.5"] == FulfillmentStatus.partial
        assert verdicts == baseline_verdicts(data)

    def test_baseline_has_no_upgrades(self, data):
        matrix = fulfillment_matrix(Profile.baseline, data=data)
        assert list(matrix.columns) == FULFILLMENT_COLUMNS
        assert (matrix["upgraded_by"] == "").all()

    def test_hardened_upgrades_acl_specs(self, data):
        matrix = fulfillment_matrix(Profile.hardened, data=data).set_index("spec")
        assert matrix.loc["U1.9", "status"] == "Satisfied"
        assert "AA3" in matrix.loc["U1.9", "upgraded_by"].split(";")
        assert matrix.loc["U1.9", "color"] == "Green"

    def test_hardened_dominates_baseline(self, data):
        base = verdicts_of(fulfillment_matrix(Profile.baseline, data=data))
        hard = verdicts_of(fulfillment_matrix(Profile.hardened, data=data))
        assert all(hard[k].rank >= base[k].rank for k in base)

    def test_single_feature(self, data):
        verdicts = verdicts_of(fulfillment_matrix(features=["configurable_ban_size"], data=data))
        assert verdicts["U1.3"] == FulfillmentStatus.satisfied
        assert verdicts["U3.2"] == FulfillmentStatus.not_satisfied

    def test_profile_features(self, data):
        assert profile_features(Profile.baseline) == set()
        assert profile_features(Profile.hardened) == set(data.hardened_features)

    def test_policy_features_follow_flags(self):
        policy = HubPolicy.hardened_default(acl_required=False, rate_limit=None)
        features = policy_features(policy)
        assert "acl" not in features and "dos_hardening" not in features
        assert "configurable_ban_size" in features


class TestTraceability:
    def test_every_recommendation_traced(self, data):
        trace = trace_recommendations(data=data)
        assert len(trace) == 14
        assert trace["PO3"] == ["U1.3"]
        assert trace["AA3"] == ["U1.9", "U2.5", "U3.4"]

    def test_orphan_spec(self, data):
        verdicts = dict(baseline_verdicts(data), **{"U2.2": FulfillmentStatus.partial})
        with pytest.raises(TraceabilityError):
            trace_recommendations(verdicts, data)

    def test_unknown_spec(self, data):
        with pytest.raises(RegistryError):
            trace_recommendations({"U7.1": FulfillmentStatus.satisfied}, data)

    def test_reconstructed_links_are_marked(self, data):
        links = reconstructed_links(data)
        assert ("AA3", "U1.9") in links
        assert ("PO3", "U1.3") not in links


class TestReports:
    def test_round_trip(self, data):
        matrix = fulfillment_matrix(Profile.hardened, data=data)
        csv_text, table = export_report(matrix, "hardened")
        parsed = parse_report_csv(csv_text)
        assert parsed.equals(matrix)
        assert len(parsed) == 26
        assert table.startswith("hardened\n")
        assert "Legend: Red=NotSatisfied, Yellow=Partial, Green=Satisfied" in table

    def test_empty_matrix(self, data):
        empty = fulfillment_matrix(data=data).iloc[0:0]
        csv_text, _ = export_report(empty)
        assert csv_text.strip() == ",".join(FULFILLMENT_COLUMNS)

    def test_coverage_has_no_legend(self, data):
        _, table = export_report(coverage_matrix(ALL_USE_CASES, data))
        assert "Legend" not in table
