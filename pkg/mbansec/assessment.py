# mbansec/assessment.py
"""
Security assessment of the MAC security layer as data plus checks.

The registries (security attributes S1-S11, physical attributes, device
classes), the three use cases with their design specifications, the baseline
verdicts and the recommendations live in ``data/assessment.yml``. This module
validates that file and derives the coverage matrix, the fulfillment matrix
for either profile and the recommendation traceability map from it.
"""
import io
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import pandas as pd
import yaml
from pydantic import BaseModel, ValidationError, field_validator

from config import Config
from logger import setup_logger

from .errors import RegistryError, TraceabilityError
from .frame_codec import Cipher
from .schemas import DeviceClass, HubPolicy, Profile

logger = setup_logger("Assessment")

REGISTRY_SIZES = {
    "security_attributes": 11,
    "physical_attributes": 12,
    "device_classes": 4,
    "recommendations": 14,
    "specs": 26,
}

LEGEND = {
    "NotSatisfied": "Red",
    "Partial": "Yellow",
    "Satisfied": "Green",
}

FULFILLMENT_COLUMNS = ["spec", "use_case", "status", "color", "baseline", "upgraded_by", "quote"]


class FulfillmentStatus(str, Enum):
    not_satisfied = "NotSatisfied"
    partial = "Partial"
    satisfied = "Satisfied"

    @property
    def rank(self) -> int:
        return _RANK[self]

    @property
    def color(self) -> str:
        return LEGEND[self.value]


_RANK = {
    FulfillmentStatus.not_satisfied: 0,
    FulfillmentStatus.partial: 1,
    FulfillmentStatus.satisfied: 2,
}


class RecommendationCategory(str, Enum):
    physical_organizational = "PhysicalOrganizational"
    crypto_confidentiality_integrity = "CryptographyConfidentialityIntegrity"
    authentication_authorization = "AuthenticationAuthorization"
    other = "Other"


class SecurityAttribute(BaseModel):
    id: str
    name: str
    definition: str


class PhysicalAttribute(BaseModel):
    id: str
    group: str
    name: str


class DeviceClassEntry(BaseModel):
    id: DeviceClass
    name: str


class UseCaseNode(BaseModel):
    name: str
    device_class: DeviceClass


class UseCase(BaseModel):
    id: str
    name: str
    scenario: Optional[str] = None
    nodes: List[UseCaseNode]


class UseCaseSpec(BaseModel):
    id: str
    use_case: str
    text: str
    attributes: List[str]
    verdict: FulfillmentStatus
    quote: str

    @field_validator("attributes")
    @classmethod
    def mapped_set_not_empty(cls, value):
        if not value:
            raise ValueError("a specification maps at least one attribute")
        return value


class RecommendationLink(BaseModel):
    spec: str
    reconstructed: bool = False


class Recommendation(BaseModel):
    id: str
    category: RecommendationCategory
    text: str
    feature: str
    links: List[RecommendationLink]

    @property
    def spec_ids(self) -> List[str]:
        return [link.spec for link in self.links]


class AssessmentData(BaseModel):
    version: str = "1.0"
    security_attributes: List[SecurityAttribute]
    physical_attributes: List[PhysicalAttribute]
    device_classes: List[DeviceClassEntry]
    use_cases: List[UseCase]
    specs: List[UseCaseSpec]
    recommendations: List[Recommendation]
    hardened_features: List[str]

    @property
    def attribute_ids(self) -> List[str]:
        return ([a.id for a in self.security_attributes]
                + [a.id for a in self.physical_attributes]
                + [d.id.value for d in self.device_classes])

    def use_case(self, uc_id: str) -> UseCase:
        for uc in self.use_cases:
            if uc.id == uc_id:
                return uc
        raise RegistryError(f"unknown use case {uc_id}")

    def spec(self, spec_id: str) -> UseCaseSpec:
        for spec in self.specs:
            if spec.id == spec_id:
                return spec
        raise RegistryError(f"unknown specification {spec_id}")


def _unique(kind: str, ids: List[str]):
    seen = set()
    for item in ids:
        if item in seen:
            raise RegistryError(f"duplicate {kind} id {item}")
        seen.add(item)


def check_registry(data: AssessmentData) -> AssessmentData:
    for section, size in REGISTRY_SIZES.items():
        found = len(getattr(data, section))
        if found != size:
            raise RegistryError(f"{section}: expected {size} entries, found {found}")

    _unique("attribute", data.attribute_ids)
    _unique("use case", [uc.id for uc in data.use_cases])
    _unique("specification", [s.id for s in data.specs])
    _unique("recommendation", [r.id for r in data.recommendations])

    known = set(data.attribute_ids)
    use_cases = {uc.id for uc in data.use_cases}
    for spec in data.specs:
        if spec.use_case not in use_cases:
            raise RegistryError(f"{spec.id}: unknown use case {spec.use_case}")
        unknown = [a for a in spec.attributes if a not in known]
        if unknown:
            raise RegistryError(f"{spec.id}: unknown attribute(s) {', '.join(unknown)}")

    spec_ids = {s.id for s in data.specs}
    features = set(data.hardened_features)
    for rec in data.recommendations:
        for link in rec.links:
            if link.spec not in spec_ids:
                raise RegistryError(f"{rec.id}: links unknown specification {link.spec}")
        if rec.feature not in features:
            raise RegistryError(f"{rec.id}: feature {rec.feature} is not a hardened feature")
    return data


def _resolve(path: str) -> Path:
    candidate = Path(path)
    if candidate.is_absolute() or candidate.exists():
        return candidate
    # relative to the repository root
    return Path(__file__).resolve().parent.parent / candidate


def parse_assessment(text: str) -> AssessmentData:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise RegistryError(f"assessment data is not valid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise RegistryError("assessment data must be a mapping")
    try:
        data = AssessmentData(**raw)
    except ValidationError as e:
        raise RegistryError(f"assessment data rejected: {e}") from e
    return check_registry(data)


_cache: Dict[Path, AssessmentData] = {}


def load_assessment(path: Optional[str] = None) -> AssessmentData:
    """Load and validate the assessment dataset; results are cached per path."""
    resolved = _resolve(path or Config.ASSESSMENT_DATA)
    if resolved in _cache:
        return _cache[resolved]
    if not resolved.exists():
        logger.error(f"Assessment data not found at {resolved}")
        raise RegistryError(f"assessment data not found: {resolved}")
    with open(resolved, "r", encoding="utf-8") as file:
        data = parse_assessment(file.read())
    logger.info(f"Loaded assessment data {resolved} ({len(data.specs)} specs, "
                f"{len(data.recommendations)} recommendations)")
    _cache[resolved] = data
    return data


# ------------------------
# Coverage
# ------------------------

def covered_attributes(use_case: UseCase, data: AssessmentData) -> set:
    covered = {node.device_class.value for node in use_case.nodes}
    for spec in data.specs:
        if spec.use_case == use_case.id:
            covered.update(spec.attributes)
    return covered


def coverage_matrix(use_cases: Iterable[str], data: Optional[AssessmentData] = None) -> pd.DataFrame:
    """
    One row per registered attribute, one boolean column per use case and a
    ``covered`` column that is true when any selected use case carries it.
    """
    data = data or load_assessment()
    selected = [data.use_case(uc_id) for uc_id in use_cases]
    columns = {"attribute": data.attribute_ids}
    for uc in selected:
        carried = covered_attributes(uc, data)
        columns[uc.id] = [attr in carried for attr in data.attribute_ids]
    df = pd.DataFrame(columns)
    df["covered"] = df[[uc.id for uc in selected]].any(axis=1) if selected else False
    return df


def completeness_gaps(use_cases: Iterable[str], data: Optional[AssessmentData] = None) -> List[str]:
    df = coverage_matrix(use_cases, data)
    return df.loc[~df["covered"], "attribute"].tolist()


# ------------------------
# Fulfillment
# ------------------------

def policy_features(policy: HubPolicy) -> set:
    """Hardened features a hub policy actually switches on."""
    features = set()
    if policy.touch_secure_exemption:
        features.add("touch_secure_exemption")
    if policy.liveness:
        features.add("liveness")
    if policy.max_ban_size > Config.BASELINE_MAX_BAN_SIZE:
        features.add("configurable_ban_size")
    if Cipher.aes256_ccm in policy.allowed_ciphers:
        features.add("aes256")
    if policy.acl_required:
        features.add("acl")
    if policy.rate_limit is not None:
        features.add("dos_hardening")
    if policy.hardened:
        # profile-wide behaviour with no separate policy switch
        features.update({"peer_to_peer", "backup_hubs", "long_message_mac", "mutual_auth_tags",
                         "keystore_encryption", "control_frame_auth"})
    return features


def profile_features(profile: Profile) -> set:
    if profile == Profile.hardened:
        return policy_features(HubPolicy.hardened_default())
    return policy_features(HubPolicy.baseline())


def baseline_verdicts(data: Optional[AssessmentData] = None) -> Dict[str, FulfillmentStatus]:
    data = data or load_assessment()
    return {spec.id: spec.verdict for spec in data.specs}


def fulfillment_matrix(profile: Profile = Profile.baseline, features: Optional[Iterable[str]] = None,
                       data: Optional[AssessmentData] = None) -> pd.DataFrame:
    """
    Spec x status. The baseline profile returns the recorded verdicts
    unchanged; any enabled feature upgrades every specification linked to a
    recommendation it implements to Satisfied.
    """
    data = data or load_assessment()
    profile = Profile(profile)
    enabled = set(features) if features is not None else profile_features(profile)

    upgrades: Dict[str, List[str]] = {}
    for rec in data.recommendations:
        if rec.feature in enabled:
            for spec_id in rec.spec_ids:
                upgrades.setdefault(spec_id, []).append(rec.id)

    rows = []
    for spec in data.specs:
        status = spec.verdict
        by = upgrades.get(spec.id, []) if status != FulfillmentStatus.satisfied else []
        if by:
            status = FulfillmentStatus.satisfied
        rows.append({
            "spec": spec.id,
            "use_case": spec.use_case,
            "status": status.value,
            "color": status.color,
            "baseline": spec.verdict.value,
            "upgraded_by": ";".join(by),
            "quote": spec.quote,
        })
    logger.info(f"Fulfillment matrix for {profile.value}: {sum(r['status'] == 'Satisfied' for r in rows)}"
                f"/{len(rows)} satisfied")
    return pd.DataFrame(rows, columns=FULFILLMENT_COLUMNS)


def verdicts_of(matrix: pd.DataFrame) -> Dict[str, FulfillmentStatus]:
    return {row.spec: FulfillmentStatus(row.status) for row in matrix.itertuples(index=False)}


# ------------------------
# Traceability
# ------------------------

def trace_recommendations(verdicts: Optional[Mapping[str, FulfillmentStatus]] = None,
                          data: Optional[AssessmentData] = None) -> Dict[str, List[str]]:
    """Map every recommendation to the specifications that motivate it."""
    data = data or load_assessment()
    verdicts = verdicts if verdicts is not None else baseline_verdicts(data)
    trace = {rec.id: rec.spec_ids for rec in data.recommendations}

    motivated = {spec_id for spec_ids in trace.values() for spec_id in spec_ids}
    for spec_id, status in verdicts.items():
        data.spec(spec_id)
        if FulfillmentStatus(status) != FulfillmentStatus.satisfied and spec_id not in motivated:
            logger.error(f"Specification {spec_id} is {FulfillmentStatus(status).value} with no recommendation")
            raise TraceabilityError(f"{spec_id} is not satisfied and no recommendation addresses it")
    return trace


def reconstructed_links(data: Optional[AssessmentData] = None) -> List[Tuple[str, str]]:
    data = data or load_assessment()
    return [(rec.id, link.spec) for rec in data.recommendations for link in rec.links if link.reconstructed]


# ------------------------
# Reports
# ------------------------

def export_report(matrix: pd.DataFrame, title: str = "") -> Tuple[str, str]:
    """Return (csv, text table). Tables with a status column get the colour legend."""
    csv_text = matrix.to_csv(index=False)
    lines = [title] if title else []
    if matrix.empty:
        lines.append("  ".join(str(c) for c in matrix.columns))
    else:
        lines.append(matrix.to_string(index=False))
    if "status" in matrix.columns:
        lines.append("Legend: " + ", ".join(f"{color}={status}" for status, color in LEGEND.items()))
    return csv_text, "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> pd.DataFrame:
    return pd.read_csv(io.StringIO(text), keep_default_na=False)
