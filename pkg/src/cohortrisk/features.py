"""Feature dictionary and design-matrix construction.

Each feature belongs to an ordered category; feature set ``k`` holds every
feature whose category is at most ``k``. Only events strictly before a
patient's t0 are used, except family-history codes, which are taken from
the whole record.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .cohort import CohortAssignment, Label
from .design import AGE_COLUMN, DesignMatrix
from .emr import CodeEvent, Dataset, Encounter, Ethnicity, EventKind, Gender, Race
from .errors import EmptyCohort, UnknownPatient


class RuleKind(str, Enum):
    DEMOGRAPHIC = "demographic"
    FAMILY_HISTORY = "family_history"
    DIAGNOSIS = "diagnosis"
    SUPPLEMENTAL = "supplemental"
    PROCEDURE = "procedure"
    LAB = "lab"


_EVENT_KIND = {
    RuleKind.FAMILY_HISTORY: EventKind.SUPPLEMENTAL,
    RuleKind.DIAGNOSIS: EventKind.DIAGNOSIS,
    RuleKind.SUPPLEMENTAL: EventKind.SUPPLEMENTAL,
    RuleKind.PROCEDURE: EventKind.PROCEDURE,
    RuleKind.LAB: EventKind.LAB,
}

DEMOGRAPHIC_FIELDS = ("gender", "ethnicity", "race", "age")


class LabLevel(str, Enum):
    UNOBSERVED = "Unobserved"
    NORMAL = "ObservedNormal"
    ABNORMAL = "ObservedAbnormal"


# (levels emitted as dummies, reference level)
CATEGORICAL_LEVELS = {
    "gender": ((Gender.F,), Gender.M),
    "ethnicity": ((Ethnicity.HISPANIC,), Ethnicity.NON_HISPANIC),
    "race": ((Race.BLACK, Race.ASIAN, Race.NATIVE_AMERICAN, Race.OTHER), Race.WHITE),
}
LAB_DUMMY_LEVELS = (LabLevel.UNOBSERVED, LabLevel.NORMAL)


@dataclass(frozen=True)
class Rule:
    kind: RuleKind
    codes: frozenset[str] = frozenset()
    field: str | None = None
    test: str | None = None

    def __post_init__(self):
        if self.kind is RuleKind.DEMOGRAPHIC:
            if self.field not in DEMOGRAPHIC_FIELDS:
                raise ValueError(f"unknown demographic field {self.field!r}")
        elif self.kind is RuleKind.LAB:
            if not self.test:
                raise ValueError("lab rule needs a test code")
        elif not self.codes:
            raise ValueError(f"{self.kind.value} rule needs a nonempty code set")

    @classmethod
    def from_dict(cls, data: Mapping) -> "Rule":
        kind = RuleKind(data["kind"])
        return cls(kind, frozenset(data.get("codes", ())), data.get("field"), data.get("test"))

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if self.kind is RuleKind.DEMOGRAPHIC:
            out["field"] = self.field
        elif self.kind is RuleKind.LAB:
            out["test"] = self.test
        else:
            out["codes"] = sorted(self.codes)
        return out


@dataclass(frozen=True)
class FeatureDef:
    name: str
    category: int
    rule: Rule

    def columns(self) -> list[str]:
        if self.rule.kind is RuleKind.DEMOGRAPHIC:
            if self.rule.field == "age":
                return [AGE_COLUMN]
            levels, _ = CATEGORICAL_LEVELS[self.rule.field]
            return [f"{self.name}:{lv.value}" for lv in levels]
        if self.rule.kind is RuleKind.LAB:
            return [f"{self.name}:{lv.value}" for lv in LAB_DUMMY_LEVELS]
        return [self.name]


@dataclass(frozen=True)
class FeatureDictionary:
    defs: tuple[FeatureDef, ...]

    def __post_init__(self):
        names = [d.name for d in self.defs]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        cats = sorted({d.category for d in self.defs})
        if cats and cats != list(range(1, cats[-1] + 1)):
            raise ValueError(f"categories must be contiguous from 1, got {cats}")
        cols = [c for d in self.defs for c in d.columns()]
        if len(set(cols)) != len(cols):
            raise ValueError("expanded column names collide")

    @property
    def max_category(self) -> int:
        return max((d.category for d in self.defs), default=0)

    def upto(self, feature_set: int) -> list[FeatureDef]:
        return [d for d in self.defs if d.category <= feature_set]

    def columns(self, feature_set: int | None = None) -> list[str]:
        defs = self.defs if feature_set is None else self.upto(feature_set)
        return [c for d in defs for c in d.columns()]

    def column_groups(self) -> dict[str, str]:
        """Map each expanded column to its feature name."""
        return {c: d.name for d in self.defs for c in d.columns()}

    def family_history_codes(self) -> frozenset[str]:
        return frozenset(
            code for d in self.defs if d.rule.kind is RuleKind.FAMILY_HISTORY for code in d.rule.codes
        )

    def to_dict(self) -> dict:
        return {
            "features": [
                {"name": d.name, "category": d.category, "rule": d.rule.to_dict()} for d in self.defs
            ]
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: Mapping) -> "FeatureDictionary":
        return cls(
            tuple(
                FeatureDef(f["name"], int(f["category"]), Rule.from_dict(f["rule"]))
                for f in data["features"]
            )
        )

    @classmethod
    def read(cls, path) -> "FeatureDictionary":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class DatedEvent(NamedTuple):
    date: dt.date
    event: CodeEvent


def truncate_history(
    encounters: Iterable[Encounter], t0: dt.date, family_history_codes: Iterable[str] = ()
) -> tuple[list[DatedEvent], list[DatedEvent]]:
    """Split a history into events strictly before t0 and family-history events.

    Family-history events are supplemental codes in ``family_history_codes``,
    kept whatever their date.
    """
    fh_codes = frozenset(family_history_codes)
    pre, fh = [], []
    for enc in encounters:
        for ev in enc.events:
            item = DatedEvent(enc.date, ev)
            if enc.date < t0:
                pre.append(item)
            if ev.kind is EventKind.SUPPLEMENTAL and ev.code in fh_codes:
                fh.append(item)
    return pre, fh


def _event_of(item):
    return item.event if isinstance(item, DatedEvent) else item


def extract_binary(events: Iterable[CodeEvent | DatedEvent], rule: Rule) -> int:
    kind = _EVENT_KIND.get(rule.kind)
    if kind is None or kind is EventKind.LAB:
        raise ValueError(f"{rule.kind.value} rule is not a binary code rule")
    for item in events:
        ev = _event_of(item)
        if ev.kind is kind and ev.code in rule.codes:
            return 1
    return 0


def lab_is_normal(ev: CodeEvent) -> bool:
    low = -np.inf if ev.low is None else ev.low
    high = np.inf if ev.high is None else ev.high
    return low <= ev.value <= high


def extract_lab_level(events: Iterable[DatedEvent], test_code: str) -> LabLevel:
    """Classify the most recent result of ``test_code``.

    Results on the same date are ordered by value so the choice does not
    depend on input order.
    """
    results = [
        (item.date, item.event.value, item.event.low, item.event.high, item.event)
        for item in events
        if item.event.kind is EventKind.LAB and item.event.code == test_code
    ]
    if not results:
        return LabLevel.UNOBSERVED
    latest = max(results, key=lambda r: (r[0], r[1], _none_key(r[2]), _none_key(r[3])))[-1]
    return LabLevel.NORMAL if lab_is_normal(latest) else LabLevel.ABNORMAL


def _none_key(v):
    return (0, 0.0) if v is None else (1, v)


def expand_dummies(raw_features: Mapping[str, object], dictionary: FeatureDictionary) -> dict[str, float]:
    """Expand raw feature values (by feature name) into named columns.

    Categorical features emit k-1 indicators against their reference
    level; lab features emit Unobserved and ObservedNormal indicators with
    ObservedAbnormal as reference.
    """
    out: dict[str, float] = {}
    for d in dictionary.defs:
        if d.name not in raw_features:
            continue
        value = raw_features[d.name]
        if d.rule.kind is RuleKind.DEMOGRAPHIC and d.rule.field == "age":
            out[AGE_COLUMN] = float(value)
        elif d.rule.kind is RuleKind.DEMOGRAPHIC:
            levels, _ = CATEGORICAL_LEVELS[d.rule.field]
            for lv in levels:
                out[f"{d.name}:{lv.value}"] = 1.0 if value == lv else 0.0
        elif d.rule.kind is RuleKind.LAB:
            for lv in LAB_DUMMY_LEVELS:
                out[f"{d.name}:{lv.value}"] = 1.0 if value == lv else 0.0
        else:
            out[d.name] = float(value)
    return out


def raw_features_for(
    patient, encounters: Sequence[Encounter], t0: dt.date, defs: Sequence[FeatureDef], fh_codes
) -> dict[str, object]:
    pre, fh = truncate_history(encounters, t0, fh_codes)
    raw: dict[str, object] = {}
    for d in defs:
        rule = d.rule
        if rule.kind is RuleKind.DEMOGRAPHIC:
            raw[d.name] = patient.age_on(t0) if rule.field == "age" else getattr(patient, rule.field)
        elif rule.kind is RuleKind.FAMILY_HISTORY:
            raw[d.name] = extract_binary(fh, rule)
        elif rule.kind is RuleKind.LAB:
            raw[d.name] = extract_lab_level(pre, rule.test)
        else:
            raw[d.name] = extract_binary(pre, rule)
    return raw


def build_design_matrix(
    assignments: Sequence[CohortAssignment],
    dataset: Dataset,
    dictionary: FeatureDictionary,
    feature_set: int,
) -> DesignMatrix:
    if not 1 <= feature_set <= dictionary.max_category:
        raise ValueError(f"feature_set must be in 1..{dictionary.max_category}, got {feature_set}")
    if not assignments:
        raise EmptyCohort("no cohort members")
    defs = dictionary.upto(feature_set)
    columns = dictionary.columns(feature_set)
    fh_codes = dictionary.family_history_codes()
    values = np.zeros((len(assignments), len(columns)))
    for i, a in enumerate(assignments):
        patient = dataset.patients.get(a.patient_id)
        if patient is None:
            raise UnknownPatient(a.patient_id)
        raw = raw_features_for(patient, dataset.encounters_of(a.patient_id), a.t0, defs, fh_codes)
        row = expand_dummies(raw, dictionary)
        values[i] = [row[c] for c in columns]
    labels = np.array([1.0 if a.label is Label.CASE else 0.0 for a in assignments])
    return DesignMatrix(tuple(a.patient_id for a in assignments), tuple(columns), values, labels)


def _dx(name, cat, *codes):
    return FeatureDef(name, cat, Rule(RuleKind.DIAGNOSIS, frozenset(codes)))


def _v(name, cat, *codes):
    return FeatureDef(name, cat, Rule(RuleKind.SUPPLEMENTAL, frozenset(codes)))


def _fh(name, *codes):
    return FeatureDef(name, 1, Rule(RuleKind.FAMILY_HISTORY, frozenset(codes)))


def _proc(name, cat, *codes):
    return FeatureDef(name, cat, Rule(RuleKind.PROCEDURE, frozenset(codes)))


def _lab(name, test):
    return FeatureDef(name, 9, Rule(RuleKind.LAB, test=test))


def _demo(field):
    return FeatureDef(field, 1, Rule(RuleKind.DEMOGRAPHIC, field=field))


def default_dictionary() -> FeatureDictionary:
    """Nine ordered categories of MS risk features.

    Code sets are ICD-9 diagnosis / V codes and CPT procedure codes chosen
    as reasonable defaults; site-specific mappings belong in a features.json.
    """
    return FeatureDictionary(
        (
            _demo("gender"),
            _demo("ethnicity"),
            _demo("race"),
            _demo("age"),
            _fh("fh_ms", "V17.2"),
            _fh("fh_mental_illness", "V17.0"),
            _fh("fh_colon_cancer", "V16.0"),
            _fh("fh_breast_cancer", "V16.3"),
            _fh("fh_lupus", "V17.89"),
            _fh("fh_thyroiditis", "V18.19"),
            _fh("fh_diabetes", "V18.0"),
            _fh("fh_ibd", "V18.59"),
            _dx("inflammatory_bowel", 2, "555.9", "556.9"),
            _dx("celiac", 2, "579.0"),
            _dx("uveitis", 2, "364.3"),
            _dx("thyroiditis", 2, "245.9"),
            _dx("lupus", 2, "710.0"),
            _dx("rheumatoid_arthritis", 2, "714.0"),
            _dx("sjogrens_syndrome", 2, "710.2"),
            _dx("bells_palsy", 2, "351.0"),
            _dx("guillain_barre", 2, "357.0"),
            _dx("diabetes", 2, "250.00", "250.01"),
            _dx("vitamin_d_deficiency", 2, "268.9"),
            _dx("mmr_infection", 3, "055.9", "072.9", "056.9"),
            _dx("epstein_barr_virus", 3, "075"),
            _dx("bipolar", 4, "296.80"),
            _dx("schizophrenia", 4, "295.90"),
            _dx("lymphoma", 5, "202.80"),
            _dx("oral_cancer", 5, "145.9"),
            _dx("breast_cancer", 5, "174.9"),
            _dx("colon_cancer", 5, "153.9"),
            _v("hepatitis_vaccine", 6, "V05.3"),
            _v("dtp_vaccine", 6, "V06.1"),
            _v("polio_vaccine", 6, "V04.0"),
            _v("influenza_vaccine", 6, "V04.81"),
            _v("mmr_vaccine", 6, "V06.4"),
            _v("varicella_vaccine", 6, "V05.4"),
            _v("meningococcal_vaccine", 6, "V03.89"),
            _v("pneumococcal_vaccine", 6, "V03.82"),
            _v("hib_vaccine", 6, "V03.81"),
            _v("hpv_vaccine", 6, "V04.89"),
            _v("hysterectomy", 7, "V88.01"),
            _v("oral_contraceptive", 7, "V25.41"),
            _v("estrogen_replacement", 7, "V07.4"),
            _dx("obesity", 8, "278.00"),
            _dx("abnormal_brain_mri", 8, "793.0"),
            _proc("brain_mri", 8, "70551", "70552", "70553"),
            _proc("cervical_spine_mri", 8, "72141"),
            _proc("thoracic_spine_mri", 8, "72146"),
            _lab("esr", "ESR"),
            _lab("lyme", "LYME"),
            _lab("b12", "B12"),
            _lab("ana_ssa", "ANA-SSA"),
            _lab("ana_ssb", "ANA-SSB"),
            _lab("ana_ds", "ANA-DS"),
            _lab("anticardiolipin", "ACL"),
            _lab("zinc", "ZINC"),
            _lab("csf_oligoclonal_bands", "CSF-OCB"),
            _lab("csf_igg_synthesis", "CSF-IGG"),
        )
    )
