"""Case identification, eligibility screening and 1:k control matching.

A case is any patient with the case code recorded during an encounter in
the case department; their index date t0 is the earliest such encounter.
Each control gets t0 drawn uniformly from its own encounter dates and is
matched to a case on gender and on age at t0 (within a tolerance).
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import heapq
import json
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ._rng import substream
from .emr import Dataset, EventKind
from .errors import InsufficientPool, NoEncounters, UnknownPatient


class Label(str, Enum):
    CASE = "case"
    CONTROL = "control"


@dataclass(frozen=True)
class CohortSpec:
    case_code: str = "340"
    case_department: str = "Neurology"
    controls_per_case: int = 4
    age_tolerance_years: int = 1
    min_age: int = 18
    seed: int = 0
    # optional cap on eligible cases, drawn at random before matching
    max_cases: int | None = None

    def __post_init__(self):
        if self.controls_per_case < 1:
            raise ValueError("controls_per_case must be >= 1")
        if self.age_tolerance_years < 0:
            raise ValueError("age_tolerance_years must be >= 0")
        if self.max_cases is not None and self.max_cases < 1:
            raise ValueError("max_cases must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "CohortSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown cohort spec fields {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class CohortAssignment:
    patient_id: str
    label: Label
    t0: dt.date
    matched_case_id: str | None = None

    def to_record(self) -> dict:
        rec = {"patient_id": self.patient_id, "label": self.label.value, "t0": self.t0.isoformat()}
        if self.matched_case_id is not None:
            rec["matched_case_id"] = self.matched_case_id
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "CohortAssignment":
        return cls(
            rec["patient_id"],
            Label(rec["label"]),
            dt.date.fromisoformat(rec["t0"]),
            rec.get("matched_case_id"),
        )


@dataclass
class Cohort:
    assignments: list[CohortAssignment]
    spec: CohortSpec
    identified_cases: int = 0
    eligible_cases: int = 0

    @property
    def seed(self) -> int:
        return self.spec.seed

    def to_json(self) -> str:
        return json.dumps(
            {
                "assignments": [a.to_record() for a in self.assignments],
                "spec": self.spec.to_dict(),
                "seed": self.spec.seed,
                "identified_cases": self.identified_cases,
                "eligible_cases": self.eligible_cases,
            },
            indent=1,
        )

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> "Cohort":
        data = json.loads(text)
        spec = CohortSpec.from_dict(data.get("spec", {}))
        return cls(
            [CohortAssignment.from_record(r) for r in data["assignments"]],
            spec,
            int(data.get("identified_cases", 0)),
            int(data.get("eligible_cases", 0)),
        )

    @classmethod
    def read(cls, path) -> "Cohort":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def identify_cases(dataset: Dataset, spec: CohortSpec) -> list[tuple[str, dt.date]]:
    first: dict[str, dt.date] = {}
    for enc in dataset.encounters:
        if enc.department != spec.case_department:
            continue
        if any(e.kind is EventKind.DIAGNOSIS and e.code == spec.case_code for e in enc.events):
            prev = first.get(enc.patient_id)
            if prev is None or enc.date < prev:
                first[enc.patient_id] = enc.date
    return sorted(first.items())


def _has_prior_encounter(dataset: Dataset, patient_id: str, t0: dt.date) -> bool:
    return any(e.date < t0 for e in dataset.encounters_of(patient_id))


def filter_eligible(
    cases: Iterable[tuple[str, dt.date]], dataset: Dataset, spec: CohortSpec
) -> list[tuple[str, dt.date]]:
    """Keep adult cases with complete demographics and some history before t0."""
    kept = []
    for pid, t0 in cases:
        patient = dataset.patients.get(pid)
        if patient is None or not patient.complete:
            continue
        if patient.age_on(t0) < spec.min_age:
            continue
        if not _has_prior_encounter(dataset, pid, t0):
            continue
        kept.append((pid, t0))
    return kept


def assign_control_t0(patient_id: str, dataset: Dataset, seed: int) -> dt.date:
    """Uniform draw from the patient's distinct encounter dates."""
    dates = dataset.encounter_dates(patient_id)
    if not dates:
        raise NoEncounters(patient_id)
    rng = substream(seed, "control_t0", patient_id)
    return dates[int(rng.integers(len(dates)))]


def control_pool(dataset: Dataset, case_ids: Iterable[str], spec: CohortSpec) -> list[str]:
    """Non-case patients with complete demographics and at least one encounter."""
    excluded = set(case_ids)
    return sorted(
        pid
        for pid, p in dataset.patients.items()
        if pid not in excluded and p.complete and dataset.encounters_of(pid)
    )


def match_controls(
    eligible_cases: Sequence[tuple[str, dt.date]],
    pool: Sequence[str],
    spec: CohortSpec,
    dataset: Dataset,
) -> list[CohortAssignment]:
    """Greedy seeded matching without replacement.

    Cases are visited in a shuffled order; each takes the first
    ``controls_per_case`` unused candidates of equal gender and age at t0
    within tolerance, in a single shuffled pool order. Raises
    InsufficientPool naming the first case that cannot be filled.
    """
    k = spec.controls_per_case
    tol = spec.age_tolerance_years
    rng = substream(spec.seed, "match_order")
    pool = sorted(set(pool))
    pool_rank = {pid: int(r) for pid, r in zip(pool, rng.permutation(len(pool)))}

    control_t0: dict[str, dt.date] = {}
    buckets: dict[tuple, list[tuple[int, str]]] = defaultdict(list)
    for pid in pool:
        patient = dataset.patients[pid]
        t0 = assign_control_t0(pid, dataset, spec.seed)
        age = patient.age_on(t0)
        if age < spec.min_age:
            continue
        control_t0[pid] = t0
        buckets[(patient.gender, age)].append((pool_rank[pid], pid))
    for lst in buckets.values():
        lst.sort()

    order = rng.permutation(len(eligible_cases))
    used: set[str] = set()
    chosen: dict[str, list[str]] = {}
    for i in order:
        case_id, t0 = eligible_cases[i]
        case = dataset.patients.get(case_id)
        if case is None:
            raise UnknownPatient(case_id)
        age = case.age_on(t0)
        streams = [buckets.get((case.gender, a), []) for a in range(age - tol, age + tol + 1)]
        picks = []
        for _, pid in heapq.merge(*streams):
            if pid in used:
                continue
            picks.append(pid)
            if len(picks) == k:
                break
        if len(picks) < k:
            raise InsufficientPool(case_id, len(picks), k)
        used.update(picks)
        chosen[case_id] = picks

    out = []
    for case_id, t0 in eligible_cases:
        out.append(CohortAssignment(case_id, Label.CASE, t0))
        for pid in chosen[case_id]:
            out.append(CohortAssignment(pid, Label.CONTROL, control_t0[pid], case_id))
    return out


def build_cohort(dataset: Dataset, spec: CohortSpec) -> Cohort:
    cases = identify_cases(dataset, spec)
    eligible = filter_eligible(cases, dataset, spec)
    n_eligible = len(eligible)
    if spec.max_cases is not None and len(eligible) > spec.max_cases:
        rng = substream(spec.seed, "case_subsample")
        keep = sorted(rng.choice(len(eligible), size=spec.max_cases, replace=False))
        eligible = [eligible[i] for i in keep]
    pool = control_pool(dataset, (pid for pid, _ in cases), spec)
    assignments = match_controls(eligible, pool, spec, dataset)
    return Cohort(assignments, spec, len(cases), n_eligible)


def encounter_histogram(
    assignments: Iterable[CohortAssignment], dataset: Dataset
) -> dict[int, tuple[int, int]]:
    """Number of distinct (date, department) encounters before t0, by label.

    Maps count -> (number of cases, number of controls).
    """
    hist: dict[int, list[int]] = defaultdict(lambda: [0, 0])
    for a in assignments:
        visits = {(e.date, e.department) for e in dataset.encounters_of(a.patient_id) if e.date < a.t0}
        hist[len(visits)][0 if a.label is Label.CASE else 1] += 1
    return {n: (c[0], c[1]) for n, c in sorted(hist.items())}
