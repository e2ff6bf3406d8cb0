"""Longitudinal EMR records: patients, encounters and coded events.

Both record types are stored one JSON object per line. Parsing is strict
about dates, identifiers and lab values but tolerant of demographic gaps:
a patient with a missing or unrecognised demographic field still parses,
it is just not ``complete`` and will fail cohort eligibility.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import ParseError

log = logging.getLogger(__name__)


class Gender(str, Enum):
    F = "F"
    M = "M"


class Race(str, Enum):
    WHITE = "White"
    BLACK = "Black"
    ASIAN = "Asian"
    NATIVE_AMERICAN = "NativeAmerican"
    OTHER = "Other"


class Ethnicity(str, Enum):
    HISPANIC = "Hispanic"
    NON_HISPANIC = "NonHispanic"


class EventKind(str, Enum):
    DIAGNOSIS = "dx"
    SUPPLEMENTAL = "vcode"
    PROCEDURE = "proc"
    LAB = "lab"


def parse_date(text) -> dt.date:
    if not isinstance(text, str):
        raise ParseError("InvalidDate", f"expected YYYY-MM-DD string, got {text!r}")
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise ParseError("InvalidDate", text) from None


def age_on(birth_date: dt.date, on: dt.date) -> int:
    """Whole years elapsed between ``birth_date`` and ``on``."""
    years = on.year - birth_date.year
    if (on.month, on.day) < (birth_date.month, birth_date.day):
        years -= 1
    return years


@dataclass(frozen=True)
class Patient:
    id: str
    birth_date: dt.date | None
    gender: Gender | None
    race: Race | None
    ethnicity: Ethnicity | None
    # parse-time notes such as "unknown_race"; not part of record identity
    flags: frozenset[str] = field(default=frozenset(), compare=False)

    @property
    def complete(self) -> bool:
        return None not in (self.birth_date, self.gender, self.race, self.ethnicity)

    def age_on(self, on: dt.date) -> int:
        if self.birth_date is None:
            raise ValueError(f"patient {self.id} has no birth date")
        return age_on(self.birth_date, on)

    def to_record(self) -> dict:
        rec: dict = {"id": self.id}
        if self.birth_date is not None:
            rec["birth_date"] = self.birth_date.isoformat()
        if self.gender is not None:
            rec["gender"] = self.gender.value
        if self.race is not None:
            rec["race"] = self.race.value
        if self.ethnicity is not None:
            rec["ethnicity"] = self.ethnicity.value
        return rec


@dataclass(frozen=True)
class CodeEvent:
    kind: EventKind
    code: str
    value: float | None = None
    low: float | None = None
    high: float | None = None

    def to_record(self) -> dict:
        rec: dict = {"kind": self.kind.value, "code": self.code}
        for key in ("value", "low", "high"):
            v = getattr(self, key)
            if v is not None:
                rec[key] = v
        return rec


@dataclass(frozen=True)
class Encounter:
    patient_id: str
    date: dt.date
    department: str
    events: tuple[CodeEvent, ...] = ()

    def to_record(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "date": self.date.isoformat(),
            "department": self.department,
            "events": [e.to_record() for e in self.events],
        }

    def sort_key(self):
        return (self.patient_id, self.date, self.department, tuple(_event_key(e) for e in self.events))


def _event_key(e: CodeEvent):
    return (e.kind.value, e.code, _none_low(e.value), _none_low(e.low), _none_low(e.high))


def _none_low(v):
    return (0, 0.0) if v is None else (1, v)


def _load_object(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError("MalformedRecord", str(exc)) from None
    if not isinstance(obj, dict):
        raise ParseError("MalformedRecord", "record is not a JSON object")
    return obj


def _enum_or_none(enum_cls, raw, field_name, flags, fallback=None):
    if raw is None:
        return None
    try:
        return enum_cls(raw)
    except ValueError:
        flags.add(f"unknown_{field_name}")
        if fallback is not None:
            log.warning("unknown %s %r mapped to %s", field_name, raw, fallback.value)
        return fallback


def parse_patient(line: str) -> Patient:
    obj = _load_object(line)
    pid = obj.get("id")
    if not isinstance(pid, str) or not pid:
        raise ParseError("MissingId", "patient record has no id")
    flags: set[str] = set()
    raw_birth = obj.get("birth_date")
    birth = None if raw_birth is None else parse_date(raw_birth)
    gender = _enum_or_none(Gender, obj.get("gender"), "gender", flags)
    race = _enum_or_none(Race, obj.get("race"), "race", flags, fallback=Race.OTHER)
    ethnicity = _enum_or_none(Ethnicity, obj.get("ethnicity"), "ethnicity", flags)
    patient = Patient(pid, birth, gender, race, ethnicity, frozenset(flags))
    if not patient.complete:
        flags.add("incomplete_demographics")
        patient = Patient(pid, birth, gender, race, ethnicity, frozenset(flags))
    return patient


def _optional_float(obj, key):
    v = obj.get(key)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError("MalformedRecord", f"{key} must be numeric, got {v!r}")
    return float(v)


def parse_event(obj: Mapping) -> CodeEvent:
    if not isinstance(obj, Mapping):
        raise ParseError("MalformedRecord", "event is not an object")
    try:
        kind = EventKind(obj.get("kind"))
    except ValueError:
        raise ParseError("UnknownKind", repr(obj.get("kind"))) from None
    code = obj.get("code")
    if not isinstance(code, str) or not code:
        raise ParseError("MalformedRecord", "event code must be a nonempty string")
    value, low, high = (_optional_float(obj, k) for k in ("value", "low", "high"))
    if kind is EventKind.LAB:
        if value is None:
            raise ParseError("MissingLabValue", code)
    elif value is not None or low is not None or high is not None:
        raise ParseError("MalformedRecord", f"{kind.value} event {code} carries a value")
    return CodeEvent(kind, code, value, low, high)


def parse_encounter(line: str) -> Encounter:
    obj = _load_object(line)
    pid = obj.get("patient_id")
    if not isinstance(pid, str) or not pid:
        raise ParseError("MissingId", "encounter has no patient_id")
    date = parse_date(obj.get("date"))
    department = obj.get("department", "")
    if not isinstance(department, str):
        raise ParseError("MalformedRecord", "department must be a string")
    raw_events = obj.get("events", [])
    if not isinstance(raw_events, list):
        raise ParseError("MalformedRecord", "events must be an array")
    return Encounter(pid, date, department, tuple(parse_event(e) for e in raw_events))


def serialize(record: Patient | Encounter) -> str:
    return json.dumps(record.to_record(), separators=(",", ":"))


@dataclass
class Dataset:
    """Parsed patients and encounters, indexed by patient."""

    patients: dict[str, Patient]
    encounters: list[Encounter]
    duplicate_ids: tuple[str, ...] = ()

    def __post_init__(self):
        self.encounters = sorted(self.encounters, key=Encounter.sort_key)
        by_patient: dict[str, list[Encounter]] = defaultdict(list)
        for enc in self.encounters:
            by_patient[enc.patient_id].append(enc)
        self._by_patient = dict(by_patient)

    @classmethod
    def from_records(cls, patients: Iterable[Patient], encounters: Iterable[Encounter]) -> "Dataset":
        table: dict[str, Patient] = {}
        dupes = []
        for p in patients:
            if p.id in table:
                dupes.append(p.id)
                continue
            table[p.id] = p
        return cls(table, list(encounters), tuple(sorted(set(dupes))))

    def encounters_of(self, patient_id: str) -> list[Encounter]:
        return self._by_patient.get(patient_id, [])

    def encounter_dates(self, patient_id: str) -> list[dt.date]:
        return sorted({e.date for e in self.encounters_of(patient_id)})

    def with_encounters(self, extra: Iterable[Encounter]) -> "Dataset":
        return Dataset(dict(self.patients), [*self.encounters, *extra], self.duplicate_ids)


def read_lines(path) -> Iterator[str]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield line


def load_dataset(patients_path, encounters_path) -> Dataset:
    patients = [parse_patient(line) for line in read_lines(patients_path)]
    encounters = [parse_encounter(line) for line in read_lines(encounters_path)]
    return Dataset.from_records(patients, encounters)


def write_jsonl(path, records: Iterable[Patient | Encounter]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(serialize(rec) + "\n")


@dataclass(frozen=True)
class DanglingRef:
    patient_id: str


@dataclass(frozen=True)
class DuplicateId:
    patient_id: str


@dataclass(frozen=True)
class NoEncounterPatient:
    patient_id: str


@dataclass(frozen=True)
class OutOfWindow:
    patient_id: str
    date: dt.date


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple = ()

    @property
    def is_clean(self) -> bool:
        return not self.issues

    def __len__(self):
        return len(self.issues)

    def __contains__(self, item):
        return item in self.issues

    def of_type(self, kind) -> list:
        return [i for i in self.issues if isinstance(i, kind)]


def validate_dataset(
    patients: Iterable[Patient] | Mapping[str, Patient] | Dataset,
    encounters: Sequence[Encounter] | None = None,
    study_window: tuple[dt.date, dt.date] | None = None,
) -> ValidationReport:
    """Report dangling references, duplicate ids and patients without encounters."""
    if isinstance(patients, Dataset):
        ds = patients
        plist = list(ds.patients.values()) + [ds.patients[d] for d in ds.duplicate_ids]
        encounters = ds.encounters if encounters is None else encounters
    else:
        plist = list(patients.values()) if isinstance(patients, Mapping) else list(patients)
        encounters = encounters or []
    id_counts = Counter(p.id for p in plist)
    issues: list = [DuplicateId(pid) for pid in sorted(id_counts) if id_counts[pid] > 1]
    seen_refs = set()
    dangling = set()
    out_of_window = set()
    for enc in encounters:
        seen_refs.add(enc.patient_id)
        if enc.patient_id not in id_counts:
            dangling.add(enc.patient_id)
        if study_window is not None and not (study_window[0] <= enc.date <= study_window[1]):
            out_of_window.add((enc.patient_id, enc.date))
    issues += [DanglingRef(pid) for pid in sorted(dangling)]
    issues += [NoEncounterPatient(pid) for pid in sorted(id_counts) if pid not in seen_refs]
    issues += [OutOfWindow(pid, d) for pid, d in sorted(out_of_window)]
    return ValidationReport(tuple(issues))


def read_patients(path) -> list[Patient]:
    return [parse_patient(line) for line in read_lines(Path(path))]
