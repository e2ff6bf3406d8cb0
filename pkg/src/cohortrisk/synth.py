"""Synthetic EMR populations drawn from a planted logistic model.

Each patient gets a latent feature vector (binary indicators by
prevalence, three-level lab states, demographics), and a case label drawn
with probability ``logistic(intercept + beta . x)`` where ``x`` is the
dummy-expanded design row. Latent features are then written out as coded
events so that the cohort and feature stages see exactly ``x`` again:

* cases get a "340" Neurology encounter after at least
  ``case_min_prior_encounters`` earlier encounters, and their feature
  events sit on those earlier encounters;
* controls carry their feature events on their first encounter, since
  their t0 is drawn later by the cohort stage;
* family-history codes go on any encounter, before or after t0;
* cases also get post-diagnosis noise events that a correct truncation
  must ignore.

Age enters the latent predictor as age at the start of the study window.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ._rng import substream
from .emr import CodeEvent, Dataset, Encounter, Ethnicity, EventKind, Gender, Patient, Race, age_on, write_jsonl
from .errors import ConfigInvalid
from .features import FeatureDictionary, LabLevel, RuleKind, default_dictionary, expand_dummies
from .glm import INTERCEPT

CASE_CODE = "340"
CASE_DEPARTMENT = "Neurology"
FILLER_CODE = "V70.0"
DEPARTMENTS = ("Internal Medicine", "Family Medicine", "Cardiology", "Dermatology", "Neurology")
LAB_RANGE = (100.0, 200.0)


def _uniform(levels):
    return {lv.value: 1.0 / len(levels) for lv in levels}


@dataclass(frozen=True)
class DemographicsMix:
    gender: Mapping[str, float] = field(default_factory=lambda: _uniform(list(Gender)))
    race: Mapping[str, float] = field(default_factory=lambda: {"White": 1.0})
    ethnicity: Mapping[str, float] = field(default_factory=lambda: {"NonHispanic": 1.0})
    age_range: tuple[int, int] = (18, 80)

    def to_dict(self) -> dict:
        return {
            "gender": dict(self.gender),
            "race": dict(self.race),
            "ethnicity": dict(self.ethnicity),
            "age_range": list(self.age_range),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DemographicsMix":
        unknown = set(data) - {"gender", "race", "ethnicity", "age_range"}
        if unknown:
            raise ConfigInvalid(f"unknown demographics_mix keys {sorted(unknown)}")
        base = cls()
        age = data.get("age_range", base.age_range)
        return cls(
            dict(data.get("gender", base.gender)),
            dict(data.get("race", base.race)),
            dict(data.get("ethnicity", base.ethnicity)),
            (int(age[0]), int(age[1])),
        )


def _check_distribution(name, dist, enum_cls):
    if not dist:
        raise ConfigInvalid(f"{name} distribution is empty")
    for key, p in dist.items():
        try:
            enum_cls(key)
        except ValueError:
            raise ConfigInvalid(f"unknown {name} level {key!r}") from None
        if not (isinstance(p, (int, float)) and p >= 0 and math.isfinite(p)):
            raise ConfigInvalid(f"{name} weight for {key!r} must be a nonnegative number")
    if not math.isclose(sum(dist.values()), 1.0, abs_tol=1e-6):
        raise ConfigInvalid(f"{name} weights must sum to 1")


@dataclass(frozen=True)
class GeneratorConfig:
    n_patients: int = 1000
    study_window: tuple[dt.date, dt.date] = (dt.date(2008, 1, 1), dt.date(2015, 12, 31))
    encounter_rate: float = 1.0  # mean encounters per patient-year
    planted_beta: Mapping[str, float] = field(default_factory=lambda: {INTERCEPT: math.log(0.25)})
    feature_prevalence: Mapping[str, float] = field(default_factory=dict)
    demographics_mix: DemographicsMix = field(default_factory=DemographicsMix)
    seed: int = 0
    # a number, or a mapping from lab feature name to P(abnormal | observed)
    lab_abnormal_fraction: float | Mapping[str, float] = 0.5
    case_min_prior_encounters: int = 2
    post_t0_noise_rate: float = 0.3
    incomplete_fraction: float = 0.0
    dictionary: FeatureDictionary = field(default_factory=default_dictionary, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.n_patients, int) or self.n_patients < 1:
            raise ConfigInvalid("n_patients must be a positive integer")
        start, end = self.study_window
        if not start < end:
            raise ConfigInvalid("study_window must be nonempty")
        if not (self.encounter_rate > 0 and math.isfinite(self.encounter_rate)):
            raise ConfigInvalid("encounter_rate must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigInvalid("seed must be a 64-bit unsigned integer")
        if self.case_min_prior_encounters < 0:
            raise ConfigInvalid("case_min_prior_encounters must be >= 0")
        for name in ("post_t0_noise_rate", "incomplete_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigInvalid(f"{name} must be in [0, 1]")
        if INTERCEPT not in self.planted_beta:
            raise ConfigInvalid("planted_beta must include the intercept")
        columns = set(self.dictionary.columns())
        for key, b in self.planted_beta.items():
            if key != INTERCEPT and key not in columns:
                raise ConfigInvalid(f"planted_beta names unknown column {key!r}")
            if not math.isfinite(b):
                raise ConfigInvalid(f"planted_beta[{key!r}] is not finite")
        eventful = {d.name for d in self.dictionary.defs if d.rule.kind is not RuleKind.DEMOGRAPHIC}
        for key, p in self.feature_prevalence.items():
            if key not in eventful:
                raise ConfigInvalid(f"feature_prevalence names unknown feature {key!r}")
            if not 0 <= p <= 1:
                raise ConfigInvalid(f"prevalence of {key!r} must be in [0, 1]")
        labs = {d.name for d in self.dictionary.defs if d.rule.kind is RuleKind.LAB}
        fractions = self.lab_abnormal_fraction
        if isinstance(fractions, Mapping):
            for key, p in fractions.items():
                if key not in labs:
                    raise ConfigInvalid(f"lab_abnormal_fraction names unknown lab {key!r}")
                if not 0 <= p <= 1:
                    raise ConfigInvalid("lab abnormal fractions must be in [0, 1]")
        elif not 0 <= fractions <= 1:
            raise ConfigInvalid("lab_abnormal_fraction must be in [0, 1]")
        mix = self.demographics_mix
        _check_distribution("gender", mix.gender, Gender)
        _check_distribution("race", mix.race, Race)
        _check_distribution("ethnicity", mix.ethnicity, Ethnicity)
        lo, hi = mix.age_range
        if not 0 <= lo <= hi:
            raise ConfigInvalid("age_range must satisfy 0 <= low <= high")

    def abnormal_fraction(self, lab_name: str) -> float:
        fr = self.lab_abnormal_fraction
        return float(fr.get(lab_name, 0.5)) if isinstance(fr, Mapping) else float(fr)

    def with_seed(self, seed: int) -> "GeneratorConfig":
        return GeneratorConfig(**{**self._fields(), "seed": int(seed)})

    def _fields(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_dict(self) -> dict:
        fr = self.lab_abnormal_fraction
        return {
            "n_patients": self.n_patients,
            "study_window": [d.isoformat() for d in self.study_window],
            "encounter_rate": self.encounter_rate,
            "planted_beta": dict(self.planted_beta),
            "feature_prevalence": dict(self.feature_prevalence),
            "demographics_mix": self.demographics_mix.to_dict(),
            "seed": int(self.seed),
            "lab_abnormal_fraction": dict(fr) if isinstance(fr, Mapping) else fr,
            "case_min_prior_encounters": self.case_min_prior_encounters,
            "post_t0_noise_rate": self.post_t0_noise_rate,
            "incomplete_fraction": self.incomplete_fraction,
            **({} if self.dictionary == default_dictionary() else {"dictionary": self.dictionary.to_dict()}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: Mapping) -> "GeneratorConfig":
        if not isinstance(data, Mapping):
            raise ConfigInvalid("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys {sorted(unknown)}")
        kwargs: dict = {}
        try:
            for key, value in data.items():
                if key == "study_window":
                    start, end = value
                    kwargs[key] = (dt.date.fromisoformat(start), dt.date.fromisoformat(end))
                elif key == "demographics_mix":
                    kwargs[key] = DemographicsMix.from_dict(value)
                elif key == "dictionary":
                    kwargs[key] = FeatureDictionary.from_dict(value)
                elif key in ("planted_beta", "feature_prevalence"):
                    kwargs[key] = {str(k): float(v) for k, v in value.items()}
                elif key == "lab_abnormal_fraction":
                    kwargs[key] = (
                        {str(k): float(v) for k, v in value.items()}
                        if isinstance(value, Mapping)
                        else float(value)
                    )
                elif key in ("n_patients", "seed", "case_min_prior_encounters"):
                    if isinstance(value, bool) or not isinstance(value, int):
                        raise ConfigInvalid(f"{key} must be an integer")
                    kwargs[key] = value
                else:
                    kwargs[key] = float(value)
        except ConfigInvalid:
            raise
        except (TypeError, ValueError, KeyError, AttributeError) as exc:
            raise ConfigInvalid(f"malformed config: {exc}") from None
        return cls(**kwargs)

    @classmethod
    def read(cls, path) -> "GeneratorConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid(f"cannot read config: {exc}") from None
        return cls.from_dict(data)


def planted_truth(config: GeneratorConfig) -> dict[str, float]:
    """The exact coefficients used to draw labels."""
    return dict(config.planted_beta)


@dataclass
class SyntheticPopulation:
    patients: list[Patient]
    encounters: list[Encounter]
    labels: dict[str, int]
    latent: dict[str, dict[str, object]]
    beta: dict[str, float]

    def dataset(self) -> Dataset:
        return Dataset.from_records(self.patients, self.encounters)

    def truth(self) -> dict:
        return {
            "beta": dict(self.beta),
            "labels": dict(self.labels),
            "latent": {pid: dict(v) for pid, v in self.latent.items()},
        }


def _choice(rng, dist: Mapping[str, float]):
    keys = sorted(dist)
    p = np.array([dist[k] for k in keys], dtype=float)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


def _lab_value(rng, abnormal: bool) -> float:
    lo, hi = LAB_RANGE
    if not abnormal:
        return round(float(rng.uniform(lo, hi)), 1)
    if rng.random() < 0.5:
        return round(float(rng.uniform(0.2 * lo, 0.95 * lo)), 1)
    return round(float(rng.uniform(1.05 * hi, 2.0 * hi)), 1)


def _lab_event(rng, code, abnormal):
    return CodeEvent(EventKind.LAB, code, _lab_value(rng, abnormal), *LAB_RANGE)


def _pick_code(rng, codes) -> str:
    codes = sorted(codes)
    return codes[int(rng.integers(len(codes)))]


_KIND_OF = {
    RuleKind.FAMILY_HISTORY: EventKind.SUPPLEMENTAL,
    RuleKind.DIAGNOSIS: EventKind.DIAGNOSIS,
    RuleKind.SUPPLEMENTAL: EventKind.SUPPLEMENTAL,
    RuleKind.PROCEDURE: EventKind.PROCEDURE,
}


class _Generator:
    def __init__(self, config: GeneratorConfig):
        self.cfg = config
        self.dictionary = config.dictionary
        start, end = config.study_window
        self.start = start
        self.n_days = (end - start).days + 1
        self.years = self.n_days / 365.25
        self.beta = dict(config.planted_beta)
        width = max(1, len(str(config.n_patients)))
        self.ids = [f"p{i:0{width}d}" for i in range(1, config.n_patients + 1)]
        self.noise_defs = [
            d
            for d in self.dictionary.defs
            if d.rule.kind in (RuleKind.DIAGNOSIS, RuleKind.SUPPLEMENTAL, RuleKind.PROCEDURE)
        ]

    def _demographics(self, rng, pid):
        mix = self.cfg.demographics_mix
        gender = Gender(_choice(rng, mix.gender))
        race = Race(_choice(rng, mix.race))
        ethnicity = Ethnicity(_choice(rng, mix.ethnicity))
        lo, hi = mix.age_range
        age0 = int(rng.integers(lo, hi + 1))
        # born within the year ending age0 years before the window opens
        anchor = self.start.replace(year=self.start.year - age0)
        birth = anchor - dt.timedelta(days=int(rng.integers(364)))
        return gender, race, ethnicity, birth

    def _latent(self, rng, gender, race, ethnicity, age):
        raw: dict[str, object] = {}
        for d in self.dictionary.defs:
            kind = d.rule.kind
            if kind is RuleKind.DEMOGRAPHIC:
                field_name = d.rule.field
                raw[d.name] = {"gender": gender, "race": race, "ethnicity": ethnicity, "age": age}[field_name]
                continue
            p = self.cfg.feature_prevalence.get(d.name, 0.0)
            present = rng.random() < p
            if kind is RuleKind.LAB:
                if not present:
                    raw[d.name] = LabLevel.UNOBSERVED
                else:
                    abnormal = rng.random() < self.cfg.abnormal_fraction(d.name)
                    raw[d.name] = LabLevel.ABNORMAL if abnormal else LabLevel.NORMAL
            else:
                raw[d.name] = int(present)
        return raw

    def _label(self, rng, raw) -> int:
        row = expand_dummies(raw, self.dictionary)
        eta = self.beta[INTERCEPT] + sum(b * row[c] for c, b in self.beta.items() if c != INTERCEPT)
        return int(rng.random() < 1.0 / (1.0 + math.exp(-eta)))

    def _dates(self, rng, minimum: int) -> list[dt.date]:
        m = max(minimum, 1 + int(rng.poisson(self.cfg.encounter_rate * self.years)))
        m = min(m, self.n_days)
        days = np.sort(rng.choice(self.n_days, size=m, replace=False))
        return [self.start + dt.timedelta(days=int(x)) for x in days]

    def patient(self, pid: str):
        rng = substream(self.cfg.seed, "synth", pid)
        gender, race, ethnicity, birth = self._demographics(rng, pid)
        age = age_on(birth, self.start)
        raw = self._latent(rng, gender, race, ethnicity, age)
        label = self._label(rng, raw)

        k_prior = self.cfg.case_min_prior_encounters
        dates = self._dates(rng, k_prior + 1 if label else 1)
        m = len(dates)
        departments = [DEPARTMENTS[int(rng.integers(len(DEPARTMENTS) - 1))] for _ in range(m)]
        events: list[list[CodeEvent]] = [[] for _ in range(m)]
        if label:
            dx = int(rng.integers(k_prior, m))
            departments[dx] = CASE_DEPARTMENT
            events[dx].append(CodeEvent(EventKind.DIAGNOSIS, CASE_CODE))
            feature_slots = list(range(dx))
        else:
            dx = m
            feature_slots = [0]

        for d in self.dictionary.defs:
            kind = d.rule.kind
            value = raw[d.name]
            if kind is RuleKind.DEMOGRAPHIC:
                continue
            if kind is RuleKind.FAMILY_HISTORY:
                if value:
                    slot = int(rng.integers(m))
                    events[slot].append(CodeEvent(EventKind.SUPPLEMENTAL, _pick_code(rng, d.rule.codes)))
                continue
            if not feature_slots:
                continue
            if kind is RuleKind.LAB:
                if value is LabLevel.UNOBSERVED:
                    continue
                abnormal = value is LabLevel.ABNORMAL
                last = feature_slots[int(rng.integers(len(feature_slots)))]
                if last > 0 and rng.random() < 0.3:
                    # an older result with the opposite reading, superseded by the latest
                    earlier = int(rng.integers(last))
                    events[earlier].append(_lab_event(rng, d.rule.test, not abnormal))
                events[last].append(_lab_event(rng, d.rule.test, abnormal))
            elif value:
                slot = feature_slots[int(rng.integers(len(feature_slots)))]
                events[slot].append(CodeEvent(_KIND_OF[kind], _pick_code(rng, d.rule.codes)))

        if label:
            for j in range(dx + 1, m):
                if rng.random() < 0.5:
                    departments[j] = CASE_DEPARTMENT
                    events[j].append(CodeEvent(EventKind.DIAGNOSIS, CASE_CODE))
                if self.noise_defs and rng.random() < self.cfg.post_t0_noise_rate:
                    d = self.noise_defs[int(rng.integers(len(self.noise_defs)))]
                    events[j].append(CodeEvent(_KIND_OF[d.rule.kind], _pick_code(rng, d.rule.codes)))

        encounters = []
        for j in range(m):
            evs = events[j] or [CodeEvent(EventKind.DIAGNOSIS, FILLER_CODE)]
            encounters.append(Encounter(pid, dates[j], departments[j], tuple(evs)))

        if rng.random() < self.cfg.incomplete_fraction:
            patient = Patient(pid, birth, gender, None, ethnicity, frozenset({"incomplete_demographics"}))
        else:
            patient = Patient(pid, birth, gender, race, ethnicity)
        return patient, encounters, label, raw


def _latent_record(raw: Mapping[str, object], dictionary: FeatureDictionary) -> dict[str, object]:
    out: dict[str, object] = {}
    for d in dictionary.defs:
        value = raw[d.name]
        if d.rule.kind is RuleKind.DEMOGRAPHIC:
            continue
        if d.rule.kind is RuleKind.LAB:
            if value is not LabLevel.UNOBSERVED:
                out[d.name] = value.value
        elif value:
            out[d.name] = 1
    return out


def generate(config: GeneratorConfig) -> SyntheticPopulation:
    """Generate a population in memory. Deterministic in ``config``."""
    gen = _Generator(config)
    patients, encounters, labels, latent = [], [], {}, {}
    for pid in gen.ids:
        patient, encs, label, raw = gen.patient(pid)
        patients.append(patient)
        encounters.extend(encs)
        labels[pid] = label
        latent[pid] = _latent_record(raw, config.dictionary)
    return SyntheticPopulation(patients, encounters, labels, latent, planted_truth(config))


def generate_population(config: GeneratorConfig, out_dir) -> dict[str, Path]:
    """Write patients.jsonl, encounters.jsonl and truth.json under ``out_dir``."""
    pop = generate(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "patients": out / "patients.jsonl",
        "encounters": out / "encounters.jsonl",
        "truth": out / "truth.json",
    }
    write_jsonl(paths["patients"], pop.patients)
    write_jsonl(paths["encounters"], pop.encounters)
    paths["truth"].write_text(json.dumps(pop.truth(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def read_truth(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# Population rates for the analog experiment. Most codes are rare; signal is
# planted only in categories 2, 6, 8 and 9.
ANALOG_PREVALENCE = {
    "fh_ms": 0.006,
    "fh_mental_illness": 0.002,
    "fh_colon_cancer": 0.02,
    "fh_breast_cancer": 0.03,
    "fh_lupus": 0.004,
    "fh_thyroiditis": 0.005,
    "fh_diabetes": 0.04,
    "fh_ibd": 0.002,
    "inflammatory_bowel": 0.01,
    "celiac": 0.005,
    "uveitis": 0.003,
    "thyroiditis": 0.03,
    "lupus": 0.005,
    "rheumatoid_arthritis": 0.02,
    "sjogrens_syndrome": 0.003,
    "bells_palsy": 0.002,
    "guillain_barre": 0.001,
    "diabetes": 0.08,
    "vitamin_d_deficiency": 0.06,
    "mmr_infection": 0.002,
    "epstein_barr_virus": 0.002,
    "bipolar": 0.01,
    "schizophrenia": 0.004,
    "lymphoma": 0.003,
    "oral_cancer": 0.001,
    "breast_cancer": 0.02,
    "colon_cancer": 0.005,
    "hepatitis_vaccine": 0.03,
    "dtp_vaccine": 0.11,
    "polio_vaccine": 0.005,
    "influenza_vaccine": 0.15,
    "mmr_vaccine": 0.01,
    "varicella_vaccine": 0.005,
    "meningococcal_vaccine": 0.005,
    "pneumococcal_vaccine": 0.03,
    "hib_vaccine": 0.001,
    "hpv_vaccine": 0.03,
    "hysterectomy": 0.03,
    "oral_contraceptive": 0.012,
    "estrogen_replacement": 0.008,
    "obesity": 0.08,
    "abnormal_brain_mri": 0.01,
    "brain_mri": 0.05,
    "cervical_spine_mri": 0.02,
    "thoracic_spine_mri": 0.01,
    "esr": 0.05,
    "lyme": 0.01,
    "b12": 0.11,
    "ana_ssa": 0.03,
    "ana_ssb": 0.03,
    "ana_ds": 0.03,
    "anticardiolipin": 0.01,
    "zinc": 0.01,
    "csf_oligoclonal_bands": 0.01,
    "csf_igg_synthesis": 0.01,
}

# Eight planted columns, two per signal category: 11% of the FS9 columns,
# so a perfect selector would keep under 15%.
ANALOG_BETA = {
    INTERCEPT: 1.0,
    "diabetes": -2.0,
    "vitamin_d_deficiency": 2.0,
    "dtp_vaccine": -2.0,
    "hpv_vaccine": -2.0,
    "abnormal_brain_mri": 3.5,
    "brain_mri": 2.5,
    "csf_oligoclonal_bands:Unobserved": -3.0,
    "csf_oligoclonal_bands:ObservedNormal": -2.0,
}


def analog_config(seed: int = 0, n_patients: int = 10_000) -> GeneratorConfig:
    """Preset for the analog experiment (1:4 cohort of 3,685)."""
    return GeneratorConfig(
        n_patients=n_patients,
        encounter_rate=2.5,
        planted_beta=dict(ANALOG_BETA),
        feature_prevalence=dict(ANALOG_PREVALENCE),
        demographics_mix=DemographicsMix(
            gender={"F": 0.7, "M": 0.3},
            race={"White": 0.75, "Black": 0.12, "Asian": 0.04, "NativeAmerican": 0.01, "Other": 0.08},
            ethnicity={"Hispanic": 0.08, "NonHispanic": 0.92},
            age_range=(18, 80),
        ),
        seed=seed,
        lab_abnormal_fraction={"csf_oligoclonal_bands": 0.9},
    )
