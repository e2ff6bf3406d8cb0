import datetime as dt
from collections import Counter

import numpy as np
import pytest
from conftest import D, dataset, dx, enc, patient
from scipy.stats import chisquare

from cohortrisk.cohort import (
    Cohort,
    CohortSpec,
    Label,
    assign_control_t0,
    build_cohort,
    control_pool,
    encounter_histogram,
    filter_eligible,
    identify_cases,
    match_controls,
)
from cohortrisk.emr import Gender
from cohortrisk.errors import InsufficientPool, NoEncounters


def test_case_t0_is_earliest_neurology_340():
    ds = dataset(
        [patient("p1")],
        [enc("p1", D(2009, 1, 1), "Neurology", dx("340")), enc("p1", D(2008, 5, 1), "Neurology", dx("340"))],
    )
    assert identify_cases(ds, CohortSpec()) == [("p1", D(2008, 5, 1))]


def test_department_filter_and_absent_code():
    ds = dataset(
        [patient("p1"), patient("p2")],
        [enc("p1", D(2009, 1, 1), "Internal Medicine", dx("340")), enc("p2", D(2009, 1, 1), "Neurology", dx("250.00"))],
    )
    assert identify_cases(ds, CohortSpec()) == []


def test_eligibility_rules():
    spec = CohortSpec()
    ds = dataset(
        [patient("first"), patient("teen", birth=D(1995, 1, 1)), patient("ok", birth=D(1980, 1, 1))],
        [
            enc("first", D(2010, 1, 1), "Neurology", dx("340")),
            enc("teen", D(2011, 1, 1)),
            enc("teen", D(2012, 6, 1), "Neurology", dx("340")),
            enc("ok", D(2009, 1, 1)),
            enc("ok", D(2009, 6, 1)),
            enc("ok", D(2010, 3, 1), "Neurology", dx("340")),
        ],
    )
    kept = filter_eligible(identify_cases(ds, spec), ds, spec)
    assert kept == [("ok", D(2010, 3, 1))]


def test_incomplete_demographics_excluded():
    p = patient("p1")
    incomplete = type(p)(p.id, p.birth_date, None, p.race, p.ethnicity)
    ds = dataset([incomplete], [enc("p1", D(2009, 1, 1)), enc("p1", D(2010, 1, 1), "Neurology", dx("340"))])
    spec = CohortSpec()
    assert filter_eligible(identify_cases(ds, spec), ds, spec) == []


def _one_case_world(n_controls, control_gender=Gender.F):
    pats = [patient("case", birth=D(1970, 1, 1))]
    encs = [enc("case", D(2009, 1, 1)), enc("case", D(2010, 1, 1), "Neurology", dx("340"))]
    for i in range(n_controls):
        pid = f"c{i}"
        pats.append(patient(pid, birth=D(1970, 1, 1), gender=control_gender))
        encs.append(enc(pid, D(2010, 1, 1)))
    return dataset(pats, encs)


def test_match_four_distinct_controls_deterministic():
    ds = _one_case_world(10)
    spec = CohortSpec(seed=7)
    a1 = build_cohort(ds, spec).assignments
    a2 = build_cohort(ds, spec).assignments
    assert a1 == a2
    controls = [a for a in a1 if a.label is Label.CONTROL]
    assert len(controls) == 4 and len({a.patient_id for a in controls}) == 4
    assert all(a.matched_case_id == "case" for a in controls)


def test_insufficient_pool_names_case():
    ds = _one_case_world(3)
    with pytest.raises(InsufficientPool) as err:
        build_cohort(ds, CohortSpec())
    assert "case" in str(err.value)


def test_gender_mismatch_does_not_match():
    ds = _one_case_world(10, control_gender=Gender.M)
    with pytest.raises(InsufficientPool):
        build_cohort(ds, CohortSpec())


def test_ratio_two():
    cohort = build_cohort(_one_case_world(10), CohortSpec(controls_per_case=2))
    labels = Counter(a.label for a in cohort.assignments)
    assert labels == {Label.CASE: 1, Label.CONTROL: 2}


def test_max_cases_caps_then_matches():
    pats, encs = [], []
    for i in range(20):
        pats.append(patient(f"case{i}", birth=D(1970, 1, 1)))
        encs += [enc(f"case{i}", D(2009, 1, 1)), enc(f"case{i}", D(2010, 1, 1), "Neurology", dx("340"))]
    for i in range(60):
        pats.append(patient(f"c{i}", birth=D(1970, 1, 1)))
        encs.append(enc(f"c{i}", D(2010, 1, 1)))
    cohort = build_cohort(dataset(pats, encs), CohortSpec(max_cases=10))
    assert cohort.eligible_cases == 20
    assert sum(a.label is Label.CASE for a in cohort.assignments) == 10
    assert len(cohort.assignments) == 50


def test_control_t0_singleton_and_determinism():
    ds = dataset([patient("p1")], [enc("p1", D(2010, 3, 3))])
    assert assign_control_t0("p1", ds, 0) == D(2010, 3, 3)
    ds3 = dataset([patient("p1")], [enc("p1", D(2010, 1, 1)), enc("p1", D(2011, 1, 1)), enc("p1", D(2012, 1, 1))])
    assert assign_control_t0("p1", ds3, 42) == assign_control_t0("p1", ds3, 42)


def test_control_t0_no_encounters():
    ds = dataset([patient("p1")], [])
    with pytest.raises(NoEncounters):
        assign_control_t0("p1", ds, 0)


def test_control_t0_uniform_over_10000_seeds():
    dates = [D(2010, 1, 1), D(2011, 1, 1), D(2012, 1, 1)]
    ds = dataset([patient("p1")], [enc("p1", d) for d in dates] + [enc("p1", dates[0], "Neurology")])
    counts = Counter(assign_control_t0("p1", ds, s) for s in range(10_000))
    observed = [counts[d] for d in dates]
    assert sum(observed) == 10_000
    # uniform over distinct dates, so the duplicated first date gets no extra weight
    assert chisquare(observed).pvalue > 0.001


def test_pool_excludes_cases_and_encounterless():
    ds = dataset([patient("a"), patient("b"), patient("c")], [enc("a", D(2010, 1, 1)), enc("b", D(2010, 1, 1))])
    assert control_pool(ds, ["a"], CohortSpec()) == ["b"]


def test_age_tolerance_respected():
    ds = _one_case_world(0)
    pats = list(ds.patients.values())
    encs = list(ds.encounters)
    for i, year in enumerate([1968, 1969, 1970, 1971, 1972, 1969, 1971, 1970]):
        pats.append(patient(f"c{i}", birth=D(year, 1, 1)))
        encs.append(enc(f"c{i}", D(2010, 1, 1)))
    ds = dataset(pats, encs)
    cohort = build_cohort(ds, CohortSpec(seed=3))
    case_age = ds.patients["case"].age_on(D(2010, 1, 1))
    for a in cohort.assignments:
        if a.label is Label.CONTROL:
            assert abs(ds.patients[a.patient_id].age_on(a.t0) - case_age) <= 1


def test_encounter_histogram_rules():
    ds = dataset(
        [patient("p1")],
        [
            enc("p1", D(2009, 12, 31)),
            enc("p1", D(2009, 12, 31)),
            enc("p1", D(2010, 1, 1), "Neurology", dx("340")),
        ],
    )
    spec = CohortSpec()
    cases = identify_cases(ds, spec)
    from cohortrisk.cohort import CohortAssignment

    hist = encounter_histogram([CohortAssignment("p1", Label.CASE, cases[0][1])], ds)
    assert hist == {1: (1, 0)}
    assert encounter_histogram([], ds) == {}


def test_cohort_json_roundtrip(tmp_path):
    cohort = build_cohort(_one_case_world(10), CohortSpec(seed=11))
    path = tmp_path / "cohort.json"
    cohort.write(path)
    again = Cohort.read(path)
    assert again.assignments == cohort.assignments
    assert again.spec == cohort.spec and again.seed == 11


def test_spec_rejects_bad_values():
    with pytest.raises(ValueError):
        CohortSpec(controls_per_case=0)
    with pytest.raises(ValueError):
        CohortSpec(age_tolerance_years=-1)
    with pytest.raises(ValueError):
        CohortSpec.from_dict({"bogus": 1})


def test_match_controls_visits_cases_in_shuffled_order():
    # two cases competing for the same four controls plus four more: both fill
    pats = [patient("a", birth=D(1970, 1, 1)), patient("b", birth=D(1970, 1, 1))]
    encs = []
    for pid in ("a", "b"):
        encs += [enc(pid, D(2009, 1, 1)), enc(pid, D(2010, 1, 1), "Neurology", dx("340"))]
    for i in range(8):
        pats.append(patient(f"c{i}", birth=D(1970, 1, 1)))
        encs.append(enc(f"c{i}", D(2010, 1, 1)))
    ds = dataset(pats, encs)
    spec = CohortSpec(seed=1)
    cases = filter_eligible(identify_cases(ds, spec), ds, spec)
    out = match_controls(cases, control_pool(ds, ["a", "b"], spec), spec, ds)
    used = [a.patient_id for a in out if a.label is Label.CONTROL]
    assert len(used) == len(set(used)) == 8
    assert np.all([a.t0 == dt.date(2010, 1, 1) for a in out if a.label is Label.CONTROL])
