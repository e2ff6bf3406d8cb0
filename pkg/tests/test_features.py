import random

import numpy as np
import pytest
from conftest import D, dataset, dx, enc, lab, patient, proc, vcode
from hypothesis import given
from hypothesis import strategies as st

from cohortrisk.cohort import CohortAssignment, Label
from cohortrisk.design import DesignMatrix
from cohortrisk.emr import Encounter, Race
from cohortrisk.errors import EmptyCohort, UnknownPatient
from cohortrisk.features import (
    DatedEvent,
    FeatureDictionary,
    LabLevel,
    Rule,
    RuleKind,
    build_design_matrix,
    default_dictionary,
    expand_dummies,
    extract_binary,
    extract_lab_level,
    truncate_history,
)

T0 = D(2010, 6, 1)
DICT = default_dictionary()


def test_truncation_strict_before_and_family_history_exempt():
    encs = [
        enc("p", D(2010, 6, 2), "X", dx("250.00")),
        enc("p", T0, "X", dx("268.9")),
        enc("p", D(2011, 3, 28), "X", vcode("V17.2")),
        enc("p", D(2010, 5, 31), "X", dx("714.0")),
    ]
    pre, fh = truncate_history(encs, T0, {"V17.2"})
    assert [e.event.code for e in pre] == ["714.0"]
    assert [e.event.code for e in fh] == ["V17.2"]


def test_extract_binary():
    rule = Rule(RuleKind.DIAGNOSIS, frozenset({"340"}))
    assert extract_binary([dx("340")], rule) == 1
    assert extract_binary([proc("340")], rule) == 0
    assert extract_binary([], rule) == 0


def test_lab_levels():
    assert extract_lab_level([], "B12") is LabLevel.UNOBSERVED
    normal = [DatedEvent(D(2010, 1, 1), lab("B12", 500, 200, 900))]
    abnormal = [DatedEvent(D(2010, 1, 1), lab("B12", 100, 200, 900))]
    assert extract_lab_level(normal, "B12") is LabLevel.NORMAL
    assert extract_lab_level(abnormal, "B12") is LabLevel.ABNORMAL


def test_lab_most_recent_wins():
    events = [
        DatedEvent(D(2009, 1, 1), lab("B12", 100, 200, 900)),
        DatedEvent(D(2010, 1, 1), lab("B12", 500, 200, 900)),
    ]
    assert extract_lab_level(events, "B12") is LabLevel.NORMAL
    assert extract_lab_level(events[::-1], "B12") is LabLevel.NORMAL


def test_expand_dummies_reference_levels():
    row = expand_dummies({"race": Race.ASIAN, "gender": None, "b12": LabLevel.ABNORMAL}, DICT)
    assert row["race:Asian"] == 1.0
    assert sum(v for k, v in row.items() if k.startswith("race:")) == 1.0
    assert "race:White" not in row
    assert row["b12:Unobserved"] == 0.0 and row["b12:ObservedNormal"] == 0.0
    from cohortrisk.emr import Gender

    assert expand_dummies({"gender": Gender.F}, DICT)["gender:F"] == 1.0
    assert expand_dummies({"gender": Gender.M}, DICT)["gender:F"] == 0.0


def test_feature_set_1_is_demographics_and_family_history():
    kinds = {d.rule.kind for d in DICT.upto(1)}
    assert kinds == {RuleKind.DEMOGRAPHIC, RuleKind.FAMILY_HISTORY}
    assert DICT.max_category == 9


def test_columns_cumulative():
    for k in range(1, 9):
        assert set(DICT.columns(k)) <= set(DICT.columns(k + 1))
    assert DICT.columns(9) == DICT.columns()


def test_dictionary_validation():
    d = DICT.defs[0]
    with pytest.raises(ValueError):
        FeatureDictionary((d, d))
    with pytest.raises(ValueError):
        FeatureDictionary((type(d)("x", 2, Rule(RuleKind.DIAGNOSIS, frozenset({"1"}))),))
    with pytest.raises(ValueError):
        Rule(RuleKind.DIAGNOSIS, frozenset())


def test_dictionary_json_roundtrip(tmp_path):
    path = tmp_path / "features.json"
    path.write_text(DICT.to_json())
    assert FeatureDictionary.read(path) == DICT


def _world():
    pats = [patient("case"), patient("ctrl", race=Race.ASIAN)]
    encs = [
        enc("case", D(2009, 1, 1), "X", dx("250.00"), lab("B12", 50, 100, 200)),
        enc("case", T0, "Neurology", dx("340")),
        enc("case", D(2011, 1, 1), "X", vcode("V17.2"), dx("268.9")),
        enc("ctrl", D(2009, 1, 1), "X", proc("70551")),
        enc("ctrl", T0, "X"),
    ]
    assignments = [CohortAssignment("case", Label.CASE, T0), CohortAssignment("ctrl", Label.CONTROL, T0, "case")]
    return assignments, dataset(pats, encs)


def test_build_design_matrix_values():
    assignments, ds = _world()
    m = build_design_matrix(assignments, ds, DICT, 9)
    assert m.row_ids == ("case", "ctrl")
    assert list(m.labels) == [1.0, 0.0]
    assert m.column("diabetes").tolist() == [1.0, 0.0]
    assert m.column("vitamin_d_deficiency").tolist() == [0.0, 0.0]
    assert m.column("fh_ms").tolist() == [1.0, 0.0]
    assert m.column("brain_mri").tolist() == [0.0, 1.0]
    assert m.column("b12:Unobserved").tolist() == [0.0, 1.0]
    assert m.column("b12:ObservedNormal").tolist() == [0.0, 0.0]
    assert m.column("race:Asian").tolist() == [0.0, 1.0]
    assert m.column("age").tolist() == [30.0, 30.0]


def test_build_errors():
    assignments, ds = _world()
    with pytest.raises(EmptyCohort):
        build_design_matrix([], ds, DICT, 1)
    with pytest.raises(UnknownPatient):
        build_design_matrix([CohortAssignment("ghost", Label.CASE, T0)], ds, DICT, 1)
    with pytest.raises(ValueError):
        build_design_matrix(assignments, ds, DICT, 0)


def test_design_csv_roundtrip(tmp_path):
    assignments, ds = _world()
    m = build_design_matrix(assignments, ds, DICT, 9)
    path = tmp_path / "design.csv"
    m.write_csv(path)
    text = path.read_text()
    assert text.startswith("patient_id,label,gender:F,")
    again = DesignMatrix.read_csv(path)
    assert again.column_names == m.column_names
    np.testing.assert_array_equal(again.values, m.values)


def _groups():
    groups = {}
    for col, name in DICT.column_groups().items():
        groups.setdefault(name, []).append(col)
    return [cols for cols in groups.values() if len(cols) > 1]


codes_by_kind = sorted({(d.rule.kind, c) for d in DICT.defs for c in d.rule.codes})
tests = sorted({d.rule.test for d in DICT.defs if d.rule.kind is RuleKind.LAB})


@st.composite
def histories(draw):
    from cohortrisk.emr import CodeEvent, EventKind

    kind_map = {
        RuleKind.DIAGNOSIS: EventKind.DIAGNOSIS,
        RuleKind.SUPPLEMENTAL: EventKind.SUPPLEMENTAL,
        RuleKind.FAMILY_HISTORY: EventKind.SUPPLEMENTAL,
        RuleKind.PROCEDURE: EventKind.PROCEDURE,
    }
    encs = []
    for _ in range(draw(st.integers(1, 6))):
        day = D(2009, 1, 1).toordinal() + draw(st.integers(0, 900))
        evs = []
        for _ in range(draw(st.integers(0, 4))):
            if draw(st.booleans()):
                kind, code = draw(st.sampled_from(codes_by_kind))
                evs.append(CodeEvent(kind_map[kind], code))
            else:
                evs.append(CodeEvent(EventKind.LAB, draw(st.sampled_from(tests)), draw(st.sampled_from([50.0, 150.0])), 100.0, 200.0))
        encs.append(Encounter("p", D.fromordinal(day), "X", tuple(evs)))
    return encs


@given(histories(), st.randoms(use_true_random=False))
def test_design_row_properties(encs, rnd):
    pats = [patient("p")]
    a = [CohortAssignment("p", Label.CASE, D(2010, 1, 1))]
    m = build_design_matrix(a, dataset(pats, encs), DICT, 9)
    for cols in _groups():
        assert m.values[0, [m.column_index(c) for c in cols]].sum() <= 1
    for name in m.column_names:
        if name != "age":
            assert m.column(name)[0] in (0.0, 1.0)
    shuffled = [Encounter(e.patient_id, e.date, e.department, tuple(rnd.sample(e.events, len(e.events)))) for e in encs]
    rnd.shuffle(shuffled)
    again = build_design_matrix(a, dataset(pats, shuffled), DICT, 9)
    np.testing.assert_array_equal(m.values, again.values)


def test_same_date_lab_results_order_independent():
    events = [DatedEvent(T0, lab("B12", 50, 100, 200)), DatedEvent(T0, lab("B12", 150, 100, 200))]
    levels = {extract_lab_level(random.Random(s).sample(events, 2), "B12") for s in range(10)}
    assert len(levels) == 1
