"""
Тесты модели данных: загрузка опроса и населения, доли областей, перекрытие
"""

import numpy as np
import pandas as pd
import pytest

from core.data_model import (
    CovariateSchema,
    check_overlap,
    load_population,
    load_survey,
    natural_key,
    population_area_shares,
    save_population,
)
from core.errors import ParseError, SchemaError, ValidationError

from helpers import make_population, make_survey, survey_rows


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_survey_four_rows(tmp_path, schema):
    path = write(tmp_path / "survey.csv", "area,outcome,sex,pid\nA,1,m,d\nA,0,f,r\nB,1,m,r\nB,0,f,d\n")
    survey = load_survey(path, schema)
    assert survey.n == 4
    assert survey.observed_areas() == ["A", "B"]
    assert list(survey.codes["sex"]) == [0, 1, 0, 1]
    assert list(survey.codes["pid"]) == [0, 1, 1, 0]
    assert not survey.has_national_weight


def test_byte_order_mark_is_ignored(tmp_path, schema):
    survey = load_survey(write(tmp_path / "survey.csv", "\ufeffarea,outcome,sex,pid\nA,1,m,d\nB,0,f,r\n"), schema)
    assert survey.observed_areas() == ["A", "B"]
    table = load_population(write(tmp_path / "pop.csv", "\ufeffarea,count,sex\nA,10,m\nB,20,f\n"), schema)
    assert table.total == 30.0


def test_unknown_level_reports_row_and_column(tmp_path, schema):
    path = write(tmp_path / "survey.csv", "area,outcome,sex,pid\nA,1,m,d\nA,0,x,r\n")
    with pytest.raises(SchemaError) as exc:
        load_survey(path, schema)
    assert exc.value.details["row"] == 2
    assert exc.value.details["column"] == "sex"
    assert exc.value.exit_code == 3


def test_uniform_national_weight(tmp_path, schema):
    path = write(tmp_path / "survey.csv", "area,outcome,sex,pid,weight\nA,1,m,d,1.0\nB,0,f,r,1.0\n")
    survey = load_survey(path, schema)
    assert survey.has_national_weight
    assert np.array_equal(survey.national_weight, [1.0, 1.0])


def test_zero_weight_rejected(tmp_path, schema):
    path = write(tmp_path / "survey.csv", "area,outcome,sex,pid,weight\nA,1,m,d,1.0\nB,0,f,r,0\n")
    with pytest.raises(ValidationError) as exc:
        load_survey(path, schema)
    assert exc.value.details["row"] == 2


def test_missing_outcome_value_and_column(tmp_path, schema):
    with pytest.raises(ParseError):
        load_survey(write(tmp_path / "a.csv", "area,outcome,sex,pid\nA,,m,d\n"), schema)
    with pytest.raises(ParseError):
        load_survey(write(tmp_path / "b.csv", "area,sex,pid\nA,m,d\n"), schema)


def test_missing_survey_covariate_rejected(tmp_path, schema):
    with pytest.raises(SchemaError):
        load_survey(write(tmp_path / "a.csv", "area,outcome,sex,pid\nA,1,m,\n"), schema)


def test_undeclared_column_rejected(tmp_path, schema):
    with pytest.raises(ParseError):
        load_survey(write(tmp_path / "a.csv", "area,outcome,sex,pid,age\nA,1,m,d,30\n"), schema)


def test_respondent_id_preserved(tmp_path, schema):
    path = write(tmp_path / "survey.csv", "respondent_id,area,outcome,sex,pid\nr7,A,1,m,d\nr9,B,0,f,r\n")
    survey = load_survey(path, schema)
    assert list(survey.respondent_id) == ["r7", "r9"]


def test_survey_arrays_are_read_only(schema):
    survey = make_survey(schema, survey_rows(["A", "B"], ["m", "f"], ["d", "r"], [1, 0]))
    with pytest.raises(ValueError):
        survey.outcome[0] = 5.0


def test_schema_variables_must_be_disjoint():
    with pytest.raises(SchemaError):
        CovariateSchema.from_levels({"sex": ["m", "f"]}, {"sex": ["m", "f"]})
    with pytest.raises(SchemaError):
        CovariateSchema.from_levels({"area": ["1", "2"]})


def test_population_duplicates_are_summed(tmp_path, schema):
    path = write(tmp_path / "pop.csv", "area,count,sex\nA,10,m\nA,5,m\nA,20,f\n")
    table = load_population(path, schema)
    assert table.cell_count(("m",), "A") == 15.0
    assert table.total == 35.0


def test_population_single_area_shares_are_one(tmp_path, schema):
    table = load_population(write(tmp_path / "pop.csv", "area,count,sex\nA,10,m\nA,20,f\n"), schema)
    shares = population_area_shares(table)
    assert np.array_equal(shares.shares, np.ones((2, 1)))


def test_population_empty_and_negative(tmp_path, schema):
    with pytest.raises(ValidationError):
        load_population(write(tmp_path / "empty.csv", ""), schema)
    with pytest.raises(ValidationError):
        load_population(write(tmp_path / "header.csv", "area,count,sex\n"), schema)
    with pytest.raises(ValidationError):
        load_population(write(tmp_path / "neg.csv", "area,count,sex\nA,-1,m\nA,5,f\n"), schema)
    with pytest.raises(ParseError):
        load_population(write(tmp_path / "noarea.csv", "count,sex\n1,m\n"), schema)


def test_area_shares_example(schema):
    table = make_population(schema, {("m", "A"): 30, ("m", "B"): 10, ("f", "A"): 10, ("f", "B"): 10})
    shares = population_area_shares(table)
    np.testing.assert_allclose(shares.share_for(("m",)), [0.75, 0.25], rtol=0, atol=1e-15)
    np.testing.assert_allclose(shares.share_for(("f",)), [0.5, 0.5], rtol=0, atol=1e-15)
    np.testing.assert_allclose(shares.shares.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_marginal_area_shares(schema):
    table = make_population(schema, {("m", "A"): 40, ("m", "B"): 10, ("f", "A"): 40, ("f", "B"): 10})
    np.testing.assert_allclose(population_area_shares(table).marginal, [0.8, 0.2], rtol=0, atol=1e-15)


def test_zero_mass_profile_flagged(schema):
    table = make_population(schema, {("m", "A"): 40, ("m", "B"): 10, ("f", "A"): 0})
    shares = population_area_shares(table)
    assert shares.zero_profiles == (("f",),)
    assert shares.share_for(("f",)) is None
    assert np.all(np.isnan(shares.lookup(np.array([1]))))


def test_population_round_trip(tmp_path, schema):
    table = make_population(schema, {("m", "A"): 0.1, ("m", "B"): 1 / 3, ("f", "A"): 7.25, ("f", "B"): 1e6})
    save_population(table, tmp_path / "pop.csv")
    again = load_population(tmp_path / "pop.csv", schema)
    assert again.areas == table.areas
    assert np.array_equal(again.counts, table.counts)


def test_areas_sorted_naturally(schema):
    table = make_population(schema, {("m", "10"): 1, ("m", "2"): 1, ("f", "1"): 1, ("f", "2"): 1, ("f", "10"): 1, ("m", "1"): 1})
    assert table.areas == ("1", "2", "10")
    assert sorted(["CD-10", "CD-2"], key=natural_key) == ["CD-2", "CD-10"]


def test_overlap_full_coverage_is_empty(schema):
    table = make_population(schema, {("m", "A"): 5, ("f", "A"): 5, ("m", "B"): 5, ("f", "B"): 5})
    survey = make_survey(schema, survey_rows(["A", "A", "B", "B"], ["m", "f", "m", "f"], ["d"] * 4, [1, 0, 1, 0]))
    assert check_overlap(survey, table).is_empty


def test_overlap_absent_profile_raises_both_concerns(schema):
    table = make_population(schema, {("m", "A"): 5, ("f", "A"): 5, ("m", "B"): 5, ("f", "B"): 5})
    survey = make_survey(schema, survey_rows(["A", "B"], ["m", "m"], ["d", "r"], [1, 0]))
    report = check_overlap(survey, table)
    assert report.sampling_overlap_concern and report.area_overlap_concern
    assert ("f",) in report.missing_cells["A"] and ("f",) in report.missing_cells["B"]
    assert report.partial_profiles[("f",)] == ["A", "B"]


def test_overlap_partial_profile(schema):
    table = make_population(schema, {("m", "A"): 5, ("f", "A"): 5, ("m", "B"): 5, ("f", "B"): 5})
    survey = make_survey(schema, survey_rows(["A", "A", "B"], ["m", "f", "f"], ["d"] * 3, [1, 0, 1]))
    report = check_overlap(survey, table)
    assert report.partial_profiles == {("m",): ["B"]}
    assert report.missing_cells == {"B": [("m",)]}


def test_survey_areas_must_exist_in_population(schema):
    table = make_population(schema, {("m", "A"): 5, ("f", "A"): 5})
    survey = make_survey(schema, survey_rows(["A", "Z"], ["m", "f"], ["d", "r"], [1, 0]))
    with pytest.raises(ValidationError):
        check_overlap(survey, table)


def test_to_frame_keeps_levels(schema):
    survey = make_survey(schema, survey_rows(["A", "B"], ["m", "f"], ["d", "r"], [1, 0]), weights=[2.0, 3.0])
    frame = survey.to_frame()
    assert isinstance(frame, pd.DataFrame)
    assert list(frame["sex"]) == ["m", "f"]
    assert list(frame["weight"]) == [2.0, 3.0]
