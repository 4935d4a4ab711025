import os

import numpy as np
import pytest

from bayesfp.data import DataError, from_arrays, load_csv, schema_of, split, write_csv
from conftest import DATA

ART_SCHEMA = {"x4": {"kind": "categorical", "levels": ["1", "2", "3"], "names": ["x4a", "x4b"]}}
GBSG_SCHEMA = {"age": "continuous", "nodes": "continuous", "meno": "binary",
               "grade": {"kind": "categorical", "levels": ["1", "2", "3"]}}


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestLoadCsv:
    def test_categorical_expansion_uses_first_level_as_baseline(self):
        ds = load_csv(os.path.join(DATA, "art_predictors.csv"), ART_SCHEMA, None)
        assert ds.names == ["x4a", "x4b"]
        raw = np.loadtxt(os.path.join(DATA, "art_predictors.csv"), delimiter=",", skiprows=1)[:, 3]
        assert np.array_equal(ds.column("x4a").values, (raw == 2).astype(float))
        assert np.array_equal(ds.column("x4b").values, (raw == 3).astype(float))
        assert ds.column("x4a").group == "x4"
        assert not ds.column("x4a").admits_transforms

    def test_gbsg_counts(self):
        ds = load_csv(os.path.join(DATA, "gbsg.csv"), GBSG_SCHEMA, "time", "timetoevent", "status")
        assert ds.n == 686
        assert int(ds.response.status.sum()) == 299

    def test_missing_value_is_rejected(self, tmp_path):
        p = _write(tmp_path, "x,y\n1,2\nNA,3\n")
        with pytest.raises(DataError, match="non-numeric"):
            load_csv(p, {"x": "continuous"}, "y")

    def test_bad_binary(self, tmp_path):
        p = _write(tmp_path, "x,y\n1,2\n2,3\n")
        with pytest.raises(DataError, match="binary"):
            load_csv(p, {"x": "binary"}, "y")

    def test_nonpositive_event_time(self, tmp_path):
        p = _write(tmp_path, "x,t,s\n1,0,1\n2,3,0\n")
        with pytest.raises(DataError, match="strictly positive"):
            load_csv(p, {"x": "continuous"}, "t", "timetoevent", "s")

    def test_missing_column(self, tmp_path):
        p = _write(tmp_path, "x,y\n1,2\n2,3\n")
        with pytest.raises(DataError, match="'z'"):
            load_csv(p, {"z": "continuous"}, "y")

    def test_shift_for_nonpositive_column(self, tmp_path):
        p = _write(tmp_path, "x,w,y\n0,1,2\n2,3,3\n-1,2,1\n")
        ds = load_csv(p, {"x": "continuous", "w": "continuous"}, "y")
        assert ds.column("x").shift == pytest.approx(1 + 1e-5)
        assert ds.column("w").shift == 0.0

    def test_round_trip(self, tmp_path, cox_ds):
        p = str(tmp_path / "rt.csv")
        write_csv(cox_ds, p, "time", "status")
        back = load_csv(p, schema_of(cox_ds), "time", "timetoevent", "status")
        for a, b in zip(cox_ds.columns, back.columns):
            assert np.array_equal(a.values, b.values)
        assert np.array_equal(back.response.y, cox_ds.response.y)
        assert np.array_equal(back.response.status, cox_ds.response.status)


class TestSplit:
    def test_sizes_and_disjoint(self, gaussian_ds):
        tr, te = split(gaussian_ds, 0.75, 3)
        assert tr.n == 60 and te.n == 20

    def test_deterministic(self, gaussian_ds):
        a, _ = split(gaussian_ds, 0.5, 9)
        b, _ = split(gaussian_ds, 0.5, 9)
        assert np.array_equal(a.response.y, b.response.y)

    def test_stratified_censoring_proportion(self):
        ds = load_csv(os.path.join(DATA, "gbsg.csv"), GBSG_SCHEMA, "time", "timetoevent", "status")
        tr, te = split(ds, 457.5 / 686, 1, stratify_on_status=True)
        assert tr.n == 457
        p_tr = 1 - tr.response.status.mean()
        p_te = 1 - te.response.status.mean()
        assert abs(p_tr * tr.n - round(387 * 457 / 686)) <= 1
        assert abs(p_tr - p_te) < 0.01

    def test_stratify_requires_survival(self, gaussian_ds):
        with pytest.raises(DataError):
            split(gaussian_ds, 0.5, 1, stratify_on_status=True)

    def test_bad_fraction(self, gaussian_ds):
        with pytest.raises(DataError):
            split(gaussian_ds, 1.0, 1)


class TestFromArrays:
    def test_non_finite(self):
        with pytest.raises(DataError):
            from_arrays({"x": [1.0, np.nan]}, [1.0, 2.0])
