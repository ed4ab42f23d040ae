import math

import numpy as np
import pytest

from icforest.core import (DataError, Dataset, Interval, Schema, check_case_weights,
                           check_prediction_weights, load_csv, write_csv)


class TestInterval:
    def test_exact_and_censored(self):
        assert Interval(2.0, 2.0).is_exact
        assert Interval(1.0, math.inf).is_right_censored

    def test_open_left_closed_right(self):
        iv = Interval(1.0, 2.0)
        assert not iv.contains(1.0)
        assert iv.contains(2.0)
        assert Interval(3.0, 3.0).contains(3.0)

    @pytest.mark.parametrize("left,right", [(-1.0, 2.0), (3.0, 2.0)])
    def test_invalid(self, left, right):
        with pytest.raises(DataError):
            Interval(left, right)


class TestSchema:
    def test_kinds(self, schema2):
        assert schema2.names == ["age", "grp"]
        np.testing.assert_array_equal(schema2.nominal_mask(), [False, True])
        assert schema2.covariates[1].n_levels == 3

    def test_labels(self):
        s = Schema.from_dict({"col": ["red", "blue"]})
        assert s.parse_value(0, "blue") == 2.0
        assert s.format_value(0, 1.0) == "red"
        with pytest.raises(ValueError, match="unknown nominal level"):
            s.parse_value(0, "green")

    def test_integer_level_spellings(self, schema2):
        assert schema2.parse_value(1, "3.0") == 3.0

    def test_fingerprint_stable(self, schema2):
        again = Schema.from_dict(schema2.to_dict())
        assert again.fingerprint() == schema2.fingerprint()
        other = Schema.from_dict({"age": "numeric", "grp": "nominal:4"})
        assert other.fingerprint() != schema2.fingerprint()

    @pytest.mark.parametrize("spec", [{}, {"a": "float"}, {"a": "nominal:x"}, {"a": "nominal:0"}])
    def test_bad(self, spec):
        with pytest.raises(DataError):
            Schema.from_dict(spec)


class TestDataset:
    def test_readonly(self, toy):
        with pytest.raises(ValueError):
            toy.left[0] = 1.0

    def test_left_gt_right(self, schema2):
        with pytest.raises(DataError, match="row 2"):
            Dataset([0, 2], [1, 1], [[0.1, 1], [0.2, 2]], schema2)

    def test_nominal_range(self, schema2):
        with pytest.raises(DataError, match="outside 1..3"):
            Dataset([0], [1], [[0.1, 4]], schema2)

    def test_subset(self, toy):
        sub = toy.subset([3, 1])
        np.testing.assert_array_equal(sub.left, toy.left[[3, 1]])


class TestWeights:
    def test_case_weights(self):
        np.testing.assert_array_equal(check_case_weights(np.array([0, 2.0, 1]), 3), [0, 2, 1])
        with pytest.raises(ValueError):
            check_case_weights(np.array([0.5, 1]), 2)
        with pytest.raises(ValueError):
            check_case_weights(np.zeros(2), 2)

    def test_prediction_weights(self):
        check_prediction_weights(np.array([0.25, 0.75]), 2)
        with pytest.raises(ValueError):
            check_prediction_weights(np.array([0.5, 0.4]), 2)


class TestCSV:
    def test_round_trip(self, toy, tmp_path):
        p = tmp_path / "d.csv"
        write_csv(toy, p)
        back = load_csv(p, toy.schema)
        np.testing.assert_array_equal(back.left, toy.left)
        np.testing.assert_array_equal(back.right, toy.right)
        np.testing.assert_array_equal(back.X, toy.X)
        p2 = tmp_path / "e.csv"
        write_csv(back, p2)
        assert p.read_bytes() == p2.read_bytes()

    def test_column_order_by_name(self, schema2, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("left,right,grp,age\n0,1,2,0.5\n1,inf,3,0.25\n")
        d = load_csv(p, schema2)
        np.testing.assert_array_equal(d.X, [[0.5, 2], [0.25, 3]])
        assert math.isinf(d.right[1])

    @pytest.mark.parametrize("body,msg", [
        ("0,1,0.5\n", "malformed row 1"),
        ("0,1,0.5,2\n0,x,0.5,1\n", "malformed row 2"),
        ("2,1,0.5,1\n", "left > right at row 1"),
        ("0,1,0.5,9\n", "unknown nominal level"),
    ])
    def test_errors(self, schema2, tmp_path, body, msg):
        p = tmp_path / "d.csv"
        p.write_text("left,right,age,grp\n" + body)
        with pytest.raises(DataError, match=msg):
            load_csv(p, schema2)
