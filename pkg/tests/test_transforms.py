import numpy as np
import pytest

from bayesfp.data import from_arrays
from bayesfp.transforms import (ALL_TRANSFORMS, F1, F2, IDENTITY, DomainError, Feature, Transform,
                                apply_transform, enumerate_terms, evaluate_feature, parse_feature,
                                required_shift)


class TestTransform:
    def test_sixteen_forms(self):
        assert len(ALL_TRANSFORMS) == 16 and len(F1) == 7 and len(F2) == 8

    def test_classes(self):
        assert IDENTITY.fp_class == 0
        assert all(t.fp_class == 1 for t in F1)
        assert all(t.fp_class == 2 for t in F2)

    @pytest.mark.parametrize("power, expected", [(-2, 0.25), (-1, 0.5), (-0.5, 2 ** -0.5), (0, np.log(2)),
                                                 (0.5, 2 ** 0.5), (1, 2.0), (2, 4.0), (3, 8.0)])
    def test_powers_at_two(self, power, expected):
        assert apply_transform(np.array([2.0]), Transform(power))[0] == pytest.approx(expected)

    def test_log_multiplied(self):
        v = apply_transform(np.array([np.e]), Transform(-0.5, True))[0]
        assert v == pytest.approx(np.e ** -0.5)
        assert apply_transform(np.array([np.e]), Transform(0, True))[0] == pytest.approx(1.0)

    def test_domain_error_not_nan(self):
        with pytest.raises(DomainError):
            apply_transform(np.array([0.0, 1.0]), Transform(0.0))

    def test_identity_allows_negative(self):
        assert apply_transform(np.array([-1.0]), IDENTITY)[0] == -1.0

    def test_invalid_power(self):
        with pytest.raises(ValueError):
            Transform(0.3)

    def test_shift(self):
        assert required_shift(np.array([0.0, 1.0])) == pytest.approx(1e-5)
        assert required_shift(np.array([-2.0, 1.0])) == pytest.approx(2 + 1e-5)
        assert required_shift(np.array([0.1, 1.0])) == 0.0


class TestFeature:
    @pytest.mark.parametrize("text", ["x3^(-0.5)", "log(x6)", "x3^(-0.5)*log(x3)", "x1*log(x1)",
                                      "log(x1)*log(x1)", "x1^(0.5)*x3^(-0.5)", "x10", "x4a*x8"])
    def test_render_parse_round_trip(self, text):
        assert str(parse_feature(text)) == text

    def test_product_is_commutative_and_canonical(self):
        a, b = parse_feature("x1^(0.5)"), parse_feature("x3^(-0.5)")
        assert a * b == b * a
        assert str(a * b) == "x1^(0.5)*x3^(-0.5)"
        assert len({a * b, b * a}) == 1

    def test_same_predictor_log_folds_into_f2(self):
        f = parse_feature("x3^(-0.5)") * parse_feature("log(x3)")
        assert f.order == 1 and f.factors[0][1] == Transform(-0.5, True)

    def test_evaluate_on_indicator_rejects_transform(self):
        ds = from_arrays({"b": [0.0, 1.0, 1.0]}, [1.0, 2.0, 3.0], kinds={"b": "binary"})
        with pytest.raises(DomainError):
            evaluate_feature(Feature.single("b", Transform(2.0)), ds)

    def test_enumerate(self):
        ds = from_arrays({"x": [1.0, 2.0, 3.0], "b": [0.0, 1.0, 1.0]}, [1.0, 2.0, 3.0], kinds={"b": "binary"})
        terms = enumerate_terms(ds)
        assert len(terms) == 17
        assert len(set(terms)) == 17
