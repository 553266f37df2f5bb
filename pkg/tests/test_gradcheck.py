"""
Tests for the finite-difference harness and the DBT oracles.
"""
import numpy as np
import pytest

from orthoconv.conv import ConvGeometry
from orthoconv.dbt import build_dbt, row_gram
from orthoconv.exceptions import ConfigError
from orthoconv.gradcheck import (GRADCHECK_CONFIGS, check_conv_adjoints, check_regularizers,
                                 finite_difference, max_relative_error)
from orthoconv.oracle import (col_oracle_geometry, col_self_conv_deviation, operator_equivalence,
                              row_gram_from_self_conv, row_oracle_geometry, row_self_conv_deviation)
from orthoconv.tensor import KernelTensor, make_rng

TOLERANCE = 1e-5


class TestFiniteDifference:
    """Tests for the central-difference helpers."""

    def test_quadratic(self):
        """Test the gradient of sum(x^2)."""
        x = np.array([[1.0, -2.0], [0.5, 3.0]])
        grad = finite_difference(lambda v: float(np.sum(v * v)), x)
        assert np.allclose(grad, 2 * x, rtol=0, atol=1e-8)
        assert np.array_equal(x, [[1.0, -2.0], [0.5, 3.0]])

    def test_invalid_step(self):
        """Test that the step must be positive."""
        with pytest.raises(ConfigError):
            finite_difference(lambda v: 0.0, np.zeros(2), h=0.0)

    def test_max_relative_error(self):
        """Test the error metric."""
        assert max_relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.2])) == pytest.approx(0.2 / 2.2)
        assert max_relative_error(np.zeros(3), np.zeros(3)) == 0.0


class TestGradientSuite:
    """Analytic gradients against finite differences at h = 1e-5."""

    def test_conv_adjoints(self):
        """Test both convolution adjoints over the kernel configurations."""
        errors = check_conv_adjoints(seed=0)
        assert len(errors) == 2 * len(GRADCHECK_CONFIGS)
        assert max(errors.values()) <= TOLERANCE

    def test_regularizers(self):
        """Test every regularizer gradient on ten seeded kernels."""
        errors = check_regularizers(seed=1)
        assert any(name.startswith("conv-col") for name in errors)
        assert max(errors.values()) <= TOLERANCE, {k: v for k, v in errors.items() if v > TOLERANCE}


class TestSelfConvOracles:
    """Self-convolution entries against DBT Gram entries."""

    CASES = [(2, 1, 2, 1), (3, 2, 3, 1), (2, 3, 4, 2), (4, 4, 3, 2), (3, 2, 3, 3), (2, 2, 5, 2)]

    @pytest.mark.parametrize("m,c,k,s", CASES)
    def test_row_form(self, m, c, k, s):
        """Test Z against DBT row inner products at the center row."""
        kernel = KernelTensor.random(m, c, k, make_rng(m * 100 + k * 10 + s))
        assert row_self_conv_deviation(kernel, s) <= 1e-10

    @pytest.mark.parametrize("m,c,k", [(2, 1, 2), (3, 2, 3), (1, 3, 2), (2, 2, 1)])
    def test_column_form(self, m, c, k):
        """Test the transposed-kernel self-convolution against DBT column inner products."""
        kernel = KernelTensor.random(m, c, k, make_rng(m + 7 * k))
        assert col_self_conv_deviation(kernel) <= 1e-10

    def test_oracle_geometries(self, random_kernel):
        """Test the sizes of the oracle geometries."""
        kernel = random_kernel(2, 3, 3)
        assert row_oracle_geometry(kernel, 1).output_shape == (2, 5, 5)
        assert row_oracle_geometry(kernel, 2).output_shape == (2, 3, 3)
        assert col_oracle_geometry(kernel).input_shape == (3, 9, 9)

    @pytest.mark.parametrize("h,w,k,s", [(6, 7, 3, 1), (8, 9, 4, 2), (7, 7, 3, 3)])
    def test_full_row_gram(self, h, w, k, s):
        """Test that Z determines every entry of the row Gram matrix."""
        kernel = KernelTensor.random(3, 2, k, make_rng(h * w))
        geom = ConvGeometry(c_in=2, h=h, w=w, m_out=3, k=k, stride=s)
        expected = row_gram(build_dbt(kernel, geom))
        assert np.max(np.abs(row_gram_from_self_conv(kernel, geom) - expected)) <= 1e-10


class TestOperatorEquivalence:
    """conv2d against DBT matrix-vector products."""

    def test_hundred_pairs(self):
        """Test agreement over 100 random pairs with strides 1 to 3 and padding 0 or 1."""
        result = operator_equivalence(n_pairs=100, seed=0)
        assert result["pairs"] == 100
        assert result["max_abs_diff"] <= 1e-10

    def test_threads(self):
        """Test that worker threads do not change the result."""
        assert operator_equivalence(12, seed=3, threads=3) == operator_equivalence(12, seed=3)
