"""
Tests for the orthreg module.
"""
import numpy as np
import pytest

from orthoconv.conv import ConvGeometry, self_conv
from orthoconv.dbt import build_dbt, row_gram, to_dense
from orthoconv.exceptions import ConfigError, GeometryError, ShapeError, UnsupportedConfigurationError
from orthoconv.oracle import row_self_conv_deviation
from orthoconv.orthreg import (DEFAULT_LAMBDA, IMAGENET_LAMBDA, combined_loss, conv_orth_loss,
                               kernel_mode_for, kernel_orth_loss, layer_penalties, lemma_gap,
                               orth_mode_for, padding_for, target_col, target_row)
from orthoconv.tensor import KernelTensor, make_rng, randn
from orthoconv.trainer import minimize_orth_only


class TestPaddingAndTargets:
    """Tests for the padding rule and target tensors."""

    @pytest.mark.parametrize("k,stride,expected", [(3, 1, 2), (4, 2, 2), (1, 1, 0), (3, 3, 0), (5, 2, 4)])
    def test_padding_for(self, k, stride, expected):
        """Test P = floor((k - 1) / S) * S."""
        assert padding_for(k, stride) == expected

    def test_padding_for_invalid(self):
        """Test that non-positive sizes are rejected."""
        with pytest.raises(GeometryError):
            padding_for(0, 1)

    def test_target_row(self):
        """Test the row target shape and center identity."""
        target = target_row(2, 2, 1)
        assert target.tensor.shape == (2, 2, 5, 5)
        assert np.array_equal(target.tensor[:, :, 2, 2], np.eye(2))
        assert target.tensor.sum() == 2.0

    def test_target_row_degenerate(self):
        """Test the 1x1x1x1 target."""
        assert np.array_equal(target_row(1, 0, 1).tensor, [[[[1.0]]]])

    def test_target_row_requires_stride_multiple(self):
        """Test that P must be a multiple of S."""
        with pytest.raises(GeometryError):
            target_row(2, 3, 2)

    def test_target_col(self):
        """Test the column target shape and center identity."""
        target = target_col(3, 2)
        assert target.tensor.shape == (3, 3, 3, 3)
        assert target.center == 1
        assert np.array_equal(target.tensor[:, :, 1, 1], np.eye(3))


class TestConvOrthLoss:
    """Tests for the conv-orthogonality loss."""

    def test_unit_kernel(self):
        """Test that K = [[1]] is already orthogonal."""
        report = conv_orth_loss(KernelTensor(np.ones((1, 1, 1, 1))), 1, "row")
        assert report.loss == 0.0
        assert not report.grad.any()

    @pytest.mark.parametrize("mode", ["row", "col"])
    def test_channel_identity(self, mode):
        """Test that a 1x1 identity over channels has zero loss in both forms."""
        kernel = KernelTensor(np.eye(3).reshape(3, 3, 1, 1))
        assert conv_orth_loss(kernel, 1, mode).loss == 0.0

    def test_column_form_rejects_strides(self, random_kernel):
        """Test that the column form is refused for stride > 1."""
        with pytest.raises(UnsupportedConfigurationError, match="stride 1"):
            conv_orth_loss(random_kernel(2, 2, 3), 2, "col")

    def test_unknown_mode(self, random_kernel):
        """Test that unknown modes are rejected."""
        with pytest.raises(ConfigError):
            conv_orth_loss(random_kernel(1, 1, 2), 1, "diagonal")

    def test_matches_row_gram(self, random_kernel):
        """Test the loss against DBT row inner products at an interior center row."""
        kernel = random_kernel(2, 1, 2)
        geom = ConvGeometry(c_in=1, h=4, w=4, m_out=2, k=2)
        gram = row_gram(build_dbt(kernel, geom))
        centers = [(i * 3 + 1) * 3 + 1 for i in range(2)]
        expected = 0.0
        for i, row in enumerate(centers):
            block = gram[row].reshape(2, 3, 3).copy()
            block[i, 1, 1] -= 1.0
            expected += np.sum(block ** 2)
        assert conv_orth_loss(kernel, 1, "row").loss == pytest.approx(expected, rel=1e-10)

    def test_report_weighting(self, random_kernel):
        """Test the lambda-weighted values and the unsquared norm."""
        report = conv_orth_loss(random_kernel(2, 2, 2), 1, "row", lam=0.5)
        assert report.weighted_loss == pytest.approx(0.5 * report.loss)
        assert np.allclose(report.weighted_grad, 0.5 * report.grad)
        assert report.unsquared == pytest.approx(np.sqrt(report.loss))

    def test_lambda_constants(self):
        """Test the documented regularization weights."""
        assert DEFAULT_LAMBDA == 0.1
        assert IMAGENET_LAMBDA == 0.01


class TestKernelOrthLoss:
    """Tests for the kernel-orthogonality baseline."""

    def test_orthonormal_rows(self):
        """Test that a Gram-Schmidt kernel has (numerically) zero row loss."""
        kernel = KernelTensor.row_orthonormal(4, 4, 3, make_rng(2024))
        assert kernel_orth_loss(kernel, "row").loss <= 1e-20

    def test_kernel_orthogonality_is_not_sufficient(self):
        """Test a kernel with orthonormal patch rows whose convolution is far from orthogonal."""
        kernel = KernelTensor.row_orthonormal(4, 4, 3, make_rng(2024))
        assert kernel_orth_loss(kernel, "row").loss <= 1e-16
        assert conv_orth_loss(kernel, 1, "row").loss >= 0.1

    def test_box_filter_witness(self):
        """Test the 3x3 box filter of 1/3: a unit patch row whose conv loss is 280/81."""
        kernel = KernelTensor(np.full((1, 1, 3, 3), 1.0 / 3.0))
        assert kernel_orth_loss(kernel, "row").loss == pytest.approx(0.0, abs=1e-28)
        # Off-center autocorrelations (3 - |u|)(3 - |v|) / 9 over u, v in [-2, 2]
        assert conv_orth_loss(kernel, 1, "row").loss == pytest.approx(280.0 / 81.0, rel=1e-13)
        assert row_self_conv_deviation(kernel, 1) <= 1e-12

    @pytest.mark.parametrize("m,c,k", [(2, 3, 2), (3, 1, 3), (4, 4, 1), (1, 2, 4), (3, 3, 2)])
    def test_stride_k_equivalence(self, m, c, k):
        """Test that with stride k the conv and kernel row losses coincide."""
        rng = make_rng(100 + m * 10 + k)
        for _ in range(2):
            kernel = KernelTensor.random(m, c, k, rng, std=0.3)
            conv = conv_orth_loss(kernel, k, "row")
            kern = kernel_orth_loss(kernel, "row")
            assert conv.loss == pytest.approx(kern.loss, rel=1e-12, abs=1e-12)
            assert np.allclose(conv.grad, kern.grad, rtol=1e-10, atol=1e-12)

    def test_column_form(self, random_kernel):
        """Test the column loss against its definition."""
        kernel = random_kernel(2, 1, 2)
        a = kernel.as_matrix()
        expected = np.sum((a.T @ a - np.eye(4)) ** 2)
        assert kernel_orth_loss(kernel, "col").loss == pytest.approx(expected, rel=1e-12)
        assert kernel_orth_loss(kernel, "col").mode == "kernel-col"

    def test_conv_orthogonality_implies_kernel_orthogonality(self):
        """Test that driving the conv loss to zero also zeroes the kernel loss."""
        kernel = KernelTensor.random(2, 3, 1, make_rng(9), std=0.5)
        result = minimize_orth_only(kernel, stride=1, steps=2000, lr=0.05)
        assert result.losses[-1] <= 1e-12
        assert kernel_orth_loss(result.kernel, "row").loss <= 1e-10

    def test_unknown_mode(self, random_kernel):
        """Test that unknown modes are rejected."""
        with pytest.raises(ConfigError):
            kernel_orth_loss(random_kernel(1, 1, 2), "both")


class TestModeSelection:
    """Tests for choosing the row or column form."""

    def test_kernel_mode_for(self, random_kernel):
        """Test M <= C k^2 selects the row form."""
        assert kernel_mode_for(random_kernel(8, 1, 3)) == "row"
        assert kernel_mode_for(random_kernel(10, 1, 3)) == "col"

    def test_orth_mode_for(self):
        """Test fat, tall stride-1 and tall strided layers."""
        assert orth_mode_for(ConvGeometry(c_in=8, h=10, w=10, m_out=8, k=3, stride=2)) == "row"
        assert orth_mode_for(ConvGeometry(c_in=1, h=12, w=12, m_out=8, k=3)) == "col"
        tall_strided = ConvGeometry(c_in=1, h=5, w=5, m_out=8, k=3, stride=2)
        assert not tall_strided.is_fat
        assert orth_mode_for(tall_strided) == "row"


class TestLemmaGap:
    """Tests for the row/column loss identity."""

    def test_square_orthogonal(self):
        """Test that an orthogonal matrix gives (0, 0, 0)."""
        q, _ = np.linalg.qr(randn((4, 4), make_rng(0)))
        result = lemma_gap(q)
        assert abs(result.l_r) < 1e-24
        assert abs(result.l_c) < 1e-24

    def test_hand_checked(self):
        """Test a 2x3 selection matrix."""
        result = lemma_gap(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
        assert result == (0.0, 1.0, -1.0)

    def test_random_matrices(self):
        """Test gap == rows - cols on assorted random shapes."""
        rng = make_rng(50)
        for _ in range(50):
            rows, cols = (int(v) for v in rng.integers(1, 30, size=2))
            a = randn((rows, cols), rng)
            result = lemma_gap(a)
            assert abs(result.gap - (rows - cols)) <= 1e-8 * max(rows, cols)
            assert result.gap == pytest.approx(result.l_r - result.l_c)

    def test_dbt_matrix(self, rng, toy_geometry):
        """Test the 9x16 DBT matrix of a random 2x2 kernel."""
        a = to_dense(build_dbt(KernelTensor.random(1, 1, 2, rng), toy_geometry))
        result = lemma_gap(a)
        assert abs(result.gap - (-7)) <= 1e-9 * 16
        assert abs(result.gap - (result.l_r - result.l_c)) <= 1e-9

    def test_rejects_non_matrix(self):
        """Test that only matrices are accepted."""
        with pytest.raises(ShapeError):
            lemma_gap(np.ones(3))


class TestCombinedLoss:
    """Tests for the layer penalties and the combined objective."""

    def test_zero_lambda(self, random_kernel):
        """Test that lambda 0 leaves the task loss unchanged."""
        kernels = [random_kernel(2, 1, 3), random_kernel(2, 2, 3)]
        assert combined_loss(1.25, kernels, 0.0, [1, 2]) == 1.25

    def test_negative_lambda(self, random_kernel):
        """Test that negative weights are rejected."""
        with pytest.raises(ConfigError):
            combined_loss(0.0, [random_kernel(1, 1, 2)], -0.1, [1])

    def test_sum_of_layers(self, random_kernel):
        """Test L = L_task + lambda * sum of per-layer losses."""
        kernels = [random_kernel(2, 1, 3), random_kernel(3, 2, 2)]
        expected = 0.5 + 0.1 * (conv_orth_loss(kernels[0], 1).loss + conv_orth_loss(kernels[1], 2).loss)
        assert combined_loss(0.5, kernels, 0.1, [1, 2]) == pytest.approx(expected, rel=1e-14)

    def test_geometry_selects_form(self, random_kernel):
        """Test that known geometries pick the form from orth_mode_for."""
        kernel = random_kernel(8, 1, 3)
        geom = ConvGeometry(c_in=1, h=12, w=12, m_out=8, k=3)
        reports = layer_penalties([kernel], [1], 0.1, [geom])
        assert reports[0].mode == "col"

    def test_threads_do_not_change_result(self, random_kernel):
        """Test that parallel evaluation keeps layer order and values."""
        kernels = [random_kernel(2, 2, 3) for _ in range(4)]
        serial = combined_loss(0.0, kernels, 0.1, [1, 2, 1, 3])
        parallel = combined_loss(0.0, kernels, 0.1, [1, 2, 1, 3], threads=3)
        assert serial == parallel

    def test_length_mismatch(self, random_kernel):
        """Test that kernels and strides must pair up."""
        with pytest.raises(ShapeError):
            layer_penalties([random_kernel(1, 1, 2)], [1, 1], 0.1)


class TestSpectralBound:
    """Tests for ||K K^T - I||_F^2 <= H'W' * conv-orthogonality loss."""

    @pytest.mark.parametrize("stride", [1, 2])
    def test_bound(self, stride):
        """Test the bound on random kernels with valid convolution."""
        rng = make_rng(77 + stride)
        for _ in range(5):
            kernel = KernelTensor.random(2, 2, 3, rng, std=0.4)
            geom = ConvGeometry(c_in=2, h=9, w=8, m_out=2, k=3, stride=stride)
            gram = row_gram(build_dbt(kernel, geom))
            deviation = np.sum((gram - np.eye(gram.shape[0])) ** 2)
            loss = conv_orth_loss(kernel, stride, "row").loss
            assert deviation <= geom.h_out * geom.w_out * loss * (1 + 1e-12)

    def test_center_slice(self, random_kernel):
        """Test that the self-convolution center holds the filter Gram matrix."""
        kernel = random_kernel(3, 2, 4)
        z = self_conv(kernel, 2, 2)
        a = kernel.as_matrix()
        assert np.allclose(z[:, :, 1, 1], a @ a.T, atol=1e-12)
