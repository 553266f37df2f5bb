"""
Orthogonality regularizers for convolutional kernels.

Conv-orthogonality compares the self-convolution Z = Conv(K, K, padding=P, stride=S)
against a target that is zero except for an identity at the center offset, which is
equivalent to orthonormal rows of the layer's DBT matrix. The column form uses the
input-output transposed kernel and is defined for stride 1 only. Kernel-orthogonality
is the weaker baseline on the reshaped M x Ck^2 patch matrix.

All four losses use the squared Frobenius norm; gradients are exact.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from orthoconv.conv import ConvGeometry, self_conv, self_conv_backward, transpose_kernel
from orthoconv.exceptions import ConfigError, GeometryError, ShapeError, UnsupportedConfigurationError
from orthoconv.logger import get_logger
from orthoconv.tensor import KernelTensor

logger = get_logger()

CONV_MODES = ("row", "col")
KERNEL_MODES = ("row", "col")
DEFAULT_LAMBDA = 0.1
IMAGENET_LAMBDA = 0.01


@dataclass(frozen=True, eq=False)
class OrthTarget:
    """Target tensor: zeros except the identity matrix at spatial offset (center, center)."""
    tensor: np.ndarray
    center: int


@dataclass(frozen=True, eq=False)
class OrthLossReport:
    """A regularizer value with its exact gradient with respect to the kernel."""
    loss: float
    grad: np.ndarray
    mode: str
    lam: float = 1.0

    @property
    def unsquared(self) -> float:
        """The Frobenius norm itself (the loss is its square)."""
        return float(np.sqrt(self.loss))

    @property
    def weighted_loss(self) -> float:
        return self.lam * self.loss

    @property
    def weighted_grad(self) -> np.ndarray:
        return self.lam * self.grad


class LemmaGap(NamedTuple):
    l_r: float
    l_c: float
    gap: float


def padding_for(k: int, stride: int) -> int:
    """P = floor((k - 1) / S) * S, the padding that exposes every overlapping filter position."""
    if k < 1 or stride < 1:
        raise GeometryError(f"Kernel size and stride must be >= 1, got k={k}, stride={stride}")
    return ((k - 1) // stride) * stride


def _center_identity(n: int, size: int) -> OrthTarget:
    center = size // 2
    tensor = np.zeros((n, n, size, size))
    tensor[:, :, center, center] = np.eye(n)
    return OrthTarget(tensor=tensor, center=center)


def target_row(m_out: int, pad: int, stride: int) -> OrthTarget:
    """I_r0 of shape [M, M, 2P/S + 1, 2P/S + 1]."""
    if stride < 1 or pad < 0 or pad % stride != 0:
        raise GeometryError(f"Padding {pad} must be a non-negative multiple of stride {stride}")
    return _center_identity(m_out, 2 * pad // stride + 1)


def target_col(c_in: int, k: int) -> OrthTarget:
    """I_c0 of shape [C, C, 2k - 1, 2k - 1]."""
    if k < 1:
        raise GeometryError(f"Kernel size must be >= 1, got {k}")
    return _center_identity(c_in, 2 * k - 1)


def _self_conv_loss(kernel: KernelTensor, pad: int, stride: int, target: OrthTarget):
    residual = self_conv(kernel, pad, stride) - target.tensor
    loss = float(np.sum(residual * residual))
    grad = self_conv_backward(kernel, 2.0 * residual, pad, stride)
    return loss, grad


def conv_orth_loss(kernel: KernelTensor, stride: int = 1, mode: str = "row",
                   lam: float = 1.0) -> OrthLossReport:
    """
    Conv-orthogonality loss ||Z - I||_F^2 and its gradient.

    Args:
        kernel: weights [M, C, k, k]
        stride: layer stride S
        mode: "row" (any stride) or "col" (stride 1 only)
        lam: weight carried into the report

    Raises:
        UnsupportedConfigurationError: for mode "col" with stride > 1
    """
    if mode == "row":
        pad = padding_for(kernel.k, stride)
        loss, grad = _self_conv_loss(kernel, pad, stride, target_row(kernel.m_out, pad, stride))
    elif mode == "col":
        if stride != 1:
            raise UnsupportedConfigurationError(
                f"The column orthogonality condition is only defined for stride 1 convolutions, got stride {stride}"
            )
        transposed = transpose_kernel(kernel)
        loss, grad_t = _self_conv_loss(transposed, kernel.k - 1, 1, target_col(kernel.c_in, kernel.k))
        grad = np.ascontiguousarray(np.swapaxes(grad_t, 0, 1))
    else:
        raise ConfigError(f"Unknown conv-orthogonality mode '{mode}', expected one of {CONV_MODES}")
    return OrthLossReport(loss=loss, grad=grad, mode=mode, lam=lam)


def kernel_orth_loss(kernel: KernelTensor, mode: str = "row", lam: float = 1.0) -> OrthLossReport:
    """
    Kernel-orthogonality loss on the patch matrix A = reshape(K, [M, C k^2]):
    row ||A A^T - I||_F^2, col ||A^T A - I||_F^2.
    """
    a = kernel.as_matrix()
    if mode == "row":
        dev = a @ a.T - np.eye(a.shape[0])
        grad_a = 4.0 * dev @ a
    elif mode == "col":
        dev = a.T @ a - np.eye(a.shape[1])
        grad_a = 4.0 * a @ dev
    else:
        raise ConfigError(f"Unknown kernel-orthogonality mode '{mode}', expected one of {KERNEL_MODES}")
    return OrthLossReport(loss=float(np.sum(dev * dev)), grad=grad_a.reshape(kernel.shape),
                          mode=f"kernel-{mode}", lam=lam)


def kernel_mode_for(kernel: KernelTensor) -> str:
    """Row form when M <= C k^2, column form otherwise."""
    return "row" if kernel.m_out <= kernel.c_in * kernel.k * kernel.k else "col"


def orth_mode_for(geom: ConvGeometry) -> str:
    """
    Conv-orthogonality form for a layer: row for fat DBTs, col for tall stride-1 DBTs.
    Tall layers with stride > 1 use the row form; row and column losses of a matrix
    differ only by a constant, so their gradients agree.
    """
    if geom.is_fat or geom.stride > 1:
        return "row"
    return "col"


def lemma_gap(a: np.ndarray) -> LemmaGap:
    """
    l_r = ||A A^T - I_M||_F^2, l_c = ||A^T A - I_N||_F^2 and their difference,
    which equals M - N for every M x N matrix.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"lemma_gap expects a matrix, got shape {a.shape}")
    rows, cols = a.shape
    dev_r = a @ a.T - np.eye(rows)
    dev_c = a.T @ a - np.eye(cols)
    l_r = float(np.sum(dev_r * dev_r))
    l_c = float(np.sum(dev_c * dev_c))
    return LemmaGap(l_r=l_r, l_c=l_c, gap=l_r - l_c)


def layer_penalties(kernels: Sequence[KernelTensor], strides: Sequence[int], lam: float,
                    geometries: Optional[Sequence[ConvGeometry]] = None,
                    threads: int = 1) -> List[OrthLossReport]:
    """
    Per-layer conv-orthogonality reports. The form follows orth_mode_for when the
    layer geometry is known, otherwise the row form. Results keep layer order.
    """
    if lam < 0:
        raise ConfigError(f"Regularization weight lambda must be >= 0, got {lam}")
    if len(kernels) != len(strides) or (geometries is not None and len(geometries) != len(kernels)):
        raise ShapeError("kernels, strides and geometries must have the same length")
    modes = [orth_mode_for(g) for g in geometries] if geometries is not None else ["row"] * len(kernels)

    def one(args):
        kernel, stride, mode = args
        return conv_orth_loss(kernel, stride, mode, lam)

    jobs = list(zip(kernels, strides, modes))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, jobs))
    return [one(job) for job in jobs]


def combined_loss(task_loss: float, kernels: Sequence[KernelTensor], lam: float,
                  stride_per_kernel: Sequence[int],
                  geometries: Optional[Sequence[ConvGeometry]] = None, threads: int = 1) -> float:
    """L = L_task + lambda * sum of per-layer conv-orthogonality losses (summed in layer order)."""
    reports = layer_penalties(kernels, stride_per_kernel, lam, geometries, threads)
    total = 0.0
    for report in reports:
        total += report.loss
    return task_loss + lam * total
