"""
Direct 2D convolution (cross-correlation, zero padding), its adjoints, the
self-convolution Conv(K, K, padding, stride) and input-output kernel transposition.

All routines work on batches internally: windows are taken with
`sliding_window_view` and contracted against the kernel with `tensordot`, so the
summation order inside a call is fixed.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from orthoconv.exceptions import GeometryError, ShapeError
from orthoconv.tensor import KernelTensor, Tensor


@dataclass(frozen=True)
class ConvGeometry:
    """
    Shape contract of a convolutional layer: input [C, H, W], kernel [M, C, k, k],
    stride S and zero padding p. Output extents are always derived, never stored.
    """
    c_in: int
    h: int
    w: int
    m_out: int
    k: int
    stride: int = 1
    layer_pad: int = 0

    def __post_init__(self):
        if min(self.c_in, self.h, self.w, self.m_out, self.k) < 1:
            raise GeometryError(f"All extents must be >= 1: {self}")
        if self.stride < 1:
            raise GeometryError(f"Stride must be >= 1, got {self.stride}")
        if self.layer_pad < 0:
            raise GeometryError(f"Padding must be >= 0, got {self.layer_pad}")
        if self.h + 2 * self.layer_pad < self.k or self.w + 2 * self.layer_pad < self.k:
            raise GeometryError(
                f"Empty output: input {self.h}x{self.w} with padding {self.layer_pad} "
                f"is smaller than kernel {self.k}"
            )

    @property
    def h_out(self) -> int:
        return (self.h + 2 * self.layer_pad - self.k) // self.stride + 1

    @property
    def w_out(self) -> int:
        return (self.w + 2 * self.layer_pad - self.k) // self.stride + 1

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.c_in, self.h, self.w)

    @property
    def output_shape(self) -> Tuple[int, int, int]:
        return (self.m_out, self.h_out, self.w_out)

    @property
    def dbt_shape(self) -> Tuple[int, int]:
        """(rows, cols) of the doubly block-Toeplitz matrix: (M H' W', C H W)."""
        return (self.m_out * self.h_out * self.w_out, self.c_in * self.h * self.w)

    @property
    def is_fat(self) -> bool:
        rows, cols = self.dbt_shape
        return rows <= cols

    def check_kernel(self, kernel: KernelTensor) -> None:
        if (kernel.m_out, kernel.c_in, kernel.k) != (self.m_out, self.c_in, self.k):
            raise ShapeError(
                f"Kernel {kernel.shape} does not match geometry (M={self.m_out}, C={self.c_in}, k={self.k})"
            )

    @classmethod
    def for_kernel(cls, kernel: KernelTensor, input_shape, stride: int = 1, pad: int = 0) -> "ConvGeometry":
        c, h, w = (int(s) for s in input_shape)
        if c != kernel.c_in:
            raise ShapeError(f"Input has {c} channels but kernel expects {kernel.c_in}")
        return cls(c_in=c, h=h, w=w, m_out=kernel.m_out, k=kernel.k, stride=stride, layer_pad=pad)


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _windows(x: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Strided view [N, C, H', W', k, k] of the padded batch."""
    win = sliding_window_view(_pad(x, geom.layer_pad), (geom.k, geom.k), axis=(2, 3))
    s = geom.stride
    return win[:, :, ::s, ::s][:, :, :geom.h_out, :geom.w_out]


def _check_batch(x: np.ndarray, geom: ConvGeometry) -> None:
    if x.ndim != 4 or x.shape[1:] != geom.input_shape:
        raise ShapeError(f"Expected input batch [N, {geom.c_in}, {geom.h}, {geom.w}], got {x.shape}")


def _check_grad_batch(d_out: np.ndarray, n: int, geom: ConvGeometry) -> None:
    if d_out.shape != (n,) + geom.output_shape:
        raise ShapeError(f"Expected output gradient {(n,) + geom.output_shape}, got {d_out.shape}")


def conv2d_batch(x: np.ndarray, kernel: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Y[n, m, u, v] = sum_{c,p,q} K[m, c, p, q] X_pad[n, c, uS + p, vS + q]."""
    _check_batch(x, geom)
    out = np.tensordot(_windows(x, geom), kernel, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_batch_grad_kernel(x: np.ndarray, d_out: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Gradient of sum(d_out * conv2d_batch(x, K)) with respect to K, shape [M, C, k, k]."""
    _check_batch(x, geom)
    _check_grad_batch(d_out, x.shape[0], geom)
    return np.tensordot(d_out, _windows(x, geom), axes=([0, 2, 3], [0, 2, 3]))


def conv2d_batch_grad_input(kernel: np.ndarray, d_out: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Gradient of sum(d_out * conv2d_batch(X, K)) with respect to X, shape [N, C, H, W]."""
    n = d_out.shape[0] if d_out.ndim == 4 else -1
    _check_grad_batch(d_out, n, geom)
    pad, s, k = geom.layer_pad, geom.stride, geom.k
    span_h = s * (geom.h_out - 1) + 1
    span_w = s * (geom.w_out - 1) + 1
    d_pad = np.zeros((n, geom.c_in, geom.h + 2 * pad, geom.w + 2 * pad))
    for p in range(k):
        for q in range(k):
            contrib = np.tensordot(d_out, kernel[:, :, p, q], axes=([1], [0]))
            d_pad[:, :, p:p + span_h:s, q:q + span_w:s] += contrib.transpose(0, 3, 1, 2)
    return np.ascontiguousarray(d_pad[:, :, pad:pad + geom.h, pad:pad + geom.w])


def conv2d(x: Tensor, kernel: KernelTensor, stride: int = 1, pad: int = 0) -> Tensor:
    """
    Single-input convolution Y = Conv(K, X).

    Args:
        x: input of shape [C, H, W]
        kernel: weights [M, C, k, k]
        stride: S >= 1
        pad: zero padding p >= 0

    Returns:
        Output of shape [M, H', W']

    Raises:
        ShapeError: if the channel counts differ
        GeometryError: if the output would be empty
    """
    if x.ndim != 3:
        raise ShapeError(f"conv2d expects a [C, H, W] input, got shape {x.shape}")
    geom = ConvGeometry.for_kernel(kernel, x.shape, stride, pad)
    return conv2d_batch(x[np.newaxis], kernel.data, geom)[0]


def conv2d_grad_kernel(x: Tensor, d_out: Tensor, geometry: ConvGeometry) -> Tensor:
    """d(sum(d_out * conv2d(x, K)))/dK for a single input."""
    if x.shape != geometry.input_shape:
        raise ShapeError(f"Input {x.shape} does not match geometry {geometry.input_shape}")
    if d_out.shape != geometry.output_shape:
        raise ShapeError(f"Output gradient {d_out.shape} does not match geometry {geometry.output_shape}")
    return conv2d_batch_grad_kernel(x[np.newaxis], d_out[np.newaxis], geometry)


def conv2d_grad_input(kernel: KernelTensor, d_out: Tensor, geometry: ConvGeometry) -> Tensor:
    """d(sum(d_out * conv2d(X, K)))/dX for a single input."""
    geometry.check_kernel(kernel)
    if d_out.shape != geometry.output_shape:
        raise ShapeError(f"Output gradient {d_out.shape} does not match geometry {geometry.output_shape}")
    return conv2d_batch_grad_input(kernel.data, d_out[np.newaxis], geometry)[0]


def self_conv_geometry(kernel: KernelTensor, pad: int, stride: int) -> ConvGeometry:
    """Geometry of Conv(K, K, padding=pad, stride=stride): each filter [C, k, k] is an input."""
    if stride < 1:
        raise GeometryError(f"Stride must be >= 1, got {stride}")
    if pad < 0 or pad % stride != 0:
        raise GeometryError(f"Self-convolution padding {pad} must be a non-negative multiple of stride {stride}")
    return ConvGeometry(c_in=kernel.c_in, h=kernel.k, w=kernel.k, m_out=kernel.m_out,
                        k=kernel.k, stride=stride, layer_pad=pad)


def self_conv(kernel: KernelTensor, pad: int, stride: int) -> Tensor:
    """
    Z = Conv(K, K, padding=pad, stride=stride) of shape [M, M, 2 pad/S + 1, 2 pad/S + 1].

    Z[i, j, u, v] = sum_{c,p,q} K[j, c, p, q] K_pad[i, c, uS + p, vS + q], so the
    center slice Z[:, :, pad/S, pad/S] is the Gram matrix of the filters.
    """
    geom = self_conv_geometry(kernel, pad, stride)
    return conv2d_batch(kernel.data, kernel.data, geom)


def self_conv_backward(kernel: KernelTensor, d_z: np.ndarray, pad: int, stride: int) -> np.ndarray:
    """
    Gradient of sum(d_z * self_conv(K)) with respect to K.
    K enters both as the filter bank and as the input batch; the two adjoints are summed.
    """
    geom = self_conv_geometry(kernel, pad, stride)
    as_filter = conv2d_batch_grad_kernel(kernel.data, d_z, geom)
    as_input = conv2d_batch_grad_input(kernel.data, d_z, geom)
    return as_filter + as_input


def transpose_kernel(kernel: KernelTensor) -> KernelTensor:
    """
    Input-output transposition K^T[c, m] = K[m, c] with no spatial flip.
    Column-form self-convolution of the result reproduces the DBT column inner
    products (see oracle.col_self_conv_deviation).
    """
    return KernelTensor(np.swapaxes(kernel.data, 0, 1))
