"""
Doubly block-Toeplitz (DBT) matrix of a convolutional layer.

Row (i, h', w') of the matrix holds filter K_i placed at output position (h', w');
column (c, h, w) is the response of the layer to the one-hot input E_{c,h,w}.
The matrix is the brute-force oracle for every orthogonality identity in the package.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp

from orthoconv.conv import ConvGeometry
from orthoconv.exceptions import CapacityError, DbtIndexError, ShapeError
from orthoconv.logger import get_logger
from orthoconv.settings import get_settings
from orthoconv.tensor import KernelTensor

logger = get_logger()

DenseMatrix = np.ndarray


@dataclass(frozen=True, eq=False)
class DbtMatrix:
    """
    Sparse DBT matrix in coordinate format. Triplets are sorted by (row, col)
    and never repeat a position; a CSR copy is built lazily for products.
    """
    rows: int
    cols: int
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    geom: ConvGeometry

    @cached_property
    def csr(self) -> sp.csr_array:
        return sp.csr_array((self.values, (self.row_idx, self.col_idx)), shape=(self.rows, self.cols))

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def nnz_per_row(self) -> np.ndarray:
        return np.bincount(self.row_idx, minlength=self.rows)

    def nnz_per_col(self) -> np.ndarray:
        return np.bincount(self.col_idx, minlength=self.cols)

    def frob_norm_sq(self) -> float:
        return float(np.dot(self.values, self.values))

    def __repr__(self):
        return f"DbtMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


def build_dbt(kernel: KernelTensor, geom: ConvGeometry) -> DbtMatrix:
    """
    Convert kernel K into the DBT matrix of shape (M H' W') x (C H W).

    Entry (i h' w', c h w) equals K[i, c, h - h'S + p, w - w'S + p] when that tap
    lies inside the kernel; taps that fall into the zero padding are omitted.

    Raises:
        ShapeError: if the kernel does not match the geometry
    """
    geom.check_kernel(kernel)
    m_out, c_in, k = kernel.m_out, kernel.c_in, kernel.k
    h_out, w_out, s, pad = geom.h_out, geom.w_out, geom.stride, geom.layer_pad
    full = (m_out, h_out, w_out, c_in, k, k)

    m = np.arange(m_out).reshape(-1, 1, 1, 1, 1, 1)
    hh = np.arange(h_out).reshape(1, -1, 1, 1, 1, 1)
    ww = np.arange(w_out).reshape(1, 1, -1, 1, 1, 1)
    c = np.arange(c_in).reshape(1, 1, 1, -1, 1, 1)
    p = np.arange(k).reshape(1, 1, 1, 1, -1, 1)
    q = np.arange(k).reshape(1, 1, 1, 1, 1, -1)

    h_in = hh * s + p - pad
    w_in = ww * s + q - pad
    values = np.broadcast_to(kernel.data.reshape(m_out, 1, 1, c_in, k, k), full)
    mask = np.broadcast_to((h_in >= 0) & (h_in < geom.h) & (w_in >= 0) & (w_in < geom.w), full)
    mask = mask & (values != 0.0)

    # Loop order (m, h', w', c, p, q) already yields triplets sorted by (row, col).
    row_idx = np.broadcast_to(m * (h_out * w_out) + hh * w_out + ww, full)[mask]
    col_idx = np.broadcast_to(c * (geom.h * geom.w) + h_in * geom.w + w_in, full)[mask]
    rows, cols = geom.dbt_shape
    dbt = DbtMatrix(rows=rows, cols=cols, row_idx=row_idx.astype(np.int64),
                    col_idx=col_idx.astype(np.int64), values=np.ascontiguousarray(values[mask]), geom=geom)
    logger.debug(f"Built {dbt} for {kernel} with stride {s}, padding {pad}")
    return dbt


def matvec(dbt: DbtMatrix, x: np.ndarray) -> np.ndarray:
    """y = K x for a flattened input x of length C H W."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != dbt.cols:
        raise ShapeError(f"Vector of length {x.size} does not match {dbt.cols} DBT columns")
    return dbt.csr @ x


def rmatvec(dbt: DbtMatrix, y: np.ndarray) -> np.ndarray:
    """x = K^T y for a flattened output y of length M H' W'."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != dbt.rows:
        raise ShapeError(f"Vector of length {y.size} does not match {dbt.rows} DBT rows")
    return dbt.csr.T @ y


def _check_capacity(n_rows: int, n_cols: int, cap: Optional[int], what: str) -> None:
    cap = get_settings().dense_cap if cap is None else cap
    required = n_rows * n_cols
    if required > cap:
        raise CapacityError(
            f"{what} needs {required} dense entries ({n_rows}x{n_cols}), above the cap of {cap}"
        )


def to_dense(dbt: DbtMatrix, cap: Optional[int] = None) -> DenseMatrix:
    """Dense materialization; positions without a triplet are exactly 0."""
    _check_capacity(dbt.rows, dbt.cols, cap, "DBT materialization")
    dense = np.zeros((dbt.rows, dbt.cols))
    dense[dbt.row_idx, dbt.col_idx] = dbt.values
    return dense


def row_gram(dbt: DbtMatrix, cap: Optional[int] = None) -> DenseMatrix:
    """K K^T, the inner products of all DBT rows."""
    _check_capacity(dbt.rows, dbt.rows, cap, "Row Gram matrix")
    dense = to_dense(dbt, cap)
    return dense @ dense.T


def col_gram(dbt: DbtMatrix, cap: Optional[int] = None) -> DenseMatrix:
    """K^T K, the inner products of all DBT columns."""
    _check_capacity(dbt.cols, dbt.cols, cap, "Column Gram matrix")
    dense = to_dense(dbt, cap)
    return dense.T @ dense


def row_index(geom: ConvGeometry, i: int, h: int, w: int) -> int:
    """Flat DBT row of output (i, h', w')."""
    if not (0 <= i < geom.m_out and 0 <= h < geom.h_out and 0 <= w < geom.w_out):
        raise DbtIndexError(f"Row ({i}, {h}, {w}) outside output {geom.output_shape}")
    return (i * geom.h_out + h) * geom.w_out + w


def col_index(geom: ConvGeometry, c: int, h: int, w: int) -> int:
    """Flat DBT column of input (c, h, w)."""
    if not (0 <= c < geom.c_in and 0 <= h < geom.h and 0 <= w < geom.w):
        raise DbtIndexError(f"Column ({c}, {h}, {w}) outside input {geom.input_shape}")
    return (c * geom.h + h) * geom.w + w


def extract_column(dbt: DbtMatrix, c: int, h: int, w: int) -> np.ndarray:
    """Column (c, h, w) of the DBT, obtained as K e_chw."""
    e = np.zeros(dbt.cols)
    e[col_index(dbt.geom, c, h, w)] = 1.0
    return matvec(dbt, e)
