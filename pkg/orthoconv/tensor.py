"""
Dense tensors, deterministic random initialization and norms.

Tensors are plain float64 numpy arrays in C order. Random streams come from
numpy's PCG64 bit generator, whose output is identical on every platform for a
given seed; normal samples use numpy's `Generator.standard_normal` (ziggurat
transform of the PCG64 stream).
"""
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from orthoconv.exceptions import ConfigError, NumericalError, ShapeError

Tensor = np.ndarray
Shape = Tuple[int, ...]


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator; equal seeds give bit-identical streams."""
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError(f"Seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def _check_shape(shape: Sequence[int]) -> Shape:
    shape = tuple(int(s) for s in shape)
    if not 1 <= len(shape) <= 4:
        raise ShapeError(f"Tensors have 1 to 4 dimensions, got shape {shape}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"Every extent must be >= 1, got shape {shape}")
    return shape


def ensure_finite(t: Tensor, what: str = "tensor") -> Tensor:
    """Raise NumericalError if `t` holds NaN or Inf."""
    if not np.all(np.isfinite(t)):
        raise NumericalError(f"{what} contains non-finite values")
    return t


def zeros(shape: Sequence[int]) -> Tensor:
    """All-zero float64 tensor of the given shape."""
    return np.zeros(_check_shape(shape), dtype=np.float64)


def randn(shape: Sequence[int], rng: np.random.Generator) -> Tensor:
    """
    I.i.d. standard normal samples.

    Args:
        shape: 1 to 4 positive extents
        rng: generator from make_rng; advanced deterministically

    Returns:
        float64 tensor of the requested shape
    """
    return rng.standard_normal(_check_shape(shape), dtype=np.float64)


def frob_norm(t: Tensor) -> float:
    """Frobenius norm: square root of the sum of squared entries."""
    return float(np.sqrt(np.sum(np.square(t, dtype=np.float64))))


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    """Row-major reinterpretation of `t` with a new shape of equal element count."""
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != t.size:
        raise ShapeError(f"Cannot reshape {t.shape} ({t.size} elements) into {shape}")
    return np.reshape(np.ascontiguousarray(t), shape)


@dataclass(frozen=True, eq=False)
class KernelTensor:
    """
    Convolution weights K of shape [M, C, k, k] (M filters, C channels, square k x k support).
    The wrapped array is a read-only float64 copy.
    """
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 4:
            raise ShapeError(f"Kernel must be 4-D [M, C, k, k], got shape {arr.shape}")
        m, c, kh, kw = arr.shape
        if min(m, c, kh, kw) < 1:
            raise ShapeError(f"Kernel extents must be >= 1, got shape {arr.shape}")
        if kh != kw:
            raise ShapeError(f"Only square kernels are supported, got {kh}x{kw}")
        ensure_finite(arr, "kernel")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def m_out(self) -> int:
        return self.data.shape[0]

    @property
    def c_in(self) -> int:
        return self.data.shape[1]

    @property
    def k(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Shape:
        return self.data.shape

    def as_matrix(self) -> np.ndarray:
        """The kernel-patch matrix K̂ of shape [M, C*k*k]."""
        return reshape(self.data, (self.m_out, self.c_in * self.k * self.k))

    def scaled(self, alpha: float) -> "KernelTensor":
        return KernelTensor(alpha * self.data)

    @classmethod
    def random(cls, m_out: int, c_in: int, k: int, rng: np.random.Generator,
               std: float = 1.0) -> "KernelTensor":
        """Normal initialization with the given standard deviation."""
        return cls(std * randn((m_out, c_in, k, k), rng))

    @classmethod
    def he_normal(cls, m_out: int, c_in: int, k: int, rng: np.random.Generator) -> "KernelTensor":
        """Scaled normal initialization, std = sqrt(2 / (C k^2))."""
        return cls.random(m_out, c_in, k, rng, std=float(np.sqrt(2.0 / (c_in * k * k))))

    @classmethod
    def row_orthonormal(cls, m_out: int, c_in: int, k: int, rng: np.random.Generator) -> "KernelTensor":
        """
        Kernel whose patch matrix K̂ has orthonormal rows (requires M <= C k^2).
        Built by QR (Gram-Schmidt) of a seeded normal matrix.
        """
        n = c_in * k * k
        if m_out > n:
            raise ShapeError(f"Orthonormal rows need M <= C*k*k, got M={m_out}, C*k*k={n}")
        q, _ = np.linalg.qr(randn((n, m_out), rng))
        return cls(reshape(np.ascontiguousarray(q.T), (m_out, c_in, k, k)))

    def __repr__(self):
        return f"KernelTensor(M={self.m_out}, C={self.c_in}, k={self.k})"


def spawn_rngs(seed: int, n: int):
    """`n` independent PCG64 generators derived from one seed, stable across runs."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]
