"""
Singular-value analysis of DBT matrices.

Dense spectra use a one-sided (Hestenes) Jacobi SVD with round-robin pair
ordering, so each round rotates disjoint column pairs at once. Large layers get
their top singular value from power iteration on K^T K with sparse products.
"""
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from orthoconv.conv import ConvGeometry
from orthoconv.dbt import DbtMatrix, build_dbt, to_dense
from orthoconv.exceptions import CapacityError, ConfigError, NumericalError, ShapeError
from orthoconv.logger import get_logger
from orthoconv.settings import get_settings
from orthoconv.tensor import KernelTensor, make_rng

logger = get_logger()

ZERO_SIGMA_RATIO = 1e-10
TRACE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_rows(self) -> List[Tuple[float, float, int]]:
        """(bin_lo, bin_hi, count) rows."""
        return [(float(self.edges[i]), float(self.edges[i + 1]), int(self.counts[i]))
                for i in range(self.counts.size)]


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    """Descending singular values with summary statistics."""
    singular_values: np.ndarray
    sigma_max: float
    sigma_min_nonzero: float
    count_unit: float
    epsilon: float
    geometry: Optional[ConvGeometry] = None

    @property
    def nonzero_values(self) -> np.ndarray:
        return self.singular_values[self.singular_values > ZERO_SIGMA_RATIO * self.sigma_max]

    @property
    def condition_number(self) -> float:
        if self.sigma_min_nonzero == 0.0:
            return float("inf")
        return self.sigma_max / self.sigma_min_nonzero

    def to_rows(self) -> List[Tuple[int, float, float]]:
        """(index, normalized index, sigma) rows; the index is normalized by the value count."""
        n = self.singular_values.size
        return [(i, i / n, float(s)) for i, s in enumerate(self.singular_values)]

    def to_dict(self) -> Dict[str, object]:
        summary = {
            "count": int(self.singular_values.size),
            "count_nonzero": int(self.nonzero_values.size),
            "sigma_max": self.sigma_max,
            "sigma_min_nonzero": self.sigma_min_nonzero,
            "condition_number": self.condition_number if np.isfinite(self.condition_number) else None,
            "count_unit": self.count_unit,
            "epsilon": self.epsilon,
        }
        if self.geometry is not None:
            g = self.geometry
            summary["geometry"] = {"c_in": g.c_in, "h": g.h, "w": g.w, "m_out": g.m_out, "k": g.k,
                                   "stride": g.stride, "padding": g.layer_pad,
                                   "h_out": g.h_out, "w_out": g.w_out}
        return summary


class SigmaMaxEstimate(NamedTuple):
    value: float
    iterations: int
    converged: bool


def _round_robin(n: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Cyclic tournament schedule: n - 1 (or n) rounds of disjoint index pairs covering all pairs."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a >= 0 and b >= 0]
        if pairs:
            p, q = zip(*pairs)
            rounds.append((np.array(p), np.array(q)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def svd_values(a: np.ndarray, cap: Optional[int] = None, max_sweeps: Optional[int] = None,
               tol: Optional[float] = None) -> np.ndarray:
    """
    All singular values of a dense matrix, sorted descending.

    Columns of the thinner orientation are orthogonalized by Jacobi rotations until
    every pair satisfies |a_p . a_q| <= tol * sqrt(|a_p|^2 |a_q|^2); the singular
    values are then the column norms.

    Raises:
        CapacityError: if the matrix exceeds the dense cap
        NumericalError: on non-convergence or if the trace identity fails
    """
    settings = get_settings()
    cap = settings.dense_cap if cap is None else cap
    max_sweeps = settings.jacobi_max_sweeps if max_sweeps is None else max_sweeps
    tol = settings.jacobi_tol if tol is None else tol

    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"svd_values expects a matrix, got shape {a.shape}")
    if a.size > cap:
        raise CapacityError(f"SVD input has {a.size} entries ({a.shape[0]}x{a.shape[1]}), above the cap of {cap}")

    work = np.array(a.T if a.shape[0] < a.shape[1] else a, dtype=np.float64, order="F")
    norm_sq = float(np.sum(work * work))
    n = work.shape[1]
    if norm_sq == 0.0:
        return np.zeros(n)
    floor = tol * tol * norm_sq

    rounds = _round_robin(n)
    for sweep in range(1, max_sweeps + 1):
        worst = 0.0
        for p, q in rounds:
            ap = work[:, p]
            aq = work[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            scale = np.maximum(np.sqrt(alpha * beta), floor)
            ratio = np.abs(gamma) / scale
            active = ratio > tol
            if not active.any():
                continue
            worst = max(worst, float(ratio.max()))
            g = gamma[active]
            zeta = (beta[active] - alpha[active]) / (2.0 * g)
            sign = np.where(zeta >= 0.0, 1.0, -1.0)
            t = sign / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            pa, qa = p[active], q[active]
            old_p, old_q = ap[:, active], aq[:, active]
            work[:, pa] = c * old_p - s * old_q
            work[:, qa] = s * old_p + c * old_q
        if worst == 0.0:
            logger.debug(f"Jacobi SVD of {a.shape[0]}x{a.shape[1]} converged after {sweep} sweeps")
            break
    else:
        raise NumericalError(
            f"Jacobi SVD did not converge in {max_sweeps} sweeps (largest off-diagonal ratio {worst:.3e})"
        )

    values = np.sort(np.sqrt(np.einsum("ij,ij->j", work, work)))[::-1]
    total = float(np.sum(values * values))
    if abs(total - norm_sq) > TRACE_RTOL * norm_sq:
        raise NumericalError(f"Trace identity violated: sum sigma^2 = {total!r}, ||A||_F^2 = {norm_sq!r}")
    return np.ascontiguousarray(values)


def sigma_max(dbt: DbtMatrix, iters: int = 2000, tol: float = 1e-12, seed: int = 0) -> SigmaMaxEstimate:
    """
    Largest singular value by power iteration on K^T K.

    Returns the best estimate with converged=False when the relative change never
    drops below `tol` within `iters` iterations.
    """
    if iters < 1:
        raise ConfigError(f"Power iteration needs iters >= 1, got {iters}")
    x = make_rng(seed).standard_normal(dbt.cols)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for it in range(1, iters + 1):
        y = dbt.csr @ x
        value = float(np.linalg.norm(y))
        if value == 0.0:
            return SigmaMaxEstimate(0.0, it, True)
        z = dbt.csr.T @ y
        x = z / np.linalg.norm(z)
        if abs(value - estimate) <= tol * value:
            return SigmaMaxEstimate(value, it, True)
        estimate = value
    logger.warning(f"Power iteration stopped after {iters} iterations without reaching tol {tol}")
    return SigmaMaxEstimate(estimate, iters, False)


def histogram(values: Sequence[float], n_bins: int, lo: float, hi: float) -> Histogram:
    """Uniform bins over [lo, hi]; values outside the range are clamped into the edge bins."""
    if n_bins < 1 or not lo < hi:
        raise ConfigError(f"Histogram needs n_bins >= 1 and lo < hi, got n_bins={n_bins}, lo={lo}, hi={hi}")
    edges = np.linspace(lo, hi, n_bins + 1)
    clipped = np.clip(np.asarray(values, dtype=np.float64).ravel(), lo, hi)
    counts, _ = np.histogram(clipped, bins=edges)
    return Histogram(edges=edges, counts=counts.astype(np.int64))


def spectrum_report(values: np.ndarray, epsilon: float = 1e-2,
                    geometry: Optional[ConvGeometry] = None) -> SpectrumReport:
    """Summarize descending singular values; values below 1e-10 sigma_max count as zero."""
    values = np.sort(np.asarray(values, dtype=np.float64))[::-1]
    top = float(values[0]) if values.size else 0.0
    nonzero = values[values > ZERO_SIGMA_RATIO * top]
    unit = np.abs(values - 1.0) <= epsilon
    return SpectrumReport(
        singular_values=values,
        sigma_max=top,
        sigma_min_nonzero=float(nonzero[-1]) if nonzero.size else 0.0,
        count_unit=float(unit.mean()) if values.size else 0.0,
        epsilon=epsilon,
        geometry=geometry,
    )


def analyze_kernel(kernel: KernelTensor, geom: ConvGeometry, epsilon: float = 1e-2,
                   cap: Optional[int] = None) -> SpectrumReport:
    """Dense spectrum of the layer's DBT matrix."""
    dbt = build_dbt(kernel, geom)
    values = svd_values(to_dense(dbt, cap), cap=cap)
    report = spectrum_report(values, epsilon, geom)
    logger.info(f"Spectrum of {kernel} on input {geom.input_shape}: sigma_max={report.sigma_max:.6g}, "
                f"sigma_min_nonzero={report.sigma_min_nonzero:.6g}")
    return report
