"""
Finite-difference gradient checking for the convolution adjoints and the regularizers.
"""
from typing import Callable, Dict, Iterable, Tuple

import numpy as np

from orthoconv.conv import ConvGeometry, conv2d, conv2d_grad_input, conv2d_grad_kernel
from orthoconv.exceptions import ConfigError
from orthoconv.logger import get_logger
from orthoconv.orthreg import conv_orth_loss, kernel_orth_loss
from orthoconv.tensor import KernelTensor, make_rng, randn

logger = get_logger()

FD_STEP = 1e-5
GRADCHECK_CONFIGS: Tuple[Tuple[int, int, int, int], ...] = (
    (1, 1, 1, 1),
    (2, 1, 2, 1),
    (3, 2, 3, 1),
    (4, 4, 3, 2),
    (2, 3, 4, 2),
)


def finite_difference(func: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """
    Central-difference gradient of a scalar function at every entry of `x`.
    `x` is left unchanged on return.
    """
    if h <= 0:
        raise ConfigError(f"Finite-difference step must be > 0, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        f_plus = func(x)
        flat_x[i] = orig - h
        f_minus = func(x)
        flat_x[i] = orig
        flat_g[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute deviation relative to the larger gradient magnitude of the two."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), 1e-300)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def check_conv_adjoints(seed: int = 0, h: float = FD_STEP) -> Dict[str, float]:
    """Errors of conv2d_grad_kernel / conv2d_grad_input against finite differences of <W, conv2d(x, K)>."""
    rng = make_rng(seed)
    errors = {}
    for m, c, k, s in GRADCHECK_CONFIGS:
        geom = ConvGeometry(c_in=c, h=k + 3, w=k + 4, m_out=m, k=k, stride=s, layer_pad=1)
        x = randn(geom.input_shape, rng)
        kernel = KernelTensor.random(m, c, k, rng)
        weights = randn(geom.output_shape, rng)

        def loss_k(kd, x=x, weights=weights, s=s):
            return float(np.sum(weights * conv2d(x, KernelTensor(kd), s, 1)))

        def loss_x(xd, kernel=kernel, weights=weights, s=s):
            return float(np.sum(weights * conv2d(xd, kernel, s, 1)))

        tag = f"M{m}_C{c}_k{k}_S{s}"
        errors[f"grad_kernel/{tag}"] = max_relative_error(
            conv2d_grad_kernel(x, weights, geom), finite_difference(loss_k, kernel.data, h))
        errors[f"grad_input/{tag}"] = max_relative_error(
            conv2d_grad_input(kernel, weights, geom), finite_difference(loss_x, x, h))
    return errors


def check_regularizers(seed: int = 0, configs: Iterable[Tuple[int, int, int, int]] = GRADCHECK_CONFIGS,
                       h: float = FD_STEP, kernels_per_config: int = 2) -> Dict[str, float]:
    """
    Errors of every regularizer gradient against finite differences.
    Column conv-orthogonality is checked for stride-1 configurations only.
    """
    rng = make_rng(seed)
    errors = {}
    for m, c, k, s in configs:
        for n in range(kernels_per_config):
            kernel = KernelTensor.random(m, c, k, rng, std=0.5)
            tag = f"M{m}_C{c}_k{k}_S{s}#{n}"
            losses = {
                "conv-row": lambda kd, s=s: conv_orth_loss(KernelTensor(kd), s, "row").loss,
                "kernel-row": lambda kd: kernel_orth_loss(KernelTensor(kd), "row").loss,
                "kernel-col": lambda kd: kernel_orth_loss(KernelTensor(kd), "col").loss,
            }
            analytic = {
                "conv-row": conv_orth_loss(kernel, s, "row").grad,
                "kernel-row": kernel_orth_loss(kernel, "row").grad,
                "kernel-col": kernel_orth_loss(kernel, "col").grad,
            }
            if s == 1:
                losses["conv-col"] = lambda kd: conv_orth_loss(KernelTensor(kd), 1, "col").loss
                analytic["conv-col"] = conv_orth_loss(kernel, 1, "col").grad
            for name, func in losses.items():
                errors[f"{name}/{tag}"] = max_relative_error(analytic[name], finite_difference(func, kernel.data, h))
    worst = max(errors.values())
    logger.info(f"Regularizer gradient check over {len(errors)} cases: worst relative error {worst:.3e}")
    return errors
