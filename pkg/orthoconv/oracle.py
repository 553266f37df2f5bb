"""
Brute-force agreement checks between the convolution-side formulas and the DBT matrix.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Tuple

import numpy as np

from orthoconv.conv import ConvGeometry, conv2d, self_conv, transpose_kernel
from orthoconv.dbt import build_dbt, col_gram, matvec, row_gram
from orthoconv.logger import get_logger
from orthoconv.orthreg import padding_for
from orthoconv.tensor import KernelTensor, randn, spawn_rngs

logger = get_logger()

# (C, H, W, M, k, S, p): covers S in {1, 2, 3} and p in {0, 1}.
OPERATOR_GEOMETRIES: Tuple[Tuple[int, int, int, int, int, int, int], ...] = (
    (1, 4, 4, 1, 2, 1, 0),
    (2, 6, 6, 3, 3, 2, 1),
    (3, 7, 5, 2, 3, 3, 0),
    (2, 5, 5, 2, 2, 1, 1),
    (1, 8, 8, 4, 4, 2, 0),
    (3, 6, 7, 2, 1, 3, 1),
)


def row_oracle_geometry(kernel: KernelTensor, stride: int) -> ConvGeometry:
    """
    Smallest valid-convolution geometry whose center output position (P/S, P/S)
    has every overlapping partner position inside the output.
    """
    pad = padding_for(kernel.k, stride)
    size = 2 * pad + kernel.k
    return ConvGeometry(c_in=kernel.c_in, h=size, w=size, m_out=kernel.m_out, k=kernel.k, stride=stride)


def col_oracle_geometry(kernel: KernelTensor) -> ConvGeometry:
    """Stride-1 geometry where input position (2k-2, 2k-2) and all its overlapping partners are interior."""
    size = 4 * kernel.k - 3
    return ConvGeometry(c_in=kernel.c_in, h=size, w=size, m_out=kernel.m_out, k=kernel.k, stride=1)


def row_self_conv_deviation(kernel: KernelTensor, stride: int) -> float:
    """
    Max |Z[i, j, u, v] - <row (i, r, r), row (j, u, v)>| with r = P/S, i.e. the center
    row against every row at offset (u - r, v - r).
    """
    pad = padding_for(kernel.k, stride)
    z = self_conv(kernel, pad, stride)
    geom = row_oracle_geometry(kernel, stride)
    r = pad // stride
    gram = row_gram(build_dbt(kernel, geom))
    centers = (np.arange(kernel.m_out) * geom.h_out + r) * geom.w_out + r
    expected = gram[centers].reshape(kernel.m_out, kernel.m_out, geom.h_out, geom.w_out)
    return float(np.max(np.abs(z - expected)))


def col_self_conv_deviation(kernel: KernelTensor) -> float:
    """
    Max |Z[i, j, u, v] - <col (j, h, h), col (i, h + u - (k-1), h + v - (k-1))>| for the
    column-form self-convolution Z = Conv(K^T, K^T, padding=k-1, stride=1) at h = 2k - 2.
    """
    k, c_in = kernel.k, kernel.c_in
    pad = k - 1
    z = self_conv(transpose_kernel(kernel), pad, 1)
    geom = col_oracle_geometry(kernel)
    h1 = 2 * k - 2
    gram = col_gram(build_dbt(kernel, geom))
    channels = np.arange(c_in)
    centers = (channels * geom.h + h1) * geom.w + h1
    offsets = np.arange(2 * k - 1) - pad
    partners = ((channels[:, None, None] * geom.h + h1 + offsets[None, :, None]) * geom.w
                + h1 + offsets[None, None, :])
    block = gram[centers[:, None, None, None], partners[None, :, :, :]]
    return float(np.max(np.abs(z - block.transpose(1, 0, 2, 3))))


def row_gram_from_self_conv(kernel: KernelTensor, geom: ConvGeometry) -> np.ndarray:
    """
    The full row Gram matrix of a valid-convolution DBT assembled from Z alone:
    pairs within P/S positions take the matching Z entry, all others are 0.
    """
    geom.check_kernel(kernel)
    pad = padding_for(kernel.k, geom.stride)
    r = pad // geom.stride
    z = self_conv(kernel, pad, geom.stride)
    m, ho, wo = geom.output_shape
    gram = np.zeros((m, ho, wo, m, ho, wo))
    for h1 in range(ho):
        for w1 in range(wo):
            for du in range(-r, r + 1):
                h2 = h1 + du
                if not 0 <= h2 < ho:
                    continue
                for dv in range(-r, r + 1):
                    w2 = w1 + dv
                    if 0 <= w2 < wo:
                        gram[:, h1, w1, :, h2, w2] = z[:, :, r + du, r + dv]
    return gram.reshape(m * ho * wo, m * ho * wo)


def operator_equivalence(n_pairs: int = 100, seed: int = 0, threads: int = 1) -> Dict[str, object]:
    """
    Compare conv2d with the DBT matrix-vector product on random (kernel, input) pairs
    spread over OPERATOR_GEOMETRIES. Each pair has its own generator, so the result
    does not depend on `threads`.
    """
    rngs = spawn_rngs(seed, n_pairs)

    def one(index):
        c, h, w, m, k, s, p = OPERATOR_GEOMETRIES[index % len(OPERATOR_GEOMETRIES)]
        rng = rngs[index]
        kernel = KernelTensor.random(m, c, k, rng)
        x = randn((c, h, w), rng)
        geom = ConvGeometry(c_in=c, h=h, w=w, m_out=m, k=k, stride=s, layer_pad=p)
        direct = conv2d(x, kernel, s, p).ravel()
        via_dbt = matvec(build_dbt(kernel, geom), x.ravel())
        return float(np.max(np.abs(direct - via_dbt)))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            diffs = list(pool.map(one, range(n_pairs)))
    else:
        diffs = [one(i) for i in range(n_pairs)]
    worst = max(diffs) if diffs else 0.0
    logger.info(f"Operator equivalence over {n_pairs} pairs: max abs diff {worst:.3e}")
    return {"pairs": n_pairs, "geometries": len(OPERATOR_GEOMETRIES), "max_abs_diff": worst}
