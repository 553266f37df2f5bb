"""
Analysis commands: losses of a kernel, DBT spectra, the row/column loss identity,
gradient checks and the brute-force DBT oracles.
"""
import argparse
from typing import Any, Dict

import numpy as np

from orthoconv.commands import (CommandInterface, geometry_dict, load_kernel, resolve_geometry,
                                resolve_preset, resolve_seed, resolve_stride)
from orthoconv.conv import ConvGeometry
from orthoconv.dbt import build_dbt, to_dense
from orthoconv.exceptions import ConfigError, NumericalError
from orthoconv.gradcheck import FD_STEP, check_conv_adjoints, check_regularizers
from orthoconv.io import TrainConfig, write_csv, write_json
from orthoconv.logger import get_logger
from orthoconv.oracle import (OPERATOR_GEOMETRIES, col_self_conv_deviation, operator_equivalence,
                              row_self_conv_deviation)
from orthoconv.orthreg import DEFAULT_LAMBDA, conv_orth_loss, kernel_orth_loss, lemma_gap
from orthoconv.settings import get_settings
from orthoconv.spectrum import histogram, sigma_max, spectrum_report, svd_values
from orthoconv.tensor import KernelTensor, make_rng, randn, spawn_rngs
from orthoconv.trainer import grad_check_model

logger = get_logger()

GRADCHECK_TOL = 1e-5
ORACLE_TOL = 1e-10
# (M, C, k, S) kernels for the self-convolution oracles; includes k=3,S=1 and k=4,S=2.
SELF_CONV_CASES = ((2, 1, 2, 1), (3, 2, 3, 1), (2, 3, 4, 2), (4, 4, 3, 2), (3, 2, 3, 3), (1, 2, 1, 1))


def _lambda(args: argparse.Namespace) -> float:
    lam = DEFAULT_LAMBDA if args.lam is None else args.lam
    if lam < 0:
        raise ConfigError(f"--lambda must be >= 0, got {lam}")
    return lam


class CheckCommand(CommandInterface):
    """Conv- and kernel-orthogonality losses of one kernel."""

    @classmethod
    def get_command(cls) -> str:
        return "check"

    @classmethod
    def get_description(cls) -> str:
        return "Print conv-orthogonality and kernel-orthogonality losses of a kernel"

    @classmethod
    def execute(cls, args: argparse.Namespace) -> Dict[str, Any]:
        preset = resolve_preset(args)
        kernel = load_kernel(args, preset)
        stride = resolve_stride(args, preset)
        lam = _lambda(args)
        mode = args.mode or "row"

        conv = {"row": conv_orth_loss(kernel, stride, "row", lam)}
        if stride == 1:
            conv["col"] = conv_orth_loss(kernel, 1, "col", lam)
        kern = {m: kernel_orth_loss(kernel, m, lam) for m in ("row", "col")}
        if mode.startswith("kernel-"):
            selected = kern[mode[len("kernel-"):]]
        else:
            selected = conv[mode] if mode in conv else conv_orth_loss(kernel, stride, mode, lam)

        report = {
            "kernel": {"m_out": kernel.m_out, "c_in": kernel.c_in, "k": kernel.k},
            "stride": stride,
            "mode": mode,
            "lambda": lam,
            "loss": selected.loss,
            "loss_unsquared": selected.unsquared,
            "weighted_loss": selected.weighted_loss,
            "conv_orth_loss": {m: r.loss for m, r in conv.items()},
            "conv_orth_loss_unsquared": {m: r.unsquared for m, r in conv.items()},
            "kernel_orth_loss": {m: r.loss for m, r in kern.items()},
            "kernel_orth_loss_unsquared": {m: r.unsquared for m, r in kern.items()},
        }
        write_json(args.out, report)
        return report


class SpectrumCommand(CommandInterface):
    """Singular values of a layer's DBT matrix; power iteration when the layer is too large."""

    @classmethod
    def get_command(cls) -> str:
        return "spectrum"

    @classmethod
    def get_description(cls) -> str:
        return "Singular-value spectrum of a layer's doubly block-Toeplitz matrix"

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--bins", type=int, default=20, help="histogram bins (default 20)")
        parser.add_argument("--hist-range", default="0,2", help="histogram range LO,HI (default 0,2)")
        parser.add_argument("--hist-out", help="write the histogram as CSV (bin_lo,bin_hi,count)")
        parser.add_argument("--power-iters", type=int, default=2000,
                            help="power iterations for the top singular value (default 2000)")

    @classmethod
    def execute(cls, args: argparse.Namespace) -> Dict[str, Any]:
        preset = resolve_preset(args)
        kernel = load_kernel(args, preset)
        geom = resolve_geometry(args, kernel, preset)
        dbt = build_dbt(kernel, geom)
        rows, cols = geom.dbt_shape
        estimate = sigma_max(dbt, iters=args.power_iters, seed=resolve_seed(args))
        report: Dict[str, Any] = {
            "geometry": geometry_dict(geom),
            "power_iteration": {"sigma_max": estimate.value, "iterations": estimate.iterations,
                                "converged": estimate.converged},
        }
        dense_ok = rows * cols <= get_settings().dense_cap and (preset is None or preset.dense)
        if not dense_ok:
            logger.info(f"DBT matrix {rows}x{cols} is beyond the dense cap; reporting sigma_max only")
            skipped = [flag for flag, path in (("--out", args.out), ("--hist-out", args.hist_out)) if path]
            if skipped:
                logger.warning(f"No dense spectrum for a {rows}x{cols} DBT matrix; {' and '.join(skipped)} "
                               f"not written")
            return report

        values = svd_values(to_dense(dbt))
        spec = spectrum_report(values, args.epsilon, geom)
        summary = spec.to_dict()
        summary.pop("geometry", None)
        report["spectrum"] = summary
        deviation = float(np.sqrt(np.sum((values ** 2 - 1.0) ** 2)))
        report["orth_deviation"] = deviation
        if geom.is_fat and geom.layer_pad == 0:
            loss = conv_orth_loss(kernel, geom.stride, "row").loss
            report["row_bound"] = {"deviation": deviation,
                                   "bound": float(np.sqrt(geom.h_out * geom.w_out * loss)),
                                   "conv_orth_loss": loss}

        lo, hi = _parse_range(args.hist_range)
        hist = histogram(values, args.bins, lo, hi)
        report["histogram"] = {"edges": [float(e) for e in hist.edges], "counts": [int(c) for c in hist.counts]}
        if args.out:
            write_csv(args.out, ["index", "index_normalized", "sigma"], spec.to_rows())
        if args.hist_out:
            write_csv(args.hist_out, ["bin_lo", "bin_hi", "count"], hist.to_rows())
        return report


def _parse_range(text: str):
    try:
        lo, hi = (float(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"--hist-range must be LO,HI, got '{text}'") from None
    return lo, hi


class LemmaCommand(CommandInterface):
    """Row and column orthogonality losses of a matrix and their difference."""

    @classmethod
    def get_command(cls) -> str:
        return "lemma"

    @classmethod
    def get_description(cls) -> str:
        return "Check that the row and column orthogonality losses differ by rows - cols"

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--rows", type=int, default=9, help="rows of the random matrix (default 9)")
        parser.add_argument("--cols", type=int, default=16, help="columns of the random matrix (default 16)")

    @classmethod
    def execute(cls, args: argparse.Namespace) -> Dict[str, Any]:
        preset = resolve_preset(args)
        if preset is not None or args.kernel:
            kernel = load_kernel(args, preset)
            a = to_dense(build_dbt(kernel, resolve_geometry(args, kernel, preset)))
            source = "dbt"
        else:
            if args.rows < 1 or args.cols < 1:
                raise ConfigError(f"--rows and --cols must be >= 1, got {args.rows}x{args.cols}")
            a = randn((args.rows, args.cols), make_rng(resolve_seed(args)))
            source = "random"
        rows, cols = a.shape
        result = lemma_gap(a)
        expected = rows - cols
        if abs(result.gap - expected) > 1e-8 * max(rows, cols):
            raise NumericalError(f"Loss gap {result.gap!r} differs from rows - cols = {expected}")
        report = {"source": source, "rows": rows, "cols": cols, "l_r": result.l_r, "l_c": result.l_c,
                  "gap": result.gap, "expected_gap": expected}
        write_json(args.out, report)
        return report


class GradcheckCommand(CommandInterface):
    """Finite-difference verification of every analytic gradient."""

    @classmethod
    def get_command(cls) -> str:
        return "gradcheck"

    @classmethod
    def get_description(cls) -> str:
        return "Compare analytic gradients with central finite differences"

    @classmethod
    def execute(cls, args: argparse.Namespace) -> Dict[str, Any]:
        seed = resolve_seed(args)
        lam = _lambda(args)
        adjoints = check_conv_adjoints(seed, FD_STEP)
        regularizers = check_regularizers(seed, h=FD_STEP)
        model = {
            "lambda_0": grad_check_model(TrainConfig(lam=0.0, seed=seed), FD_STEP),
            f"lambda_{lam:g}": grad_check_model(TrainConfig(lam=lam, seed=seed), FD_STEP),
        }
        worst = max(max(adjoints.values()), max(regularizers.values()), max(model.values()))
        report = {
            "h": FD_STEP,
            "tolerance": GRADCHECK_TOL,
            "conv_adjoints": max(adjoints.values()),
            "regularizers": max(regularizers.values()),
            "model": model,
            "max_relative_error": worst,
            "cases": len(adjoints) + len(regularizers) + len(model),
        }
        write_json(args.out, report)
        if worst > GRADCHECK_TOL:
            failing = sorted(k for k, v in {**adjoints, **regularizers, **model}.items() if v > GRADCHECK_TOL)
            raise NumericalError(f"Gradient check failed ({worst:.3e} > {GRADCHECK_TOL}): {failing}")
        return report


class OracleCommand(CommandInterface):
    """Brute-force agreement between convolution formulas and explicit DBT matrices."""

    @classmethod
    def get_command(cls) -> str:
        return "oracle"

    @classmethod
    def get_description(cls) -> str:
        return "Check conv2d, self-convolution and the loss identity against explicit DBT matrices"

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--pairs", type=int, default=100,
                            help="random (kernel, input) pairs for the operator check (default 100)")

    @classmethod
    def execute(cls, args: argparse.Namespace) -> Dict[str, Any]:
        seed = resolve_seed(args)
        if args.pairs < 1:
            raise ConfigError(f"--pairs must be >= 1, got {args.pairs}")
        operator = operator_equivalence(args.pairs, seed, args.threads)
        rngs = spawn_rngs(seed, len(SELF_CONV_CASES))
        row_dev, col_dev = {}, {}
        for (m, c, k, s), rng in zip(SELF_CONV_CASES, rngs):
            kernel = KernelTensor.random(m, c, k, rng)
            tag = f"M{m}_C{c}_k{k}_S{s}"
            row_dev[tag] = row_self_conv_deviation(kernel, s)
            if s == 1:
                col_dev[tag] = col_self_conv_deviation(kernel)

        gaps = {}
        gap_rng = make_rng(seed)
        for c, h, w, m, k, s, p in OPERATOR_GEOMETRIES:
            kernel = KernelTensor.random(m, c, k, gap_rng)
            geom = ConvGeometry(c_in=c, h=h, w=w, m_out=m, k=k, stride=s, layer_pad=p)
            a = to_dense(build_dbt(kernel, geom))
            result = lemma_gap(a)
            gaps[f"{a.shape[0]}x{a.shape[1]}"] = abs(result.gap - (a.shape[0] - a.shape[1])) / max(a.shape)

        report = {
            "operator": operator,
            "row_self_conv": row_dev,
            "col_self_conv": col_dev,
            "lemma_relative_error": gaps,
            "tolerance": ORACLE_TOL,
        }
        write_json(args.out, report)
        worst = max([operator["max_abs_diff"], *row_dev.values(), *col_dev.values()])
        if worst > ORACLE_TOL or max(gaps.values()) > 1e-8:
            raise NumericalError(f"Oracle disagreement: max abs diff {worst:.3e}, "
                                 f"worst loss-gap error {max(gaps.values()):.3e}")
        return report
