"""
Training commands: the toy CNN, the desk-scale spectrum demonstration and the lambda sweep.
"""
import argparse
from dataclasses import replace
from typing import Any, Dict, List, Optional

import numpy as np

from orthoconv.commands import (CommandInterface, geometry_dict, load_kernel, resolve_geometry,
                                resolve_preset)
from orthoconv.conv import ConvGeometry
from orthoconv.dbt import build_dbt, to_dense
from orthoconv.exceptions import ConfigError
from orthoconv.io import TrainConfig, read_config, write_csv, write_frame
from orthoconv.logger import get_logger
from orthoconv.orthreg import conv_orth_loss, kernel_orth_loss, orth_mode_for
from orthoconv.spectrum import SpectrumReport, analyze_kernel, spectrum_report, svd_values
from orthoconv.tensor import KernelTensor
from orthoconv.trainer import (CONV_LAYERS, DEFAULT_SWEEP_LAMBDAS, gen_dataset, lambda_sweep,
                               minimize_kernel_orth_only, minimize_orth_only, stripe_baseline_accuracy,
                               train)

logger = get_logger()

SPECTRUM_COLUMNS = ["index", "index_normalized", "sigma"]


def _add_training_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON training config (lambda, lr, momentum, epochs, batch_size, seed, mode)")
    parser.add_argument("--regularizer", choices=["none", "kernel", "conv"],
                        help="regularizer applied during training (default conv)")
    parser.add_argument("--lr", type=float, help="learning rate (default 0.05)")
    parser.add_argument("--epochs", type=int, help="epochs (default 30)")
    parser.add_argument("--batch-size", type=int, help="minibatch size (default 10)")
    parser.add_argument("--samples", type=int, default=50, help="images per class (default 50)")


def training_config(args: argparse.Namespace) -> TrainConfig:
    """Config file (or defaults) with command-line flags taking precedence."""
    config = read_config(args.config) if args.config else TrainConfig()
    overrides = {
        "lam": args.lam,
        "lr": args.lr,
        "seed": args.seed,
        "mode": args.regularizer,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
    }
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})


def _stage_spectra(kernels: Dict[str, np.ndarray], geometries: Dict[str, ConvGeometry],
                   epsilon: float) -> Dict[str, SpectrumReport]:
    return {layer: analyze_kernel(KernelTensor(kernels[layer]), geometries[layer], epsilon)
            for layer in CONV_LAYERS}


class TrainCommand(CommandInterface):
    """Train the toy CNN and export its metrics."""

    @classmethod
    def get_command(cls) -> str:
        return "train"

    @classmethod
    def get_description(cls) -> str:
        return "Train the toy CNN with L = L_task + lambda * L_orth on stripe images"

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        _add_training_arguments(parser)
        parser.add_argument("--spectra-out", metavar="PREFIX",
                            help="write PREFIX_<layer>_<initial|final>.csv spectra of every conv layer")

    @classmethod
    def execute(cls, args: argparse.Namespace) -> Dict[str, Any]:
        config = training_config(args)
        dataset = gen_dataset(config.seed, args.samples)
        metrics, model = train(config, dataset)
        if args.out:
            metrics.save(args.out)

        final_orth = metrics.final_orth()
        report: Dict[str, Any] = {
            "config": config.to_json_dict(),
            "samples": len(dataset),
            "baseline_accuracy": stripe_baseline_accuracy(dataset),
            "epochs": len(metrics),
            "final_accuracy": metrics.final_accuracy,
            "final_task_loss": float(metrics.get_history()["task_loss"].iloc[-1]),
            "initial_orth_loss": metrics.initial_orth,
            "final_orth_loss": final_orth,
            "orth_decreased": {l: bool(final_orth[l] < metrics.initial_orth[l]) for l in CONV_LAYERS},
            "orth_modes": {l: orth_mode_for(model.geometries[l]) for l in CONV_LAYERS},
        }
        if args.spectra_out:
            for stage, kernels in (("initial", metrics.initial_kernels), ("final", metrics.final_kernels)):
                for layer, spec in _stage_spectra(kernels, model.geometries, args.epsilon).items():
                    write_csv(f"{args.spectra_out}_{layer}_{stage}.csv", SPECTRUM_COLUMNS, spec.to_rows())
                    report.setdefault("spectra", {}).setdefault(layer, {})[stage] = {
                        "sigma_max": spec.sigma_max, "sigma_min_nonzero": spec.sigma_min_nonzero,
                        "count_unit": spec.count_unit,
                    }
        return report

    @classmethod
    def summarize(cls, report: Dict[str, Any]) -> str:
        lines = [f"train: {report['epochs']} epochs on {report['samples']} images",
                 f"  accuracy {report['final_accuracy']:.3f} (stripe baseline {report['baseline_accuracy']:.3f})"]
        for layer in CONV_LAYERS:
            lines.append(f"  {layer} conv-orth loss {report['initial_orth_loss'][layer]:.6g} -> "
                         f"{report['final_orth_loss'][layer]:.6g}")
        return "\n".join(lines)


class DemoSpectrumCommand(CommandInterface):
    """
    Spectrum of a layer before and after minimizing each orthogonality loss on its own.
    Writes one CSV with the initial, kernel-orthogonal and conv-orthogonal spectra side by side.
    """

    @classmethod
    def get_command(cls) -> str:
        return "demo-spectrum"

    @classmethod
    def get_description(cls) -> str:
        return "Minimize the orthogonality losses on a preset layer and compare DBT spectra"

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--steps", type=int, default=2000, help="gradient steps per minimization (default 2000)")
        parser.add_argument("--lr", type=float, default=0.01, help="initial step size (default 0.01)")

    @classmethod
    def execute(cls, args: argparse.Namespace) -> Dict[str, Any]:
        preset = resolve_preset(args, default="fig2b-desk")
        kernel = load_kernel(args, preset)
        geom = resolve_geometry(args, kernel, preset)
        mode = args.mode if args.mode in ("row", "col") else orth_mode_for(geom)

        conv_run = minimize_orth_only(kernel, geom.stride, args.steps, args.lr, mode)
        kernel_run = minimize_kernel_orth_only(kernel, args.steps, args.lr)
        stages = {"init": kernel, "kernel_orth": kernel_run.kernel, "conv_orth": conv_run.kernel}
        spectra = {name: spectrum_report(svd_values(to_dense(build_dbt(k, geom))), args.epsilon, geom)
                   for name, k in stages.items()}

        if args.out:
            n = spectra["init"].singular_values.size
            rows = [(i, i / n, *(float(spectra[s].singular_values[i]) for s in stages)) for i in range(n)]
            write_csv(args.out, ["index", "index_normalized"] + [f"sigma_{s}" for s in stages], rows)

        initial, final = conv_run.losses[0], conv_run.losses[-1]
        report: Dict[str, Any] = {
            "geometry": geometry_dict(geom),
            "mode": mode,
            "steps": args.steps,
            "conv_orth_loss": {"initial": initial, "final": final,
                               "reduction": initial / final if final > 0 else None},
            "kernel_orth_loss": {"initial": kernel_orth_loss(kernel).loss,
                                 "final": kernel_run.losses[-1],
                                 "conv_orth_after_kernel_orth": conv_orth_loss(kernel_run.kernel, geom.stride,
                                                                               mode).loss},
            "spectra": {name: _spectrum_summary(spec) for name, spec in spectra.items()},
        }
        if geom.is_fat and geom.layer_pad == 0 and mode == "row":
            values = spectra["conv_orth"].singular_values
            deviation = float(np.sqrt(np.sum((values ** 2 - 1.0) ** 2)))
            report["row_bound"] = {"deviation": deviation,
                                   "bound": float(np.sqrt(geom.h_out * geom.w_out * final)),
                                   "holds": bool(deviation <= np.sqrt(geom.h_out * geom.w_out * final) + 1e-12)}
        report["condition_number_decreased"] = bool(
            spectra["conv_orth"].condition_number < spectra["init"].condition_number)
        return report

    @classmethod
    def summarize(cls, report: Dict[str, Any]) -> str:
        loss = report["conv_orth_loss"]
        reduction = "exact" if loss["reduction"] is None else f"{loss['reduction']:.3g}x"
        lines = [f"demo-spectrum: conv-orth loss {loss['initial']:.6g} -> {loss['final']:.6g} ({reduction})"]
        for name, spec in report["spectra"].items():
            lines.append(f"  {name}: sigma in [{spec['sigma_min_nonzero']:.4f}, {spec['sigma_max']:.4f}], "
                         f"{100 * spec['count_unit']:.1f}% within epsilon of 1")
        return "\n".join(lines)


def _spectrum_summary(spec: SpectrumReport) -> Dict[str, Any]:
    summary = spec.to_dict()
    summary.pop("geometry", None)
    return summary


def _parse_lambdas(text: Optional[str]) -> List[float]:
    if not text:
        return list(DEFAULT_SWEEP_LAMBDAS)
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"--lambdas must be comma-separated numbers, got '{text}'") from None
    if any(v < 0 for v in values):
        raise ConfigError(f"--lambdas must be >= 0, got {values}")
    return values


class SweepCommand(CommandInterface):
    """One training run per lambda."""

    @classmethod
    def get_command(cls) -> str:
        return "sweep"

    @classmethod
    def get_description(cls) -> str:
        return "Train the toy CNN for several lambda values and tabulate final metrics"

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        _add_training_arguments(parser)
        parser.add_argument("--lambdas", help="comma-separated lambda grid (default 0.05,0.1,0.5,1.0)")

    @classmethod
    def execute(cls, args: argparse.Namespace) -> Dict[str, Any]:
        config = training_config(args)
        dataset = gen_dataset(config.seed, args.samples)
        frame = lambda_sweep(config, dataset, _parse_lambdas(args.lambdas))
        if args.out:
            write_frame(args.out, frame)
        return {"config": config.to_json_dict(), "results": frame.to_dict(orient="records")}
