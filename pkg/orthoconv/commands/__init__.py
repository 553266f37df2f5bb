"""
Command plugins for the orthoconv command line.
Every module in this package may define CommandInterface subclasses; the manager
discovers them at startup and the CLI builds one subcommand per plugin.
"""
import argparse
import importlib
import inspect
import os
import pkgutil
from typing import Any, Dict, List, Optional, Tuple

from orthoconv.conv import ConvGeometry
from orthoconv.exceptions import ConfigError, ShapeError
from orthoconv.io import read_npy
from orthoconv.logger import get_logger
from orthoconv.presets import Preset, get_preset
from orthoconv.tensor import KernelTensor, make_rng

logger = get_logger()


class CommandInterface:
    """
    Interface that all command plugins must implement.
    """
    @classmethod
    def get_command(cls) -> str:
        """
        Get the subcommand name that triggers this plugin.

        Returns:
            String representing the subcommand name
        """
        raise NotImplementedError("Commands must implement get_command")

    @classmethod
    def get_description(cls) -> str:
        """
        Get a one-line description shown in --help.

        Returns:
            String describing the command
        """
        raise NotImplementedError("Commands must implement get_description")

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        """Register command-specific flags; the shared flags are already present."""

    @classmethod
    def execute(cls, args: argparse.Namespace) -> Dict[str, Any]:
        """
        Run the command.

        Args:
            args: parsed command-line flags

        Returns:
            JSON-serializable report printed to standard output
        """
        raise NotImplementedError("Commands must implement execute")

    @classmethod
    def summarize(cls, report: Dict[str, Any]) -> str:
        """Human-readable summary for --verbose."""
        lines = [f"{cls.get_command()}:"]
        for key in sorted(report):
            value = report[key]
            if not isinstance(value, (dict, list)):
                lines.append(f"  {key}: {value}")
        return "\n".join(lines)


class CommandManager:
    """
    Manager for loading and accessing command plugins.
    """
    _instance = None
    _commands: Dict[str, type] = {}

    def __new__(cls):
        """Implement Singleton pattern for command management."""
        if cls._instance is None:
            cls._instance = super(CommandManager, cls).__new__(cls)
            cls._instance._commands = {}
        return cls._instance

    def load_commands(self, command_package: str = "orthoconv.commands"):
        """
        Dynamically load all command plugins from the specified package.

        Args:
            command_package: Dot-separated path to the command package
        """
        self._commands = {}
        package = importlib.import_module(command_package)
        package_path = os.path.dirname(package.__file__)

        for _, module_name, is_pkg in pkgutil.iter_modules([package_path]):
            if is_pkg or module_name == "__init__":
                continue
            module = importlib.import_module(f"{command_package}.{module_name}")
            for _, obj in inspect.getmembers(module, inspect.isclass):
                if issubclass(obj, CommandInterface) and obj is not CommandInterface:
                    command = obj.get_command()
                    if command in self._commands and self._commands[command] is not obj:
                        logger.warning(f"Command '{command}' already registered. Overwriting.")
                    self._commands[command] = obj
                    logger.debug(f"Loaded command: {command} - {obj.get_description()}")

    def get_command(self, command: str) -> Optional[type]:
        return self._commands.get(command)

    def get_all_commands(self) -> Dict[str, type]:
        return self._commands.copy()

    def get_command_names(self) -> List[str]:
        """
        Get the registered subcommand names, sorted.

        Returns:
            List of command names
        """
        return sorted(self._commands)

    def get_descriptions(self) -> Dict[str, str]:
        return {cmd: plugin.get_description() for cmd, plugin in self._commands.items()}

    def execute_command(self, command: str, args: argparse.Namespace) -> Dict[str, Any]:
        """
        Execute a command by name.

        Raises:
            ConfigError: If the command is not registered
        """
        plugin = self.get_command(command)
        if plugin is None:
            raise ConfigError(f"Command '{command}' not found")
        logger.info(f"Executing command: {command}")
        return plugin.execute(args)


def get_command_manager() -> CommandManager:
    """
    Get the command manager instance.

    Returns:
        Singleton instance of CommandManager
    """
    return CommandManager()


# Helpers shared by the command modules

def parse_input_shape(text: str) -> Tuple[int, int, int]:
    """Parse 'C,H,W' into three positive integers."""
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"--input-shape must be C,H,W integers, got '{text}'") from None
    if len(parts) != 3 or min(parts) < 1:
        raise ConfigError(f"--input-shape must be three positive integers C,H,W, got '{text}'")
    return parts


def resolve_preset(args: argparse.Namespace, default: Optional[str] = None) -> Optional[Preset]:
    name = getattr(args, "preset", None) or default
    return get_preset(name) if name else None


def resolve_seed(args: argparse.Namespace, default: int = 0) -> int:
    return default if args.seed is None else args.seed


def resolve_stride(args: argparse.Namespace, preset: Optional[Preset]) -> int:
    if args.stride is not None:
        return args.stride
    return preset.stride if preset else 1


def load_kernel(args: argparse.Namespace, preset: Optional[Preset]) -> KernelTensor:
    """
    Kernel from --kernel, or a seeded scaled-normal kernel with the preset's shape.

    Raises:
        ConfigError: when neither --kernel nor a preset is given
    """
    if args.kernel:
        data = read_npy(args.kernel)
        if data.ndim != 4:
            raise ShapeError(f"{args.kernel}: kernel must be 4-D [M, C, k, k], got shape {data.shape}")
        return KernelTensor(data)
    if preset is None:
        raise ConfigError("A kernel is required: pass --kernel PATH.npy or --preset NAME")
    return KernelTensor.he_normal(preset.m_out, preset.c_in, preset.k, make_rng(resolve_seed(args)))


def resolve_geometry(args: argparse.Namespace, kernel: KernelTensor, preset: Optional[Preset]) -> ConvGeometry:
    """Layer geometry from --input-shape (or the preset's input), --stride and --padding."""
    if args.input_shape:
        input_shape = parse_input_shape(args.input_shape)
    elif preset is not None:
        input_shape = preset.input_shape
    else:
        raise ConfigError("An input shape is required: pass --input-shape C,H,W or --preset NAME")
    return ConvGeometry.for_kernel(kernel, input_shape, resolve_stride(args, preset), args.padding)


def geometry_dict(geom: ConvGeometry) -> Dict[str, int]:
    rows, cols = geom.dbt_shape
    return {"c_in": geom.c_in, "h": geom.h, "w": geom.w, "m_out": geom.m_out, "k": geom.k,
            "stride": geom.stride, "padding": geom.layer_pad, "h_out": geom.h_out, "w_out": geom.w_out,
            "dbt_rows": rows, "dbt_cols": cols}
