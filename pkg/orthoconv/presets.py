"""
Named layer geometries used by the command line.
"""
from dataclasses import dataclass
from typing import Dict, Tuple

from orthoconv.conv import ConvGeometry
from orthoconv.exceptions import ConfigError


@dataclass(frozen=True)
class Preset:
    """A kernel shape, stride and input shape; `dense` is False when only power iteration is affordable."""
    name: str
    m_out: int
    c_in: int
    k: int
    stride: int
    input_shape: Tuple[int, int, int]
    dense: bool
    description: str

    def geometry(self, layer_pad: int = 0) -> ConvGeometry:
        c, h, w = self.input_shape
        return ConvGeometry(c_in=c, h=h, w=w, m_out=self.m_out, k=self.k, stride=self.stride,
                            layer_pad=layer_pad)


PRESETS: Dict[str, Preset] = {
    p.name: p for p in (
        Preset("fig3", m_out=1, c_in=1, k=2, stride=1, input_shape=(1, 4, 4), dense=True,
               description="2x2 kernel on a 4x4 input; 9x16 DBT matrix"),
        Preset("fig2b-desk", m_out=4, c_in=4, k=3, stride=1, input_shape=(4, 12, 12), dense=True,
               description="4x4x3x3 kernel on a 4x12x12 input; 400x576 DBT matrix"),
        Preset("sec48-sigma", m_out=128, c_in=64, k=3, stride=1, input_shape=(64, 16, 16), dense=False,
               description="128x64x3x3 kernel on a 64x16x16 input; 25088x16384 DBT matrix, top singular value only"),
    )
}

# Shape-based names accepted in place of the canonical ones
PRESET_ALIASES: Dict[str, str] = {
    "toy-2x2": "fig3",
    "desk-4x4": "fig2b-desk",
    "large-128x64": "sec48-sigma",
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[PRESET_ALIASES.get(name, name)]
    except KeyError:
        raise ConfigError(f"Unknown preset '{name}', expected one of {sorted(PRESETS)}") from None
