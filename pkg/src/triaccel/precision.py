"""Software emulation of FP16 / BF16 rounding on float64 values.

Values never leave float64; a "half precision" tensor is a float64 array whose
entries all happen to be representable in the narrower format.  Rounding is
round-to-nearest-even, subnormals are kept, overflow goes to signed infinity.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# Static loss scale used in front of FP16 gradient quantization.
DEFAULT_LOSS_SCALE = 2.0**10


class PrecisionMode(enum.IntEnum):
    """Compute format of a layer.  Integer order is the stability rank."""

    FP16 = 0
    BF16 = 1
    FP32 = 2

    @classmethod
    def parse(cls, name: str | PrecisionMode) -> PrecisionMode:
        if isinstance(name, PrecisionMode):
            return name
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown precision mode {name!r}") from None


@dataclass(frozen=True)
class QuantSpec:
    exponent_bits: int
    significand_bits: int  # stored bits, implicit leading one excluded
    max_finite: float

    @property
    def bias(self) -> int:
        return 2 ** (self.exponent_bits - 1) - 1

    @property
    def min_normal_exp(self) -> int:
        return 1 - self.bias

    @classmethod
    def from_bits(cls, exponent_bits: int, significand_bits: int) -> QuantSpec:
        bias = 2 ** (exponent_bits - 1) - 1
        max_finite = (2.0 - 2.0**-significand_bits) * 2.0**bias
        return cls(exponent_bits, significand_bits, max_finite)


FP16_SPEC = QuantSpec.from_bits(5, 10)
BF16_SPEC = QuantSpec.from_bits(8, 7)

SPECS: dict[PrecisionMode, QuantSpec | None] = {
    PrecisionMode.FP16: FP16_SPEC,
    PrecisionMode.BF16: BF16_SPEC,
    PrecisionMode.FP32: None,  # identity
}

BYTES_PER_VALUE = {PrecisionMode.FP16: 2, PrecisionMode.BF16: 2, PrecisionMode.FP32: 4}


def _round_to_spec(x: np.ndarray, spec: QuantSpec) -> np.ndarray:
    # frexp gives x = m * 2**e with 0.5 <= |m| < 1, so the leading bit sits at e - 1.
    _, e = np.frexp(x)
    # quantum exponent = max(lead, emin) - significand_bits, lead = e - 1
    q = e - (1 + spec.significand_bits)
    np.maximum(q, spec.min_normal_exp - spec.significand_bits, out=q)
    # scaling by powers of two is exact in float64; rint is round-half-even
    y = np.ldexp(np.rint(np.ldexp(x, -q)), q)
    over = np.abs(y) > spec.max_finite
    if over.any():
        y[over] = np.copysign(np.inf, x[over])
    # frexp of inf/nan returns garbage exponents; pass those through untouched
    bad = ~np.isfinite(x)
    if bad.any():
        y[bad] = x[bad]
    return y


def quantize_buffer(xs, mode: PrecisionMode) -> np.ndarray:
    """Round every element of ``xs`` to the nearest value representable in ``mode``."""
    arr = np.asarray(xs, dtype=np.float64)
    spec = SPECS[PrecisionMode(mode)]
    if spec is None:
        return arr
    with np.errstate(over="ignore", invalid="ignore"):
        return _round_to_spec(np.atleast_1d(arr), spec).reshape(arr.shape)


def quantize(x: float, mode: PrecisionMode) -> float:
    return float(quantize_buffer(np.float64(x), mode))
