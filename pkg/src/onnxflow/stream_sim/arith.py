"""Exact fixed-point integer arithmetic used by the compute actors.

Accumulation never saturates. Sums that might exceed 62 bits are carried as
Python integers (numpy object arrays); everything else stays in int64.
"""

from __future__ import annotations

import math

import numpy as np

from ..quantizer import FixedPointFormat

INT64_SAFE_BITS = 62
_SPLIT = 16


def accumulator_bits(act_bits: int, weight_bits: int, fan_in: int) -> int:
    """Width that holds any sum of ``fan_in`` products without overflow."""
    return act_bits + weight_bits + math.ceil(math.log2(max(fan_in, 1))) + 1


def needs_wide(act: FixedPointFormat, weight: FixedPointFormat, fan_in: int,
               bias: FixedPointFormat | None = None) -> bool:
    """True when accumulation plus bias alignment could leave int64."""
    acc_frac = act.frac_bits + weight.frac_bits
    acc_bits = accumulator_bits(act.total_bits, weight.total_bits, fan_in)
    if bias is None:
        return acc_bits > INT64_SAFE_BITS
    frac = max(acc_frac, bias.frac_bits)
    need = max(acc_bits + frac - acc_frac, bias.total_bits + frac - bias.frac_bits) + 1
    return need > INT64_SAFE_BITS


def split_weights(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``w == hi * 2**16 + lo`` with ``lo`` in [0, 2**16); keeps int64 partial sums exact."""
    w = np.asarray(w, dtype=np.int64)
    return w >> _SPLIT, w & ((1 << _SPLIT) - 1)


def join_split(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    return hi.astype(object) * (1 << _SPLIT) + lo.astype(object)


def round_shift(acc: np.ndarray, r: int) -> np.ndarray:
    """``acc / 2**r`` rounded half to even, for r > 0."""
    q = acc >> r
    rem = acc - (q << r)
    half = 1 << (r - 1)
    up = (rem > half) | ((rem == half) & ((q & 1) == 1))
    return np.where(up, q + 1, q)


def requantize(acc, acc_frac: int, bias, bias_frac: int | None,
               out: FixedPointFormat) -> np.ndarray:
    """Add the aligned bias to ``acc`` and convert to ``out`` codes.

    ``acc`` holds values at ``acc_frac`` fractional bits (int64 or object).
    """
    frac = acc_frac if bias is None else max(acc_frac, bias_frac)
    total = acc if frac == acc_frac else acc * (1 << (frac - acc_frac))
    if bias is not None:
        b = bias if frac == bias_frac else bias * (1 << (frac - bias_frac))
        total = total + b
    r = frac - out.frac_bits
    if r > 0:
        q = round_shift(total, r)
    else:
        lo, hi = out.min_code - 1, out.max_code + 1
        q = np.where(total < lo, lo, np.where(total > hi, hi, total))
        if r < 0:
            q = q * (1 << -r)
    q = np.where(q < out.min_code, out.min_code, np.where(q > out.max_code, out.max_code, q))
    return np.asarray(q).astype(np.int64)
