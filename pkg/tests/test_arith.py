from fractions import Fraction

import numpy as np

from onnxflow.quantizer import FixedPointFormat
from onnxflow.stream_sim import arith


def test_round_shift_ties_to_even():
    acc = np.array([1, 2, 3, 5, 6, 7, -1, -2, -3, -5, -6], dtype=np.int64)
    got = arith.round_shift(acc, 2).tolist()
    assert got == [round(Fraction(int(a), 4)) for a in acc]


def test_split_weights_round_trip():
    w = np.array([-(2 ** 31), -1, 0, 1, 65535, 65536, 2 ** 31 - 1], dtype=np.int64)
    hi, lo = arith.split_weights(w)
    assert np.all((lo >= 0) & (lo < 2 ** 16))
    assert arith.join_split(hi, lo).tolist() == w.tolist()


def test_needs_wide():
    d16, w8, d32 = FixedPointFormat(16, 8), FixedPointFormat(8, 6), FixedPointFormat(32, 20)
    assert not arith.needs_wide(d16, w8, 800)
    assert arith.needs_wide(d32, d32, 800)


def test_requantize_matches_fraction_oracle():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        out = FixedPointFormat(int(rng.choice([4, 8, 16])), 0)
        out = FixedPointFormat(out.total_bits, int(rng.integers(0, out.total_bits)))
        acc_frac, bias_frac = int(rng.integers(0, 20)), int(rng.integers(0, 20))
        acc = int(rng.integers(-(2 ** 40), 2 ** 40))
        bias = int(rng.integers(-(2 ** 15), 2 ** 15))
        exact = Fraction(acc, 2 ** acc_frac) + Fraction(bias, 2 ** bias_frac)
        want = min(max(round(exact * 2 ** out.frac_bits), out.min_code), out.max_code)
        got = arith.requantize(np.array([acc]), acc_frac, np.array([bias]), bias_frac, out)
        assert int(got[0]) == want


def test_requantize_object_path():
    out = FixedPointFormat(32, 10)
    acc = np.array([2 ** 90 + 3, -(2 ** 70)], dtype=object)
    got = arith.requantize(acc, 60, None, None, out)
    want = [min(max(round(Fraction(int(a), 2 ** 50)), out.min_code), out.max_code) for a in acc]
    assert got.tolist() == want
