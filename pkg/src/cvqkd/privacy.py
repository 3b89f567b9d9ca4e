"""Toeplitz-matrix universal hashing and final key length accounting.

The hash is T @ x over GF(2) with T the out_len x in_len Toeplitz matrix
T[i, j] = seed[in_len - 1 + i - j] built from in_len + out_len - 1 seeded
bits. The product is evaluated through a zero-padded FFT convolution, so
the cost is quasi-linear in the input length; bit counts stay below 2^53
so the float transform is exact after rounding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len

from .core import ParameterError


@dataclass(frozen=True)
class ToeplitzSpec:
    in_len: int
    out_len: int
    diagonal_seed: np.ndarray

    def __post_init__(self):
        if not 0 < self.out_len <= self.in_len:
            raise ParameterError(f"need 0 < out_len <= in_len, got {self.out_len}/{self.in_len}")
        seed = np.asarray(self.diagonal_seed, dtype=np.uint8)
        if len(seed) != self.in_len + self.out_len - 1:
            raise ParameterError(
                f"seed length must be in+out-1 = {self.in_len + self.out_len - 1}, got {len(seed)}"
            )
        if np.any(seed > 1):
            raise ParameterError("seed must be a bit array")
        seed.setflags(write=False)
        object.__setattr__(self, "diagonal_seed", seed)

    @staticmethod
    def random(in_len: int, out_len: int, seed: int) -> "ToeplitzSpec":
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x70E7]))
        bits = rng.integers(0, 2, in_len + out_len - 1, dtype=np.uint8)
        return ToeplitzSpec(in_len=in_len, out_len=out_len, diagonal_seed=bits)


def dense_matrix(spec: ToeplitzSpec) -> np.ndarray:
    """Explicit T with T[i, j] = seed[in_len - 1 + i - j] (oracle path)."""
    i = np.arange(spec.out_len)[:, None]
    j = np.arange(spec.in_len)[None, :]
    return spec.diagonal_seed[spec.in_len - 1 + i - j]


def toeplitz_hash_dense(bits, spec: ToeplitzSpec) -> np.ndarray:
    x = _check_bits(bits, spec)
    return (dense_matrix(spec) @ x) & 1


def _check_bits(bits, spec) -> np.ndarray:
    x = np.asarray(bits, dtype=np.uint8)
    if len(x) != spec.in_len:
        raise ParameterError(f"input length {len(x)} != spec.in_len {spec.in_len}")
    if np.any(x > 1):
        raise ParameterError("input must be a bit array")
    return x


def toeplitz_hash(bits, spec: ToeplitzSpec) -> np.ndarray:
    """T @ x mod 2 via padded convolution: output i is conv(seed, x)[in-1+i]."""
    x = _check_bits(bits, spec)
    full = spec.in_len + len(spec.diagonal_seed) - 1
    nfft = next_fast_len(full)
    fs = np.fft.rfft(spec.diagonal_seed.astype(np.float64), nfft)
    fx = np.fft.rfft(x.astype(np.float64), nfft)
    conv = np.fft.irfft(fs * fx, nfft)
    window = conv[spec.in_len - 1 : spec.in_len - 1 + spec.out_len]
    return (np.rint(window).astype(np.int64) & 1).astype(np.uint8)


def final_length(n_key_bits: int, beta: float, iab: float, chi: float, delta: float) -> tuple[int, bool]:
    """floor(n*(beta*iab - chi - delta)) clamped at 0; flags insecure rates."""
    if n_key_bits < 0:
        raise ParameterError("n_key_bits must be >= 0")
    net = beta * iab - chi - delta
    if net <= 0.0:
        return 0, True
    return int(math.floor(n_key_bits * net)), False


def compress_key(bits, final_bits: int, seed: int) -> tuple[np.ndarray, ToeplitzSpec]:
    """Hash a corrected key down to final_bits with a seeded Toeplitz matrix."""
    x = np.asarray(bits, dtype=np.uint8)
    if final_bits <= 0:
        return np.empty(0, dtype=np.uint8), ToeplitzSpec.random(max(len(x), 1), 1, seed)
    spec = ToeplitzSpec.random(len(x), final_bits, seed)
    return toeplitz_hash(x, spec), spec


def write_key(path, key_bits: np.ndarray, sidecar: dict) -> None:
    """Binary key file (packed bits) plus a JSON sidecar next to it."""
    packed = np.packbits(np.asarray(key_bits, dtype=np.uint8))
    with open(path, "wb") as fh:
        fh.write(packed.tobytes())
    side = dict(sidecar)
    side["key_bits"] = int(len(key_bits))
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
