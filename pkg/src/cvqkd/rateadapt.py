"""Rate adaptation by puncturing and shortening, and the operating-point choice.

Puncturing hides p code bits from the channel (their LLRs are zero at the
decoder), raising the effective rate; shortening pins s bits to shared
seeded values, lowering it:

    R_eff = (k - s) / (n - p - s)

The reconciliation efficiency at a working SNR is beta = R_eff / C(snr)
with C = 0.5*log2(1+snr). Because frame errors rise with beta, the best
operating point maximizes (1 - FER(beta)) * (beta*I - chi - delta) over a
candidate grid of (p, s) pairs, with ties broken toward the lower FER.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ParameterError
from .ldpc import CodeSpec


@dataclass(frozen=True)
class RateAdaptConfig:
    punctured_idx: np.ndarray
    shortened_idx: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.punctured_idx, dtype=np.int64)
        si = np.asarray(self.shortened_idx, dtype=np.int64)
        if len(np.intersect1d(pi, si)) > 0:
            raise ParameterError("punctured and shortened positions overlap")
        object.__setattr__(self, "punctured_idx", pi)
        object.__setattr__(self, "shortened_idx", si)

    @property
    def p(self) -> int:
        return len(self.punctured_idx)

    @property
    def s(self) -> int:
        return len(self.shortened_idx)


def make_rate_adapt(code: CodeSpec, p: int, s: int, seed: int) -> RateAdaptConfig:
    """Draw disjoint puncture/shorten position sets uniformly at random."""
    if p < 0 or s < 0 or p + s >= code.n_bits:
        raise ParameterError(f"need 0 <= p + s < n, got p={p} s={s} n={code.n_bits}")
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xADAF]))
    idx = rng.permutation(code.n_bits)
    return RateAdaptConfig(punctured_idx=np.sort(idx[:p]), shortened_idx=np.sort(idx[p : p + s]))


def effective_rate(code: CodeSpec, adapt: RateAdaptConfig) -> float:
    """(k - s) / (n - p - s)."""
    denom = code.n_bits - adapt.p - adapt.s
    if denom <= 0:
        raise ParameterError("n - p - s must be positive")
    num = code.k_bits - adapt.s
    if num <= 0 or num >= denom:
        raise ParameterError(f"effective rate out of (0,1): {num}/{denom}")
    return num / denom


def efficiency(r_eff: float, snr: float) -> float:
    """Reconciliation efficiency beta = R_eff / (0.5*log2(1 + snr))."""
    if snr <= 0:
        raise ParameterError(f"snr must be > 0, got {snr}")
    return r_eff / (0.5 * math.log2(1.0 + snr))


def puncture_for_beta(code: CodeSpec, snr: float, beta_target: float, s: int = 0) -> int:
    """Smallest p whose effective rate reaches beta_target at the given snr."""
    cap = 0.5 * math.log2(1.0 + snr)
    r_target = beta_target * cap
    # (k - s)/(n - p - s) = r_target
    p = (code.n_bits - s) - (code.k_bits - s) / r_target
    p = int(round(p))
    if p < 0 or p + s >= code.n_bits:
        raise ParameterError(f"beta {beta_target} unreachable at snr {snr}")
    return p


@dataclass(frozen=True)
class FerTable:
    """Measured frame-error-rate curve FER(beta), linearly interpolated."""

    betas: np.ndarray
    fers: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        f = np.asarray(self.fers, dtype=np.float64)
        if len(b) != len(f) or len(b) < 2:
            raise ParameterError("need >= 2 (beta, fer) points")
        if np.any(np.diff(b) <= 0):
            raise ParameterError("betas must be strictly increasing")
        if np.any((f < 0) | (f > 1)):
            raise ParameterError("fer values must be in [0,1]")
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "fers", f)

    def fer(self, beta: float) -> float:
        return float(np.interp(beta, self.betas, self.fers))

    @property
    def beta_min(self) -> float:
        return float(self.betas[0])

    @property
    def beta_max(self) -> float:
        return float(self.betas[-1])


@dataclass(frozen=True)
class OperatingPoint:
    p: int
    s: int
    beta: float
    fer: float
    objective: float


def choose_operating_point(
    snr_samples,
    code: CodeSpec,
    fer_table: FerTable,
    *,
    chi: float = 0.0,
    delta: float = 0.0,
    s_step: int | None = None,
    seed: int = 0,
) -> tuple[RateAdaptConfig, float, float]:
    """Pick the (p, s) whose (beta, FER) maximizes the per-pulse key objective.

    Candidates span the fer_table's beta range at the session's mean SNR:
    puncturing raises beta above the mother point, shortening lowers it.
    The objective is (1 - FER) * (beta*I(snr) - chi - delta); ties go to the
    lower FER.
    """
    snrs = np.asarray(list(snr_samples), dtype=np.float64)
    if snrs.size == 0:
        raise ParameterError("empty snr sample set")
    snr = float(snrs.mean())
    cap = 0.5 * math.log2(1.0 + snr)
    iab = cap  # homodyne mutual information equals the capacity term here

    candidates: list[OperatingPoint] = []
    n, k = code.n_bits, code.k_bits
    step = s_step if s_step is not None else max(1, n // 200)
    # shortening branch (beta <= mother beta), p = 0
    for s in range(0, min(k - 1, n - 1), step):
        r = (k - s) / (n - s)
        beta = r / cap
        if beta < fer_table.beta_min - 1e-9:
            break
        if beta > fer_table.beta_max + 1e-9:
            continue
        f = fer_table.fer(beta)
        candidates.append(OperatingPoint(0, s, beta, f, (1.0 - f) * (beta * iab - chi - delta)))
    # puncturing branch (beta >= mother beta), s = 0
    for p in range(step, n - 1, step):
        r = k / (n - p)
        beta = r / cap
        if beta > fer_table.beta_max + 1e-9:
            break
        if beta < fer_table.beta_min - 1e-9:
            continue
        f = fer_table.fer(beta)
        candidates.append(OperatingPoint(p, 0, beta, f, (1.0 - f) * (beta * iab - chi - delta)))
    if not candidates:
        raise ParameterError("no (p,s) candidate falls inside the FER table's beta range")

    best = max(candidates, key=lambda c: (c.objective, -c.fer))
    return make_rate_adapt(code, best.p, best.s, seed), best.beta, best.fer
