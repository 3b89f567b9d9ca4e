"""Basis sifting, channel parameter estimation, and session orchestration.

Estimation follows the normal-model maximum-likelihood route: the gain
t_hat = sum(a*b)/sum(a^2) estimates sqrt(eta*T) and the residual variance
sigma2_hat estimates the total additive noise. Worst-case bounds take the
Gaussian-approximation confidence intervals at failure probability eps_pe.

The session driver implements the swapped ordering: reconciliation runs on
all blocks first; decoded blocks feed both the key and the estimator while
failed blocks are disclosed and feed the estimator only, so estimation
always uses the full sample. The legacy mode (half the data sacrificed for
estimation) is kept for comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .core import DetectorParams, ParameterError
from .optical import AliceFrame, BobFrame, BASIS_X

MIN_ESTIMATION_SAMPLES = 1000


class EstimationDegenerateError(ValueError):
    """Estimation input carries no usable signal (e.g. sum(a^2) == 0)."""


class FrameMismatchError(ValueError):
    """Alice/Bob frames do not describe the same pulse train."""


@dataclass(frozen=True)
class SiftedBlock:
    """Matched (alice, bob) value pairs from signal slots of one or more frames."""

    alice: np.ndarray
    bob: np.ndarray

    def __post_init__(self):
        if len(self.alice) != len(self.bob):
            raise ParameterError("alice/bob length mismatch in SiftedBlock")

    @property
    def n(self) -> int:
        return len(self.alice)


@dataclass(frozen=True)
class ChannelEstimate:
    """Channel estimate with optional worst-case bounds.

    t_hat estimates sqrt(eta*T); sigma2_hat the total noise variance in SNU;
    a_var is the realized variance of Alice's retained values (used in place
    of the declared modulation variance by the bounds).
    """

    t_hat: float
    sigma2_hat: float
    T_hat: float
    xi_hat: float
    n_used: int
    a_var: float
    xi_raw: float | None = None
    xi_clamped: bool = False
    t_low: float | None = None
    xi_high: float | None = None
    eps_pe: float | None = None

    def to_json(self, **extra) -> str:
        d = {
            "t_hat": self.t_hat,
            "sigma2_hat": self.sigma2_hat,
            "T_hat": self.T_hat,
            "xi_hat": self.xi_hat,
            "n_used": self.n_used,
            "a_var": self.a_var,
            "xi_raw": self.xi_raw,
            "xi_clamped": self.xi_clamped,
            "t_low": self.t_low,
            "xi_high": self.xi_high,
            "eps_pe": self.eps_pe,
        }
        d.update(extra)
        return json.dumps(d, indent=2, sort_keys=True)


def sift(alice: AliceFrame, bob: BobFrame, key_basis: int = BASIS_X) -> SiftedBlock:
    """Retain signal slots measured in the key quadrature; drop references.

    Alice's comparison value is her quadrature projected onto the corrected
    measurement angle carried by the frame (basis_offset_rad), so a phase
    correction applied to the frame is honored here. An empty overlap yields
    an empty block.
    """
    if alice.frame_id != bob.frame_id:
        raise FrameMismatchError(
            f"frame_id mismatch: {alice.frame_id} != {bob.frame_id}"
        )
    if len(alice.x) != len(bob.measurements):
        raise FrameMismatchError("frame length mismatch")
    keep = (bob.slot_roles == 0) & (bob.bases == key_basis)
    th = bob.basis_offset_rad
    x = alice.x[keep]
    p = alice.p[keep]
    if key_basis == BASIS_X:
        a = x * np.cos(th) - p * np.sin(th)
    else:
        a = x * np.sin(th) + p * np.cos(th)
    return SiftedBlock(alice=a, bob=bob.measurements[keep])


def concat_blocks(blocks) -> SiftedBlock:
    return SiftedBlock(
        alice=np.concatenate([b.alice for b in blocks]) if blocks else np.empty(0),
        bob=np.concatenate([b.bob for b in blocks]) if blocks else np.empty(0),
    )


def estimate_channel(
    block: SiftedBlock, detector: DetectorParams, v_a: float | None = None
) -> ChannelEstimate:
    """ML channel estimate from a sifted block.

    The estimator only uses the realized values; the declared modulation
    variance v_a is accepted for interface symmetry but does not enter.
    """
    n = block.n
    if n < MIN_ESTIMATION_SAMPLES:
        raise ParameterError(f"need >= {MIN_ESTIMATION_SAMPLES} samples, got {n}")
    a = np.asarray(block.alice, dtype=np.float64)
    b = np.asarray(block.bob, dtype=np.float64)
    sum_a2 = float(np.dot(a, a))
    if sum_a2 == 0.0:
        raise EstimationDegenerateError("sum(a^2) == 0; no modulation present")
    t_hat = float(np.dot(a, b) / sum_a2)
    resid = b - t_hat * a
    sigma2_hat = float(np.dot(resid, resid) / n)
    eta = detector.efficiency
    v_el = detector.electronic_noise_snu
    T_hat = t_hat * t_hat / eta
    T_hat = min(max(T_hat, 0.0), 1.05)
    if T_hat > 0:
        xi_raw = (sigma2_hat - 1.0 - v_el) / (eta * T_hat)
    else:
        xi_raw = 0.0
    clamped = xi_raw < 0.0
    return ChannelEstimate(
        t_hat=t_hat,
        sigma2_hat=sigma2_hat,
        T_hat=T_hat,
        xi_hat=max(xi_raw, 0.0),
        n_used=n,
        a_var=sum_a2 / n,
        xi_raw=xi_raw,
        xi_clamped=clamped,
    )


def worst_case_bounds(
    estimate: ChannelEstimate,
    eps_pe: float,
    detector: DetectorParams,
    v_a: float | None = None,
) -> tuple[float, float]:
    """Worst-case (t_low, xi_high) at estimation failure probability eps_pe.

    t_low  = t_hat - z*sqrt(sigma2_hat/(n*V_A)),  z = Phi^-1(1 - eps_pe/2)
    xi_high derived from sigma2_high = sigma2_hat*(1 + z*sqrt(2/n)) and t_low.
    V_A defaults to the realized variance of Alice's values.
    """
    if not 0.0 < eps_pe < 1.0:
        raise ParameterError(f"eps_pe must be in (0,1), got {eps_pe}")
    n = estimate.n_used
    if n < MIN_ESTIMATION_SAMPLES:
        raise ParameterError(f"n too small for the normal approximation: {n}")
    va = estimate.a_var if v_a is None else v_a
    z = float(norm.ppf(1.0 - eps_pe / 2.0))
    t_low = estimate.t_hat - z * np.sqrt(estimate.sigma2_hat / (n * va))
    sigma2_high = estimate.sigma2_hat * (1.0 + z * np.sqrt(2.0 / n))
    eta = detector.efficiency
    v_el = detector.electronic_noise_snu
    t_low = max(t_low, 0.0)
    T_low = t_low * t_low / eta
    if T_low > 0:
        xi_high = (sigma2_high - 1.0 - v_el) / (eta * T_low)
    else:
        xi_high = float("inf")
    xi_high = max(xi_high, estimate.xi_hat)
    return float(t_low), float(xi_high)


def with_bounds(
    estimate: ChannelEstimate,
    eps_pe: float,
    detector: DetectorParams,
    v_a: float | None = None,
) -> ChannelEstimate:
    t_low, xi_high = worst_case_bounds(estimate, eps_pe, detector, v_a)
    return replace(estimate, t_low=t_low, xi_high=xi_high, eps_pe=eps_pe)


@dataclass(frozen=True)
class SessionOutcome:
    """Result of running reconciliation + estimation over a list of blocks."""

    estimate: ChannelEstimate
    mode: str
    n_total: int
    n_used: int
    blocks_total: int
    blocks_attempted: int
    blocks_decoded: int
    fer_observed: float
    key_fraction: float
    key_bits: np.ndarray
    leak_bits: int


def swapped_order_session(
    blocks,
    reconcile_fn,
    detector: DetectorParams,
    *,
    eps_pe: float = 1e-10,
    mode: str = "swapped",
) -> SessionOutcome:
    """Run a session over sifted blocks with the given per-block reconciler.

    reconcile_fn(index, block) -> ReconciliationResult. In "swapped" mode
    every block is reconciled and estimation uses all N samples. In
    "legacy" mode the first half of the blocks is sacrificed to estimation
    and only the remainder is reconciled.
    """
    blocks = list(blocks)
    if not blocks:
        raise ParameterError("need at least one block")
    if mode not in ("swapped", "legacy"):
        raise ParameterError(f"mode must be 'swapped' or 'legacy', got {mode!r}")
    n_total = sum(b.n for b in blocks)

    if mode == "swapped":
        attempt = list(enumerate(blocks))
        est_blocks = blocks
    else:
        half = len(blocks) // 2
        attempt = list(enumerate(blocks))[half:]
        est_blocks = blocks[:half]

    decoded = 0
    key_parts = []
    key_samples = 0
    leak = 0
    for idx, blk in attempt:
        res = reconcile_fn(idx, blk)
        leak += res.syndrome_leak_bits
        if res.success:
            decoded += 1
            key_parts.append(res.corrected_bits)
            key_samples += blk.n
        # failed blocks: raw keys disclosed, samples still feed estimation

    est = estimate_channel(concat_blocks(est_blocks), detector)
    est = with_bounds(est, eps_pe, detector)

    attempted = len(attempt)
    fer = 1.0 - decoded / attempted if attempted else 0.0
    key_bits = (
        np.concatenate(key_parts).astype(np.uint8) if key_parts else np.empty(0, np.uint8)
    )
    return SessionOutcome(
        estimate=est,
        mode=mode,
        n_total=n_total,
        n_used=est.n_used,
        blocks_total=len(blocks),
        blocks_attempted=attempted,
        blocks_decoded=decoded,
        fer_observed=fer,
        key_fraction=key_samples / n_total if n_total else 0.0,
        key_bits=key_bits,
        leak_bits=leak,
    )
