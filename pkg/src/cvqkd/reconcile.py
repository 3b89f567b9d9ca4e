"""Reverse reconciliation of Gaussian values over a rate-adapted MET-LDPC code.

Protocol per frame (Bob's data is the reference):

  1. Bob draws uniform bits r over the full code length: channel positions
     carry the key payload, punctured positions private random fill, and
     shortened positions seeded values shared with Alice.
  2. Bob maps each d-block of his measured values y and the corresponding
     sign word u = (1-2r)/sqrt(d) to a unit rotation m (see cvqkd.multidim)
     and discloses (m, |y|) together with the syndrome H r.
  3. Alice rotates her own blocks, z = |x| * (m * x_hat), which given y is
     exactly Gaussian around (t V_A / Var(y)) * |y| * u, computes LLRs
     2 (|y|/sqrt(d)) z t / sigma^2 from her channel knowledge, and decodes
     toward the disclosed syndrome.

Success means the decoder reproduced r; the disclosed classical material is
the syndrome (n - k bits) plus the s shortened values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ParameterError
from .ldpc import CodeSpec, bp_decode
from .multidim import multidim_map, multidim_unmap
from .rateadapt import RateAdaptConfig

SHORTENED_LLR = 250.0


@dataclass(frozen=True)
class ReconciliationResult:
    success: bool
    corrected_bits: np.ndarray | None
    iterations: int
    syndrome_leak_bits: int


def reconcile_frame(
    alice_values,
    bob_values,
    code: CodeSpec,
    adapt: RateAdaptConfig,
    seed: int,
    *,
    gain: float,
    noise_var: float,
    d: int = 8,
    max_iter: int = 200,
    backend: str = "auto",
) -> ReconciliationResult:
    """One reverse-reconciliation frame; corrected_bits are the channel-position
    bits of Bob's word (present only on success).

    gain is the estimated amplitude transmission sqrt(eta*T) of the sifted
    data and noise_var its residual noise variance; both typically come from
    the previous session's estimate since estimation runs after decoding.
    """
    x = np.asarray(alice_values, dtype=np.float64)
    y = np.asarray(bob_values, dtype=np.float64)
    if x.shape != y.shape:
        raise ParameterError("alice/bob value length mismatch")
    n = code.n_bits
    n_channel = n - adapt.p - adapt.s
    if len(x) != n_channel:
        raise ParameterError(f"need {n_channel} values for this code/adapt, got {len(x)}")
    if d not in (1, 2, 4, 8) or n_channel % d != 0:
        raise ParameterError(f"channel positions ({n_channel}) must divide into d={d} blocks")
    if gain <= 0 or noise_var <= 0:
        raise ParameterError("gain and noise_var must be positive")

    mask = np.ones(n, dtype=bool)
    mask[adapt.punctured_idx] = False
    mask[adapt.shortened_idx] = False
    channel_idx = np.nonzero(mask)[0]

    # Bob's word
    rng_bob = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xB0B]))
    rng_shared = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x5A5D]))
    r = np.zeros(n, dtype=np.uint8)
    r[channel_idx] = rng_bob.integers(0, 2, n_channel)
    if adapt.p:
        r[adapt.punctured_idx] = rng_bob.integers(0, 2, adapt.p)
    if adapt.s:
        r[adapt.shortened_idx] = rng_shared.integers(0, 2, adapt.s)
    synd = code.syndrome(r)

    # rotation messages from Bob's side
    yb = y.reshape(-1, d)
    u = (1.0 - 2.0 * r[channel_idx].astype(np.float64)).reshape(-1, d) / math.sqrt(d)
    m = multidim_map(yb, u, backend=backend)
    y_norms = np.linalg.norm(yb, axis=1)

    # Alice's virtual-channel observations and LLRs
    xb = x.reshape(-1, d)
    x_norms = np.linalg.norm(xb, axis=1)
    v = multidim_unmap(xb, m, backend=backend)
    z = v * x_norms[:, None]
    scale = 2.0 * gain / noise_var / math.sqrt(d)
    llr_channel = (scale * y_norms[:, None] * z).reshape(-1)

    llr = np.zeros(n, dtype=np.float64)
    llr[channel_idx] = llr_channel
    if adapt.s:
        llr[adapt.shortened_idx] = SHORTENED_LLR * (
            1.0 - 2.0 * r[adapt.shortened_idx].astype(np.float64)
        )

    res = bp_decode(llr, code, adapt, max_iter=max_iter, syndrome=synd, backend=backend)
    leak = (code.n_bits - code.k_bits) + adapt.s
    if not res.success:
        return ReconciliationResult(False, None, res.iterations, leak)
    return ReconciliationResult(True, res.bits[channel_idx].copy(), res.iterations, leak)


def bob_reference_bits(code: CodeSpec, adapt: RateAdaptConfig, seed: int) -> np.ndarray:
    """Recompute Bob's channel-position bits for a given frame seed (test oracle)."""
    n = code.n_bits
    mask = np.ones(n, dtype=bool)
    mask[adapt.punctured_idx] = False
    mask[adapt.shortened_idx] = False
    n_channel = int(mask.sum())
    rng_bob = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xB0B]))
    return rng_bob.integers(0, 2, n_channel).astype(np.uint8)
