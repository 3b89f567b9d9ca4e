"""Statistical simulation of the quantum layer.

Alice prepares Gaussian-modulated quadrature pairs with periodic bright
phase-reference slots, the channel applies loss, a slow phase/polarization/
timing drift and input-referred excess noise, and Bob homodynes one random
quadrature per pulse with a trusted (inefficient, noisy) detector.

Everything is a pure function of (inputs, seed); per-frame generators are
derived from (master seed, frame_id, stage tag) so batches of frames can be
processed in parallel with stable streams.

Measurement model (SNU, shot noise variance 1): for selected quadrature
amplitude q the outcome is sqrt(eta)*q + N(0, 1 + v_el). The unit term
carries the shot noise of the detected mode including the vacuum admixed by
detector loss, so Var(outcome) = eta*T*V_A + 1 + v_el + eta*T*xi on signal
slots, consistent with the link SNR eta*T*V_A/(1 + v_el + eta*T*xi).
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .core import ChannelParams, DetectorParams, ParameterError, SlotLayout, SystemParams, loss_db, transmittance, wrap_angle

BASIS_X = 0
BASIS_P = 1
ROLE_SIGNAL = 0
ROLE_REFERENCE = 1


def stream(seed: int, *tags) -> np.random.Generator:
    """Deterministic generator for (seed, *tags); tags are small ints or strings."""
    ints = [seed & 0xFFFFFFFFFFFFFFFF]
    for t in tags:
        if isinstance(t, str):
            ints.extend(ord(c) for c in t)
        else:
            ints.append(int(t) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(ints))


@dataclass(frozen=True)
class AliceFrame:
    x: np.ndarray
    p: np.ndarray
    slot_roles: np.ndarray
    frame_id: int

    def __post_init__(self):
        if not (len(self.x) == len(self.p) == len(self.slot_roles)):
            raise ParameterError("AliceFrame field lengths differ")
        if len(self.x) == 0:
            raise ParameterError("zero-length frame")


@dataclass(frozen=True)
class BobFrame:
    measurements: np.ndarray
    bases: np.ndarray
    slot_roles: np.ndarray
    frame_id: int
    # accumulated phase correction applied to this frame's data; consumers
    # (sifting, estimation) project Alice's quadratures onto the corrected
    # measurement angle, which re-expresses the outcomes in the unrotated
    # frame without touching the scalar homodyne records themselves
    basis_offset_rad: float = 0.0

    def __post_init__(self):
        if not (len(self.measurements) == len(self.bases) == len(self.slot_roles)):
            raise ParameterError("BobFrame field lengths differ")


@dataclass(frozen=True)
class DriftState:
    phase_rad: float = 0.0
    pol_angle_rad: float = 0.0
    timing_offset_s: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.phase_rad) and math.isfinite(self.pol_angle_rad) and math.isfinite(self.timing_offset_s)):
            raise ParameterError("DriftState fields must be finite")
        if not -math.pi < self.phase_rad <= math.pi:
            object.__setattr__(self, "phase_rad", wrap_angle(self.phase_rad))


@dataclass(frozen=True)
class DriftModel:
    """Random-walk drift rates; defaults are stand-ins for unreported field rates."""

    phase_diffusion_rad2_per_s: float = 0.01
    pol_diffusion_rad2_per_s: float = 1e-4
    timing_diffusion_s2_per_s: float = 1e-20
    pol_bound_rad: float = 0.3


def slot_roles(n_pulses: int, layout: SlotLayout) -> np.ndarray:
    roles = np.zeros(n_pulses, dtype=np.uint8)
    roles[:: layout.ref_period] = ROLE_REFERENCE
    return roles


def generate_frame(params: SystemParams, n_pulses: int, layout: SlotLayout, seed: int, frame_id: int = 0) -> AliceFrame:
    """Gaussian-modulated signal slots plus fixed-amplitude reference slots."""
    if n_pulses <= 0:
        raise ParameterError(f"n_pulses must be > 0, got {n_pulses}")
    rng = stream(seed, frame_id, "alice")
    sd = math.sqrt(params.modulation_variance_snu)
    x = rng.normal(0.0, sd, n_pulses)
    p = rng.normal(0.0, sd, n_pulses)
    roles = slot_roles(n_pulses, layout)
    ref = roles == ROLE_REFERENCE
    x[ref] = layout.ref_amplitude
    p[ref] = 0.0
    return AliceFrame(x=x, p=p, slot_roles=roles, frame_id=frame_id)


def propagate(frame: AliceFrame, channel: ChannelParams, drift: DriftState, seed: int) -> AliceFrame:
    """Lossy rotated channel: (x,p) -> sqrt(T)*R(phase)*(x,p) + N(0, T*xi) per quadrature.

    Polarization misalignment attenuates the demultiplexed amplitude by
    cos(pol_angle), i.e. the signal power by cos^2.
    """
    t = transmittance(loss_db(channel))
    amp = math.sqrt(t) * math.cos(drift.pol_angle_rad)
    c, s = math.cos(drift.phase_rad), math.sin(drift.phase_rad)
    x = amp * (c * frame.x - s * frame.p)
    p = amp * (s * frame.x + c * frame.p)
    if channel.excess_noise_snu > 0 and t > 0:
        rng = stream(seed, frame.frame_id, "channel")
        nsd = math.sqrt(t * channel.excess_noise_snu)
        x = x + rng.normal(0.0, nsd, len(x))
        p = p + rng.normal(0.0, nsd, len(p))
    return AliceFrame(x=x, p=p, slot_roles=frame.slot_roles, frame_id=frame.frame_id)


def random_bases(n_pulses: int, seed: int, frame_id: int = 0, layout: SlotLayout | None = None) -> np.ndarray:
    """Per-pulse quadrature choices: i.i.d. uniform on signal slots.

    When a layout is given, reference slots get a deterministic X/P
    alternation so the phase is identifiable every period.
    """
    rng = stream(seed, frame_id, "bases")
    bases = rng.integers(0, 2, n_pulses).astype(np.uint8)
    if layout is not None:
        idx = np.arange(0, n_pulses, layout.ref_period)
        bases[idx] = (np.arange(len(idx)) % 2).astype(np.uint8)
    return bases


def homodyne_measure(
    frame: AliceFrame,
    bases: np.ndarray,
    detector: DetectorParams,
    seed: int,
    shot_noise: bool = True,
) -> BobFrame:
    """Trusted-receiver homodyne: sqrt(eta)*q_basis + N(0, 1 + v_el).

    shot_noise=False drops the unit vacuum term (diagnostic only; used by the
    zero-noise end-to-end checks where outcomes must be deterministic).
    """
    if len(bases) != len(frame.x):
        raise ParameterError("bases length does not match frame length")
    rng = stream(seed, frame.frame_id, "detector")
    q = np.where(np.asarray(bases) == BASIS_X, frame.x, frame.p)
    var = (1.0 if shot_noise else 0.0) + detector.electronic_noise_snu
    out = math.sqrt(detector.efficiency) * q
    if var > 0:
        out = out + rng.normal(0.0, math.sqrt(var), len(q))
    return BobFrame(
        measurements=out,
        bases=np.asarray(bases, dtype=np.uint8),
        slot_roles=frame.slot_roles,
        frame_id=frame.frame_id,
    )


def step_drift(drift: DriftState, dt_s: float, model: DriftModel, seed: int, step_id: int = 0) -> DriftState:
    """Advance the drift state by dt_s seconds of random walk."""
    if dt_s <= 0:
        raise ParameterError(f"dt_s must be > 0, got {dt_s}")
    rng = stream(seed, step_id, "drift")
    phase = drift.phase_rad
    if model.phase_diffusion_rad2_per_s > 0:
        phase += rng.normal(0.0, math.sqrt(model.phase_diffusion_rad2_per_s * dt_s))
    pol = drift.pol_angle_rad
    if model.pol_diffusion_rad2_per_s > 0:
        pol += rng.normal(0.0, math.sqrt(model.pol_diffusion_rad2_per_s * dt_s))
        b = model.pol_bound_rad
        # reflect into [-b, b]
        pol = math.remainder(pol, 4.0 * b)
        if pol > b:
            pol = 2.0 * b - pol
        elif pol < -b:
            pol = -2.0 * b - pol
    timing = drift.timing_offset_s
    if model.timing_diffusion_s2_per_s > 0:
        timing += rng.normal(0.0, math.sqrt(model.timing_diffusion_s2_per_s * dt_s))
    return DriftState(phase_rad=wrap_angle(phase), pol_angle_rad=pol, timing_offset_s=timing)


# --- frame serialization ---------------------------------------------------
#
# Binary layout (little-endian). File header: magic b"CVQF", u16 version,
# u16 kind (0 = Alice, 1 = Bob), u32 frame count. Per frame: i64 frame_id,
# u32 pulse count, f64 basis_offset (Bob only), payload arrays of f64
# (x then p for Alice; measurements for Bob) followed by u8 roles and,
# for Bob, u8 bases.

_MAGIC = b"CVQF"
_VERSION = 1
KIND_ALICE = 0
KIND_BOB = 1


def save_frames(path, frames) -> None:
    frames = list(frames)
    if not frames:
        raise ParameterError("no frames to save")
    kind = KIND_ALICE if isinstance(frames[0], AliceFrame) else KIND_BOB
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HHI", _VERSION, kind, len(frames)))
        for fr in frames:
            n = len(fr.slot_roles)
            if kind == KIND_ALICE:
                fh.write(struct.pack("<qI", fr.frame_id, n))
                fh.write(fr.x.astype("<f8").tobytes())
                fh.write(fr.p.astype("<f8").tobytes())
                fh.write(fr.slot_roles.astype(np.uint8).tobytes())
            else:
                fh.write(struct.pack("<qId", fr.frame_id, n, fr.basis_offset_rad))
                fh.write(fr.measurements.astype("<f8").tobytes())
                fh.write(fr.slot_roles.astype(np.uint8).tobytes())
                fh.write(fr.bases.astype(np.uint8).tobytes())


def load_frames(path) -> list:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ParameterError(f"bad magic {magic!r}")
        version, kind, count = struct.unpack("<HHI", fh.read(8))
        if version != _VERSION:
            raise ParameterError(f"unsupported version {version}")
        out = []
        for _ in range(count):
            if kind == KIND_ALICE:
                frame_id, n = struct.unpack("<qI", fh.read(12))
                x = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
                p = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
                roles = np.frombuffer(fh.read(n), dtype=np.uint8).copy()
                out.append(AliceFrame(x=x, p=p, slot_roles=roles, frame_id=frame_id))
            else:
                frame_id, n, off = struct.unpack("<qId", fh.read(20))
                meas = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
                roles = np.frombuffer(fh.read(n), dtype=np.uint8).copy()
                bases = np.frombuffer(fh.read(n), dtype=np.uint8).copy()
                out.append(
                    BobFrame(
                        measurements=meas,
                        bases=bases,
                        slot_roles=roles,
                        frame_id=frame_id,
                        basis_offset_rad=off,
                    )
                )
    return out


def frames_to_csv(path, frames) -> None:
    """Inspection CSV: one row per pulse."""
    frames = list(frames)
    if not frames:
        raise ParameterError("no frames to write")
    alice = isinstance(frames[0], AliceFrame)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if alice:
            w.writerow(["frame_id", "pulse", "x", "p", "role"])
            for fr in frames:
                for i in range(len(fr.x)):
                    w.writerow([fr.frame_id, i, repr(fr.x[i]), repr(fr.p[i]), fr.slot_roles[i]])
        else:
            w.writerow(["frame_id", "pulse", "measurement", "basis", "role", "basis_offset_rad"])
            for fr in frames:
                for i in range(len(fr.measurements)):
                    w.writerow(
                        [fr.frame_id, i, repr(fr.measurements[i]), fr.bases[i], fr.slot_roles[i], repr(fr.basis_offset_rad)]
                    )


def with_basis_offset(frame: BobFrame, offset: float) -> BobFrame:
    return replace(frame, basis_offset_rad=frame.basis_offset_rad + offset)
