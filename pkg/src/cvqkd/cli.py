"""Command-line pipeline: simulate | keyrate | sweep | recon-bench | pa.

Every command honors --seed and is bit-for-bit reproducible; CSV outputs
carry a header row and a provenance comment (config hash, version). The
default output directory comes from $CVQKD_OUT (falling back to '.').
Machine-readable errors go to stderr as JSON and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import (
    CalibrationReport,
    apply_phase_correction,
    estimate_phase_from_frame,
    polarization_feedback,
    sync_waveform,
    timing_recovery,
    write_report_csv,
)
from .core import (
    ConfigError,
    DetectorParams,
    PRESETS,
    SlotLayout,
    config_hash,
    load_config,
    params_from_config,
    loss_db,
    preset,
    snr as link_snr,
    transmittance,
    wrap_angle,
)
from .keyrate import (
    mutual_information,
    secret_key_rate,
    secret_key_rate_from_estimate,
    sweep,
    sweep_to_csv,
)
from .ldpc import build_met_code, met_rate002_ensemble, regular_ensemble
from .optical import (
    DriftModel,
    DriftState,
    generate_frame,
    homodyne_measure,
    propagate,
    random_bases,
    save_frames,
    step_drift,
)
from .postproc import concat_blocks, sift, swapped_order_session, SiftedBlock
from .privacy import compress_key, final_length, write_key
from .rateadapt import effective_rate, efficiency, make_rate_adapt, puncture_for_beta
from .reconcile import reconcile_frame


def _out_dir(args) -> Path:
    base = args.out or os.environ.get("CVQKD_OUT", ".")
    p = Path(base)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_params(args):
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; have {sorted(PRESETS)}")
        cfg = dict(PRESETS[args.preset])
    else:
        raise ConfigError("need --config or --preset")
    params, layout, extras = params_from_config(cfg)
    return params, layout, extras, cfg


def _provenance(cfg, args) -> str:
    return f"config_hash={config_hash(cfg)} version={__version__} seed={args.seed}"


def cmd_keyrate(args) -> int:
    params, layout, extras, cfg = _load_params(args)
    rep = secret_key_rate(
        params,
        beta=args.beta,
        fer=args.fer,
        n_samples=args.n_samples,
        eps_pe=args.eps_pe,
        eps_bar=args.eps_bar,
    )
    out = _out_dir(args) / "keyrate.json"
    out.write_text(rep.to_json(loss_db=loss_db(params.channel), provenance=_provenance(cfg, args)))
    print(out)
    return 0


def cmd_sweep(args) -> int:
    params, layout, extras, cfg = _load_params(args)
    losses = np.linspace(args.loss_min, args.loss_max, args.steps)
    points = sweep(
        losses,
        params,
        beta=args.beta,
        fer=args.fer,
        n_samples=args.n_samples,
        eps_pe=args.eps_pe,
        eps_bar=args.eps_bar,
        va_mode=args.va_mode,
        jobs=args.jobs,
    )
    out = _out_dir(args) / "sweep.csv"
    sweep_to_csv(out, points, provenance=_provenance(cfg, args))
    print(out)
    return 0


def _build_code(args, seed: int):
    if args.code == "met002":
        ens = met_rate002_ensemble()
    else:
        dv, dc = (int(t) for t in args.code.split(","))
        ens = regular_ensemble(dv, dc)
    return build_met_code(ens, args.code_n, seed)


def cmd_recon_bench(args) -> int:
    params = None
    cfg = {"snr": args.snr, "code": args.code, "code_n": args.code_n, "frames": args.frames}
    code = _build_code(args, args.seed)
    t = math.sqrt(args.snr)  # unit-variance modulation, unit noise
    rows = []
    for beta in args.betas:
        r_target = beta * 0.5 * math.log2(1.0 + args.snr)
        mother = code.k_bits / code.n_bits
        if r_target >= mother:
            p = puncture_for_beta(code, args.snr, beta)
            s = 0
        else:
            # (k - s)/(n - s) = r_target
            s = int(round((code.k_bits - r_target * code.n_bits) / (1.0 - r_target)))
            s = max(0, min(s, code.k_bits - 1))
            p = 0
        # keep channel positions divisible by the block dimension
        while (code.n_bits - p - s) % args.d:
            if p > 0:
                p += 1
            else:
                s += 1
        adapt = make_rate_adapt(code, p, s, args.seed)
        fails = 0
        rng = np.random.default_rng(np.random.SeedSequence([args.seed & 0xFFFFFFFF, 0xBE7C]))
        n_channel = code.n_bits - p - s
        for fr in range(args.frames):
            a = rng.normal(0.0, 1.0, n_channel)
            if args.noiseless:
                b = a.copy()
            else:
                b = t * a + rng.normal(0.0, 1.0, n_channel)
            res = reconcile_frame(
                a, b, code, adapt, args.seed + 7919 * fr,
                gain=1.0 if args.noiseless else t, noise_var=1e-4 if args.noiseless else 1.0,
                d=args.d, max_iter=args.max_iter,
            )
            if not res.success:
                fails += 1
        fer = fails / args.frames
        beta_real = efficiency(effective_rate(code, adapt), args.snr)
        rows.append((args.snr, beta_real, fer, args.frames))
        print(f"snr={args.snr:.6g} beta={beta_real:.4f} fer={fer:.4f} frames={args.frames}")
    out = _out_dir(args) / "recon_bench.csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(f"# {_provenance(cfg, args)}\n")
        fh.write("snr,beta,fer,frames\n")
        for row in rows:
            fh.write(f"{row[0]:.6g},{row[1]:.6g},{row[2]:.6g},{row[3]}\n")
    print(out)
    return 0


def cmd_pa(args) -> int:
    data = Path(args.key_in).read_bytes()
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[: args.in_bits]
    if len(bits) < args.in_bits:
        raise ConfigError(f"input file holds {len(bits)} bits, need {args.in_bits}")
    key, spec = compress_key(bits, args.out_len, args.seed)
    out = _out_dir(args) / "final_key.bin"
    write_key(
        out,
        key,
        {
            "in_bits": int(args.in_bits),
            "out_bits": int(args.out_len),
            "seed": args.seed,
            "version": __version__,
        },
    )
    print(out)
    return 0


def cmd_simulate(args) -> int:
    params, layout, extras, cfg = _load_params(args)
    out = _out_dir(args)
    seed = args.seed
    shot_noise = bool(int(extras.get("shot_noise", 1)))
    model = DriftModel(
        phase_diffusion_rad2_per_s=float(extras.get("phase_diffusion_rad2_per_s", 0.01)),
        pol_diffusion_rad2_per_s=float(extras.get("pol_diffusion_rad2_per_s", 1e-4)),
        timing_diffusion_s2_per_s=float(extras.get("timing_diffusion_s2_per_s", 1e-20)),
    )
    drift = DriftState()
    reports: list[CalibrationReport] = []
    blocks = []
    alice_frames = []
    bob_frames = []
    for fid in range(args.frames):
        drift = step_drift(drift, args.dt, model, seed, step_id=fid)
        # polarization loop closes once per frame
        action = polarization_feedback(drift, gain=0.5)
        drift = replace(drift, pol_angle_rad=drift.pol_angle_rad + action)
        alice = generate_frame(params, args.pulses, layout, seed, frame_id=fid)
        prop = propagate(alice, params.channel, drift, seed)
        bases = random_bases(args.pulses, seed, frame_id=fid, layout=layout)
        bob = homodyne_measure(prop, bases, params.detector, seed, shot_noise=shot_noise)
        theta = estimate_phase_from_frame(alice, bob)
        bob = apply_phase_correction(bob, theta)
        wave = sync_waveform(drift.timing_offset_s, n_periods=32, noise_rms=0.03,
                             seed=seed + fid)
        t_est = timing_recovery(wave)
        reports.append(
            CalibrationReport(
                frame_id=fid,
                residual_phase_rad=wrap_angle(drift.phase_rad - theta),
                pol_power_fluctuation=float(1.0 - math.cos(drift.pol_angle_rad) ** 2),
                timing_error_s=float(t_est - drift.timing_offset_s),
            )
        )
        blocks.append(sift(alice, bob))
        if args.save_frames:
            alice_frames.append(alice)
            bob_frames.append(bob)

    write_report_csv(out / "calibration.csv", reports, provenance=_provenance(cfg, args))
    if args.save_frames:
        save_frames(out / "alice_frames.bin", alice_frames)
        save_frames(out / "bob_frames.bin", bob_frames)

    # chunk the sifted stream into code-sized blocks
    code = _build_code(args, seed)
    adapt = make_rate_adapt(code, 0, args.shorten, seed)
    n_channel = code.n_bits - adapt.p - adapt.s
    pool = concat_blocks(blocks)
    n_blocks = pool.n // n_channel
    if n_blocks == 0:
        raise ConfigError(
            f"not enough sifted samples ({pool.n}) for one code block ({n_channel}); "
            "raise --frames or --pulses"
        )
    chunks = [
        SiftedBlock(
            alice=pool.alice[i * n_channel : (i + 1) * n_channel],
            bob=pool.bob[i * n_channel : (i + 1) * n_channel],
        )
        for i in range(n_blocks)
    ]
    t_design = transmittance(loss_db(params.channel))
    gain = math.sqrt(params.detector.efficiency * t_design)
    noise_var = (
        (1.0 if shot_noise else 0.0)
        + params.detector.electronic_noise_snu
        + params.detector.efficiency * t_design * params.channel.excess_noise_snu
    )
    noise_var = max(noise_var, 1e-6)

    def recon(idx, blk):
        return reconcile_frame(
            blk.alice, blk.bob, code, adapt, seed + 104729 * idx,
            gain=gain, noise_var=noise_var, d=args.d, max_iter=args.max_iter,
        )

    session = swapped_order_session(
        chunks, recon, params.detector, eps_pe=args.eps_pe, mode=args.order
    )
    (out / "estimate.json").write_text(
        session.estimate.to_json(provenance=_provenance(cfg, args))
    )

    beta = efficiency(effective_rate(code, adapt), link_snr(params))
    rep = secret_key_rate_from_estimate(
        session.estimate, params, beta=beta, fer=session.fer_observed, eps_bar=args.eps_bar
    )
    report_json = rep.to_json(
        loss_db=loss_db(params.channel),
        provenance=_provenance(cfg, args),
        session={
            "mode": session.mode,
            "blocks_total": session.blocks_total,
            "blocks_decoded": session.blocks_decoded,
            "fer_observed": session.fer_observed,
            "n_total": session.n_total,
            "n_used_for_estimation": session.n_used,
            "key_fraction": session.key_fraction,
            "leak_bits": session.leak_bits,
            "frames": args.frames,
            "pulses_per_frame": args.pulses,
            "simulated_seconds": args.frames * args.dt,
        },
    )
    (out / "keyrate.json").write_text(report_json)

    net = rep.beta * rep.iab - rep.chi_be - rep.delta_n
    n_final, insecure = final_length(
        len(session.key_bits), rep.beta, rep.iab, rep.chi_be, rep.delta_n
    )
    if n_final > 0:
        key, _spec = compress_key(session.key_bits, n_final, seed)
    else:
        key = np.empty(0, dtype=np.uint8)
    write_key(
        out / "final_key.bin",
        key,
        {
            "session_seed": seed,
            "corrected_bits": int(len(session.key_bits)),
            "final_bits": int(n_final),
            "insecure": bool(insecure),
            "beta": rep.beta,
            "iab": rep.iab,
            "chi_be": rep.chi_be,
            "delta_n": rep.delta_n,
            "net_bits_per_pulse": net,
            "version": __version__,
        },
    )
    print(out / "keyrate.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvqkd", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, needs_params=True):
        sp.add_argument("--seed", type=int, default=1)
        sp.add_argument("--out", type=str, default=None, help="output dir (default $CVQKD_OUT or .)")
        sp.add_argument("--jobs", type=int, default=1)
        if needs_params:
            sp.add_argument("--config", type=str, default=None)
            sp.add_argument("--preset", type=str, default=None, choices=sorted(PRESETS))

    kr = sub.add_parser("keyrate", help="secret key rate report for a parameter set")
    common(kr)
    kr.add_argument("--beta", type=float, default=0.95)
    kr.add_argument("--fer", type=float, default=0.1)
    kr.add_argument("--n-samples", type=float, default=1e10)
    kr.add_argument("--eps-pe", type=float, default=1e-10)
    kr.add_argument("--eps-bar", type=float, default=1e-10)
    kr.set_defaults(fn=cmd_keyrate)

    sw = sub.add_parser("sweep", help="key rate vs loss curve (CSV)")
    common(sw)
    sw.add_argument("--loss-min", type=float, default=0.0)
    sw.add_argument("--loss-max", type=float, default=35.0)
    sw.add_argument("--steps", type=int, default=36)
    sw.add_argument("--beta", type=float, default=0.95)
    sw.add_argument("--fer", type=float, default=0.1)
    sw.add_argument("--n-samples", type=float, default=1e10)
    sw.add_argument("--eps-pe", type=float, default=1e-10)
    sw.add_argument("--eps-bar", type=float, default=1e-10)
    sw.add_argument("--va-mode", choices=["fixed", "optimize"], default="fixed")
    sw.add_argument("--mode", choices=["asymptotic", "finite"], default="finite",
                    help="kept for interface compatibility; both columns are always emitted")
    sw.set_defaults(fn=cmd_sweep)

    rb = sub.add_parser("recon-bench", help="FER vs beta benchmark (CSV)")
    common(rb, needs_params=False)
    rb.add_argument("--snr", type=float, required=True)
    rb.add_argument("--betas", type=float, nargs="+", required=True)
    rb.add_argument("--frames", type=int, default=100)
    rb.add_argument("--code", type=str, default="met002", help="met002 or 'dv,dc'")
    rb.add_argument("--code-n", type=int, default=10000)
    rb.add_argument("--d", type=int, default=8, choices=[1, 2, 4, 8])
    rb.add_argument("--max-iter", type=int, default=200)
    rb.add_argument("--noiseless", action="store_true")
    rb.set_defaults(fn=cmd_recon_bench)

    pa = sub.add_parser("pa", help="privacy amplification of a key file")
    common(pa, needs_params=False)
    pa.add_argument("--key-in", type=str, required=True, help="packed-bit input file")
    pa.add_argument("--in-bits", type=int, required=True)
    pa.add_argument("--out-len", type=int, required=True)
    pa.set_defaults(fn=cmd_pa)

    sim = sub.add_parser("simulate", help="full pipeline on simulated frames")
    common(sim)
    sim.add_argument("--frames", type=int, default=60)
    sim.add_argument("--pulses", type=int, default=4000)
    sim.add_argument("--dt", type=float, default=10.0, help="simulated seconds between frames")
    sim.add_argument("--code", type=str, default="met002")
    sim.add_argument("--code-n", type=int, default=10000)
    sim.add_argument("--shorten", type=int, default=0)
    sim.add_argument("--d", type=int, default=8, choices=[1, 2, 4, 8])
    sim.add_argument("--max-iter", type=int, default=200)
    sim.add_argument("--order", choices=["swapped", "legacy"], default="swapped")
    sim.add_argument("--eps-pe", type=float, default=1e-10)
    sim.add_argument("--eps-bar", type=float, default=1e-10)
    sim.add_argument("--save-frames", action="store_true")
    sim.set_defaults(fn=cmd_simulate)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, OSError) as exc:
        line = getattr(exc, "line", None)
        err = {"error": type(exc).__name__, "message": str(exc)}
        if line is not None:
            err["line"] = line
        print(json.dumps(err), file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
