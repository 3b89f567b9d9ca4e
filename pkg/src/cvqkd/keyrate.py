"""Security math: mutual information, Holevo bound, finite-size penalty, rates.

The Holevo bound chi(B:E) uses the two-mode covariance-matrix model of a
Gaussian-modulated coherent-state link with reverse reconciliation and a
trusted receiver (detector inefficiency and electronic noise attributed to
Bob). Closed forms follow the standard calibrated-homodyne treatment:

    V        = V_A + 1
    chi_line = (1 - T)/T + xi
    chi_hom  = (1 + v_el)/eta - 1
    A  = V^2 (1 - 2T) + 2T + T^2 (V + chi_line)^2
    B  = T^2 (V chi_line + 1)^2
    lambda_{1,2}^2 = [A +- sqrt(A^2 - 4B)] / 2
    C  = [A chi_hom + V sqrt(B) + T (V + chi_line)] / [T (V + chi_line + chi_hom/T)]
    D  = sqrt(B) (V + sqrt(B) chi_hom)    / [T (V + chi_line + chi_hom/T)]
    lambda_{3,4}^2 = [C +- sqrt(C^2 - 4D)] / 2
    chi = G((l1-1)/2) + G((l2-1)/2) - G((l3-1)/2) - G((l4-1)/2)

with G(x) = (x+1) log2(x+1) - x log2(x). The composite rate is

    K = f (1 - alpha) (1 - FER) [ beta I(A:B) - chi(B:E) - Delta(n) ]

clamped at zero. The finite-size variant evaluates I and chi at the
worst-case channel (t_low, xi_high) and subtracts Delta(n).
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

from .core import ParameterError, SystemParams, loss_db, transmittance
from .postproc import ChannelEstimate, worst_case_bounds

EIGENVALUE_TOL = 1e-9


class ModelViolationError(ValueError):
    """A symplectic eigenvalue fell below 1 beyond numeric tolerance."""


def entropy_g(x: float) -> float:
    """G(x) = (x+1) log2(x+1) - x log2(x); the bosonic entropy kernel."""
    if x <= 1e-15:
        return 0.0
    return (x + 1.0) * math.log2(x + 1.0) - x * math.log2(x)


def mutual_information(snr: float) -> float:
    """Shannon rate of the sifted homodyne channel: 0.5*log2(1+snr) bits/pulse."""
    if snr < 0:
        raise ParameterError(f"snr must be >= 0, got {snr}")
    return 0.5 * math.log2(1.0 + snr)


def _lambda_pair(s: float, p: float) -> tuple[float, float]:
    # roots of x^2 - s x + p, returned as sqrt(roots); the smaller root is
    # computed as p / larger to avoid cancellation when s^2 >> 4p.
    disc = s * s - 4.0 * p
    if disc < 0:
        if disc < -1e-9 * max(s * s, 1.0):
            raise ModelViolationError(f"negative discriminant {disc} (s={s}, p={p})")
        disc = 0.0
    big = (s + math.sqrt(disc)) / 2.0
    small = p / big if big > 0 else 0.0
    return math.sqrt(big), math.sqrt(small)


def symplectic_lambdas(v_a, t, xi, eta, v_el) -> tuple[float, float, float, float]:
    """The four symplectic eigenvalues entering chi(B:E)."""
    if not 0.0 < t <= 1.0:
        raise ParameterError(f"transmittance must be in (0,1], got {t}")
    if v_a <= 0 or xi < 0 or not 0 < eta <= 1 or v_el < 0:
        raise ParameterError("invalid channel/detector parameters")
    v = v_a + 1.0
    chi_line = (1.0 - t) / t + xi
    chi_hom = (1.0 + v_el) / eta - 1.0
    a = v * v * (1.0 - 2.0 * t) + 2.0 * t + t * t * (v + chi_line) ** 2
    b = (t * (v * chi_line + 1.0)) ** 2
    l1, l2 = _lambda_pair(a, b)
    den = t * (v + chi_line + chi_hom / t)
    c = (a * chi_hom + v * math.sqrt(b) + t * (v + chi_line)) / den
    d = math.sqrt(b) * (v + math.sqrt(b) * chi_hom) / den
    l3, l4 = _lambda_pair(c, d)
    for lam in (l1, l2, l3, l4):
        if lam < 1.0 - EIGENVALUE_TOL:
            raise ModelViolationError(f"symplectic eigenvalue {lam} < 1")
    return l1, l2, l3, l4


def holevo_bound(v_a: float, t: float, xi: float, eta: float, v_el: float) -> float:
    """chi(B:E) in bits/pulse for the trusted-receiver homodyne channel."""
    l1, l2, l3, l4 = symplectic_lambdas(v_a, t, xi, eta, v_el)
    chi = (
        entropy_g((l1 - 1.0) / 2.0)
        + entropy_g((l2 - 1.0) / 2.0)
        - entropy_g((l3 - 1.0) / 2.0)
        - entropy_g((l4 - 1.0) / 2.0)
    )
    # lossless noiseless channels can round to a few ulp below zero
    return max(chi, 0.0) if chi > -1e-12 else chi


def delta_n(n: float, eps_bar: float = 1e-10) -> float:
    """Finite-size penalty 7*sqrt(log2(2/eps_bar)/n) bits/pulse."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not 0.0 < eps_bar < 1.0:
        raise ParameterError(f"eps_bar must be in (0,1), got {eps_bar}")
    return 7.0 * math.sqrt(math.log2(2.0 / eps_bar) / n)


@dataclass(frozen=True)
class KeyRateReport:
    """All inputs to the composite rate formula plus both resulting rates."""

    iab: float
    chi_be: float
    delta_n: float
    beta: float
    fer: float
    alpha: float
    f_hz: float
    k_asymptotic_bps: float
    k_finite_bps: float
    v_a: float
    t: float
    xi: float
    eta: float
    v_el: float
    n_samples: float
    eps_pe: float
    eps_bar: float
    t_low: float
    xi_high: float
    snr: float
    insecure_asymptotic: bool
    insecure_finite: bool

    def to_json(self, **extra) -> str:
        d = asdict(self)
        d.update(extra)
        return json.dumps(d, indent=2, sort_keys=True)


def _snr(v_a, t, xi, eta, v_el):
    return eta * t * v_a / (1.0 + v_el + eta * t * xi)


def _clamped_rate(f_hz, alpha, fer, net):
    return f_hz * (1.0 - alpha) * (1.0 - fer) * max(net, 0.0)


def _synthetic_estimate(v_a, t, xi, eta, v_el, n):
    # worst_case_bounds consumes a ChannelEstimate; build one whose point
    # values are the model truth so the same bound code serves sweeps.
    t_hat = math.sqrt(eta * t)
    sigma2 = 1.0 + v_el + eta * t * xi
    return ChannelEstimate(
        t_hat=t_hat,
        sigma2_hat=sigma2,
        T_hat=t,
        xi_hat=xi,
        n_used=int(n),
        a_var=v_a,
    )


def secret_key_rate(
    params: SystemParams,
    *,
    beta: float,
    fer: float,
    n_samples: float = 1e10,
    eps_pe: float = 1e-10,
    eps_bar: float = 1e-10,
    t_low: float | None = None,
    xi_high: float | None = None,
) -> KeyRateReport:
    """Asymptotic and finite-size secret key rates for a parameter set.

    The asymptotic rate uses the point channel parameters with Delta = 0.
    The finite-size rate evaluates the formula at the worst-case channel
    (t_low, xi_high) for n_samples estimation samples and subtracts
    Delta(n_samples). Passing explicit (t_low, xi_high), e.g. from a
    measured ChannelEstimate, overrides the analytic bounds.
    """
    if not 0.0 <= beta <= 1.0:
        raise ParameterError(f"beta must be in [0,1], got {beta}")
    if not 0.0 <= fer <= 1.0:
        raise ParameterError(f"fer must be in [0,1], got {fer}")
    t = transmittance(loss_db(params.channel))
    v_a = params.modulation_variance_snu
    xi = params.channel.excess_noise_snu
    eta = params.detector.efficiency
    v_el = params.detector.electronic_noise_snu

    s = _snr(v_a, t, xi, eta, v_el)
    iab = mutual_information(s)
    chi = holevo_bound(v_a, t, xi, eta, v_el)
    net_asym = beta * iab - chi
    k_asym = _clamped_rate(params.rep_rate_hz, params.overhead, fer, net_asym)

    if t_low is None or xi_high is None:
        est = _synthetic_estimate(v_a, t, xi, eta, v_el, n_samples)
        t_low_b, xi_high_b = worst_case_bounds(est, eps_pe, detector=params.detector)
        t_low = t_low if t_low is not None else t_low_b
        xi_high = xi_high if xi_high is not None else xi_high_b
    t_wc = min(max(t_low, 0.0) ** 2 / eta, 1.0)
    xi_wc = max(xi_high, 0.0)
    dlt = delta_n(n_samples, eps_bar)
    if t_wc > 0.0:
        s_wc = _snr(v_a, t_wc, xi_wc, eta, v_el)
        net_fin = beta * mutual_information(s_wc) - holevo_bound(v_a, t_wc, xi_wc, eta, v_el) - dlt
    else:
        net_fin = -dlt
    k_fin = _clamped_rate(params.rep_rate_hz, params.overhead, fer, net_fin)
    k_fin = min(k_fin, k_asym)

    return KeyRateReport(
        iab=iab,
        chi_be=chi,
        delta_n=dlt,
        beta=beta,
        fer=fer,
        alpha=params.overhead,
        f_hz=params.rep_rate_hz,
        k_asymptotic_bps=k_asym,
        k_finite_bps=k_fin,
        v_a=v_a,
        t=t,
        xi=xi,
        eta=eta,
        v_el=v_el,
        n_samples=float(n_samples),
        eps_pe=eps_pe,
        eps_bar=eps_bar,
        t_low=t_low,
        xi_high=xi_high,
        snr=s,
        insecure_asymptotic=net_asym <= 0.0,
        insecure_finite=net_fin <= 0.0,
    )


def secret_key_rate_from_estimate(
    estimate: ChannelEstimate,
    params: SystemParams,
    *,
    beta: float,
    fer: float,
    eps_bar: float = 1e-10,
) -> KeyRateReport:
    """Rate report from a measured ChannelEstimate (bounds must be populated)."""
    if estimate.t_low is None or estimate.xi_high is None:
        raise ParameterError("estimate has no worst-case bounds; run worst_case_bounds first")
    from dataclasses import replace

    chan = replace(
        params.channel,
        excess_noise_snu=max(estimate.xi_hat, 0.0),
        # represent the estimated transmittance through an equivalent loss
        length_km=1.0,
        atten_db_per_km=-10.0 * math.log10(max(min(estimate.T_hat, 1.0), 1e-300)),
    )
    eff = replace(params, channel=chan)
    return secret_key_rate(
        eff,
        beta=beta,
        fer=fer,
        n_samples=estimate.n_used,
        eps_pe=estimate.eps_pe if estimate.eps_pe else 1e-10,
        eps_bar=eps_bar,
        t_low=estimate.t_low,
        xi_high=estimate.xi_high,
    )


@dataclass(frozen=True)
class VaOptimum:
    v_a: float
    k_bps: float
    flagged_zero: bool


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def optimize_va(
    loss: float,
    *,
    xi: float,
    eta: float = 0.6,
    v_el: float = 0.1,
    beta: float = 0.95,
    fer: float = 0.0,
    lo: float = 0.01,
    hi: float = 100.0,
    tol: float = 1e-3,
) -> VaOptimum:
    """Golden-section search for the V_A maximizing the asymptotic net rate.

    Returns the lower search bound flagged when the objective is zero
    everywhere (no secure rate at any modulation variance).
    """
    if loss < 0:
        raise ParameterError(f"loss must be >= 0, got {loss}")
    t = transmittance(loss)

    def net(v_a: float) -> float:
        s = _snr(v_a, t, xi, eta, v_el)
        return max(beta * mutual_information(s) - holevo_bound(v_a, t, xi, eta, v_el), 0.0)

    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = net(c), net(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = net(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = net(d)
    v_star = (a + b) / 2.0
    k_star = net(v_star)
    if k_star <= 0.0:
        return VaOptimum(v_a=lo, k_bps=0.0, flagged_zero=True)
    return VaOptimum(v_a=v_star, k_bps=k_star, flagged_zero=False)


@dataclass(frozen=True)
class SweepPoint:
    loss_db: float
    length_km: float
    report: KeyRateReport


def sweep(
    losses_db,
    params: SystemParams,
    *,
    beta: float,
    fer: float,
    n_samples: float = 1e10,
    eps_pe: float = 1e-10,
    eps_bar: float = 1e-10,
    va_mode: str = "fixed",
    jobs: int = 1,
) -> list[SweepPoint]:
    """Key-rate curve over a range of losses (dB).

    va_mode "fixed" holds the system's design modulation variance (the
    field configuration: one V_A calibrated for the ~12 dB design point);
    "optimize" re-optimizes V_A at every loss.
    """
    losses = [float(x) for x in losses_db]
    if not losses:
        raise ParameterError("loss range is empty")
    if va_mode not in ("fixed", "optimize"):
        raise ParameterError(f"va_mode must be 'fixed' or 'optimize', got {va_mode!r}")
    atten = params.channel.atten_db_per_km

    def point(loss: float) -> SweepPoint:
        from dataclasses import replace

        length = loss / atten if atten > 0 else 0.0
        chan = replace(params.channel, length_km=length if atten > 0 else 0.0,
                       atten_db_per_km=atten if atten > 0 else 0.0)
        if atten <= 0:
            chan = replace(params.channel, length_km=loss, atten_db_per_km=1.0)
            length = loss
        p = replace(params, channel=chan)
        if va_mode == "optimize":
            opt = optimize_va(
                loss,
                xi=chan.excess_noise_snu,
                eta=params.detector.efficiency,
                v_el=params.detector.electronic_noise_snu,
                beta=beta,
                fer=fer,
            )
            p = p.with_modulation_variance(opt.v_a)
        rep = secret_key_rate(
            p, beta=beta, fer=fer, n_samples=n_samples, eps_pe=eps_pe, eps_bar=eps_bar
        )
        return SweepPoint(loss_db=loss, length_km=length, report=rep)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(point, losses))
    return [point(x) for x in losses]


def sweep_to_csv(path, points: list[SweepPoint], provenance: str = "") -> None:
    """Write sweep output: loss_db, length_km, k_asym_bps, k_finite_bps."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        w = csv.writer(fh)
        w.writerow(["loss_db", "length_km", "k_asym_bps", "k_finite_bps"])
        for p in points:
            w.writerow(
                [
                    f"{p.loss_db:.6g}",
                    f"{p.length_km:.6g}",
                    f"{p.report.k_asymptotic_bps:.6g}",
                    f"{p.report.k_finite_bps:.6g}",
                ]
            )
