"""Multi-edge-type LDPC codes: construction, syndrome BP decoding, storage.

An ensemble lists node classes per side: each class is a tuple of per-edge-
type degrees plus the fraction of n it occupies. Construction instantiates
sockets per edge type on both sides, pairs them by a seeded shuffle and
repairs double edges by socket swaps, which respects the type structure the
way progressive-edge-growth builders do at desk scale.

Decoding is log-domain sum-product against a target syndrome (zero for
plain codewords): the check-to-variable magnitude uses the self-inverse
phi(x) = -log(tanh(x/2)) and the sign rule picks up the syndrome bit.
Messages are clipped at +-30. Two equivalent kernels are provided (numba
loops / vectorized numpy); see cvqkd._accel.

The repo ships the rate-0.02 multi-edge ensemble familiar from low-SNR
reconciliation code designs in ``data/met_rate002.json``; the builder
accepts any balanced table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ._accel import njit, resolve_backend
from .core import ParameterError

MSG_CLIP = 30.0
_PHI_MIN_ARG = 1e-300


class EnsembleError(ValueError):
    """Degree table is inconsistent (unbalanced sockets, bad fractions)."""


@dataclass(frozen=True)
class MetEnsemble:
    """Node classes: (per-edge-type degree tuple, fraction of n)."""

    var_classes: tuple
    chk_classes: tuple

    def __post_init__(self):
        if not self.var_classes or not self.chk_classes:
            raise EnsembleError("empty ensemble")
        ets = {len(d) for d, _ in self.var_classes} | {len(d) for d, _ in self.chk_classes}
        if len(ets) != 1:
            raise EnsembleError("inconsistent edge-type counts across classes")
        if any(f <= 0 for _, f in self.var_classes + self.chk_classes):
            raise EnsembleError("class fractions must be positive")
        vf = sum(f for _, f in self.var_classes)
        if abs(vf - 1.0) > 1e-9:
            raise EnsembleError(f"variable fractions must sum to 1, got {vf}")
        for t in range(self.n_edge_types):
            ve = sum(d[t] * f for d, f in self.var_classes)
            ce = sum(d[t] * f for d, f in self.chk_classes)
            if abs(ve - ce) > 1e-9:
                raise EnsembleError(f"edge type {t} unbalanced: var {ve} vs chk {ce}")

    @property
    def n_edge_types(self) -> int:
        return len(self.var_classes[0][0])

    @property
    def design_rate(self) -> float:
        return 1.0 - sum(f for _, f in self.chk_classes)

    def to_json(self) -> str:
        return json.dumps(
            {
                "var_classes": [[list(d), f] for d, f in self.var_classes],
                "chk_classes": [[list(d), f] for d, f in self.chk_classes],
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "MetEnsemble":
        raw = json.loads(text)
        return MetEnsemble(
            var_classes=tuple((tuple(d), float(f)) for d, f in raw["var_classes"]),
            chk_classes=tuple((tuple(d), float(f)) for d, f in raw["chk_classes"]),
        )


def regular_ensemble(dv: int, dc: int) -> MetEnsemble:
    """Single-edge-type (dv, dc) regular ensemble, rate 1 - dv/dc."""
    return MetEnsemble(var_classes=(((dv,), 1.0),), chk_classes=(((dc,), dv / dc),))


def met_rate002_ensemble() -> MetEnsemble:
    text = resources.files("cvqkd.data").joinpath("met_rate002.json").read_text()
    return MetEnsemble.from_json(text)


@dataclass(frozen=True)
class CodeSpec:
    """A built parity-check code: (n-k) x n sparse structure in check-major CSR."""

    n_bits: int
    k_bits: int
    ensemble: MetEnsemble
    seed: int
    chk_ptr: np.ndarray = field(repr=False)   # (m+1,) int64
    edge_var: np.ndarray = field(repr=False)  # (E,) int32, var id per edge

    def __post_init__(self):
        if not 0 < self.k_bits < self.n_bits:
            raise ParameterError(f"need 0 < k < n, got k={self.k_bits} n={self.n_bits}")

    @property
    def m_checks(self) -> int:
        return len(self.chk_ptr) - 1

    @property
    def n_edges(self) -> int:
        return len(self.edge_var)

    @property
    def mother_rate(self) -> float:
        return self.k_bits / self.n_bits

    def syndrome(self, bits: np.ndarray) -> np.ndarray:
        b = np.asarray(bits, dtype=np.uint8)
        if len(b) != self.n_bits:
            raise ParameterError("bits length != n_bits")
        sums = np.add.reduceat(b[self.edge_var].astype(np.int64), self.chk_ptr[:-1])
        return (sums & 1).astype(np.uint8)

    def column_weights(self) -> np.ndarray:
        return np.bincount(self.edge_var, minlength=self.n_bits)


def _round_counts(fracs, total: int) -> list[int]:
    # largest-remainder rounding to integers summing to total
    raw = [f * total for f in fracs]
    counts = [int(np.floor(r)) for r in raw]
    rem = total - sum(counts)
    order = np.argsort([c - r for c, r in zip(counts, raw)])
    for i in range(rem):
        counts[order[i % len(counts)]] += 1
    return counts


def build_met_code(ensemble: MetEnsemble, n_bits: int, seed: int) -> CodeSpec:
    """Seeded socket-matching construction respecting edge types; no double edges."""
    if n_bits < 4:
        raise ParameterError(f"n_bits too small: {n_bits}")
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x1D9C]))
    n_types = ensemble.n_edge_types

    v_counts = _round_counts([f for _, f in ensemble.var_classes], n_bits)
    m_checks = int(round(sum(f for _, f in ensemble.chk_classes) * n_bits))
    c_counts = _round_counts(
        [f / sum(f for _, f in ensemble.chk_classes) for _, f in ensemble.chk_classes], m_checks
    )

    # per-node degree tables
    v_deg = np.zeros((n_bits, n_types), dtype=np.int64)
    pos = 0
    for (degs, _), cnt in zip(ensemble.var_classes, v_counts):
        v_deg[pos : pos + cnt] = degs
        pos += cnt
    c_deg = np.zeros((m_checks, n_types), dtype=np.int64)
    pos = 0
    for (degs, _), cnt in zip(ensemble.chk_classes, c_counts):
        c_deg[pos : pos + cnt] = degs
        pos += cnt

    edges_v = []
    edges_c = []
    for t in range(n_types):
        nv = int(v_deg[:, t].sum())
        nc = int(c_deg[:, t].sum())
        if (nv == 0) != (nc == 0):
            raise EnsembleError(f"edge type {t}: sockets on one side only")
        if nv == 0:
            continue
        # integer rounding can leave a small socket imbalance; repair on the
        # check side by trimming/adding sockets at the highest-degree nodes
        while nc > nv:
            j = int(np.argmax(c_deg[:, t]))
            c_deg[j, t] -= 1
            nc -= 1
        while nv > nc:
            j = int(np.argmax(c_deg[:, t]))
            c_deg[j, t] += 1
            nc += 1
        vs = np.repeat(np.arange(n_bits, dtype=np.int64), v_deg[:, t])
        cs = np.repeat(np.arange(m_checks, dtype=np.int64), c_deg[:, t])
        rng.shuffle(cs)
        edges_v.append(vs)
        edges_c.append(cs)
    ev = np.concatenate(edges_v)
    ec = np.concatenate(edges_c)

    # double-edge repair: swap the check endpoints of colliding edges with
    # random partners until all (var, check) pairs are distinct
    for _ in range(1000):
        key = ev * np.int64(m_checks) + ec
        order = np.argsort(key, kind="stable")
        dup = np.nonzero(np.diff(key[order]) == 0)[0]
        if len(dup) == 0:
            break
        bad = order[dup]
        partners = rng.integers(0, len(ev), size=len(bad))
        ec[bad], ec[partners] = ec[partners].copy(), ec[bad].copy()
    else:
        raise EnsembleError("could not eliminate double edges")

    if np.bincount(ev, minlength=n_bits).min() < 1:
        raise EnsembleError("construction produced an empty column")
    if np.bincount(ec, minlength=m_checks).min() < 1:
        raise EnsembleError("construction produced an empty check")

    order = np.argsort(ec, kind="stable")
    ec_sorted = ec[order]
    ev_sorted = ev[order].astype(np.int32)
    chk_ptr = np.zeros(m_checks + 1, dtype=np.int64)
    np.cumsum(np.bincount(ec_sorted, minlength=m_checks), out=chk_ptr[1:])
    chk_ptr.setflags(write=False)
    ev_sorted.setflags(write=False)

    return CodeSpec(
        n_bits=n_bits,
        k_bits=n_bits - m_checks,
        ensemble=ensemble,
        seed=seed,
        chk_ptr=chk_ptr,
        edge_var=ev_sorted,
    )


# --- decoding ---------------------------------------------------------------


@dataclass(frozen=True)
class DecodeResult:
    success: bool
    bits: np.ndarray
    iterations: int


def _phi_np(x):
    return np.log1p(2.0 / np.expm1(np.maximum(x, _PHI_MIN_ARG)))


def _bp_numpy(llr, chk_ptr, edge_var, synd, max_iter):
    n = len(llr)
    m = len(chk_ptr) - 1
    starts = chk_ptr[:-1]
    msg_cv = np.zeros(len(edge_var))
    synd_sign = 1.0 - 2.0 * synd.astype(np.float64)
    for it in range(1, max_iter + 1):
        total = llr + np.bincount(edge_var, weights=msg_cv, minlength=n)
        bits = (total < 0).astype(np.uint8)
        par = np.add.reduceat(bits[edge_var].astype(np.int64), starts) & 1
        if np.array_equal(par, synd):
            return DecodeResult(True, bits, it)
        msg_vc = np.clip(total[edge_var] - msg_cv, -MSG_CLIP, MSG_CLIP)
        mag = np.abs(msg_vc)
        neg = msg_vc < 0.0
        phi = _phi_np(mag)
        sum_phi = np.add.reduceat(phi, starts)
        n_neg = np.add.reduceat(neg.astype(np.int64), starts)
        sign_all = 1.0 - 2.0 * ((n_neg & 1).astype(np.float64))
        rep_sum = np.repeat(sum_phi, np.diff(chk_ptr))
        rep_sign = np.repeat(sign_all * synd_sign, np.diff(chk_ptr))
        sign_e = np.where(neg, -1.0, 1.0)
        out_mag = np.minimum(_phi_np(rep_sum - phi), MSG_CLIP)
        msg_cv = rep_sign * sign_e * out_mag
    total = llr + np.bincount(edge_var, weights=msg_cv, minlength=n)
    bits = (total < 0).astype(np.uint8)
    par = np.add.reduceat(bits[edge_var].astype(np.int64), starts) & 1
    return DecodeResult(bool(np.array_equal(par, synd)), bits, max_iter)


@njit(cache=True, nogil=True)
def _bp_numba(llr, chk_ptr, edge_var, synd, max_iter, clip):  # pragma: no cover
    n = llr.shape[0]
    m = chk_ptr.shape[0] - 1
    ne = edge_var.shape[0]
    msg_cv = np.zeros(ne)
    total = np.empty(n)
    bits = np.empty(n, dtype=np.uint8)
    phi = np.empty(ne)
    neg = np.empty(ne, dtype=np.uint8)
    it_used = max_iter
    ok = False
    for it in range(1, max_iter + 1):
        for v in range(n):
            total[v] = llr[v]
        for e in range(ne):
            total[edge_var[e]] += msg_cv[e]
        for v in range(n):
            bits[v] = 1 if total[v] < 0.0 else 0
        ok = True
        for c in range(m):
            par = synd[c]
            for e in range(chk_ptr[c], chk_ptr[c + 1]):
                par ^= bits[edge_var[e]]
            if par:
                ok = False
                break
        if ok:
            it_used = it
            break
        for e in range(ne):
            t = total[edge_var[e]] - msg_cv[e]
            if t > clip:
                t = clip
            elif t < -clip:
                t = -clip
            if t < 0.0:
                neg[e] = 1
                t = -t
            else:
                neg[e] = 0
            if t < 1e-300:
                t = 1e-300
            phi[e] = np.log1p(2.0 / np.expm1(t))
        for c in range(m):
            s = 0.0
            par = synd[c]
            for e in range(chk_ptr[c], chk_ptr[c + 1]):
                s += phi[e]
                par ^= neg[e]
            for e in range(chk_ptr[c], chk_ptr[c + 1]):
                arg = s - phi[e]
                if arg < 1e-300:
                    arg = 1e-300
                mag = np.log1p(2.0 / np.expm1(arg))
                if mag > clip:
                    mag = clip
                sgn = -1.0 if (par ^ neg[e]) else 1.0
                msg_cv[e] = sgn * mag
    if not ok:
        for v in range(n):
            total[v] = llr[v]
        for e in range(ne):
            total[edge_var[e]] += msg_cv[e]
        for v in range(n):
            bits[v] = 1 if total[v] < 0.0 else 0
        ok = True
        for c in range(m):
            par = synd[c]
            for e in range(chk_ptr[c], chk_ptr[c + 1]):
                par ^= bits[edge_var[e]]
            if par:
                ok = False
                break
    return bits, it_used, ok


def bp_decode(
    llrs,
    code: CodeSpec,
    adapt=None,
    max_iter: int = 200,
    syndrome=None,
    backend: str = "auto",
) -> DecodeResult:
    """Sum-product decode toward the target syndrome (zero by default).

    Positive LLR means bit 0. Punctured positions must carry llr 0 and
    shortened positions a saturated llr; passing an adapt config enforces
    that pattern. All-zero llrs carry no information and fail immediately.
    """
    llr = np.ascontiguousarray(llrs, dtype=np.float64)
    if len(llr) != code.n_bits:
        raise ParameterError(f"llr length {len(llr)} != n_bits {code.n_bits}")
    if not np.all(np.isfinite(llr)):
        raise ParameterError("llrs must be finite (use a saturated value for shortened bits)")
    if max_iter < 1:
        raise ParameterError("max_iter must be >= 1")
    if syndrome is None:
        synd = np.zeros(code.m_checks, dtype=np.uint8)
    else:
        synd = np.ascontiguousarray(syndrome, dtype=np.uint8)
        if len(synd) != code.m_checks:
            raise ParameterError("syndrome length != number of checks")
    if adapt is not None:
        llr = llr.copy()
        llr[adapt.punctured_idx] = 0.0
    if not llr.any():
        return DecodeResult(False, np.zeros(code.n_bits, dtype=np.uint8), 0)
    if resolve_backend(backend) == "numba":
        bits, iters, ok = _bp_numba(
            llr, code.chk_ptr, code.edge_var, synd, max_iter, MSG_CLIP
        )
        return DecodeResult(bool(ok), np.asarray(bits), int(iters))
    return _bp_numpy(llr, code.chk_ptr, code.edge_var, synd, max_iter)


# --- rank / measured rate ----------------------------------------------------


def gf2_rank(code: CodeSpec) -> int:
    """Rank of H over GF(2): peel weight-1 columns, then eliminate the core."""
    rows = [set() for _ in range(code.m_checks)]
    col_rows: dict[int, set] = {}
    for c in range(code.m_checks):
        for e in range(code.chk_ptr[c], code.chk_ptr[c + 1]):
            v = int(code.edge_var[e])
            rows[c].add(v)
            col_rows.setdefault(v, set()).add(c)
    alive = set(range(code.m_checks))
    rank = 0
    queue = [v for v, rs in col_rows.items() if len(rs) == 1]
    while queue:
        v = queue.pop()
        rs = col_rows.get(v)
        if not rs or len(rs) != 1:
            continue
        (r,) = rs
        if r not in alive:
            continue
        rank += 1
        alive.discard(r)
        for v2 in rows[r]:
            s = col_rows[v2]
            s.discard(r)
            if len(s) == 1:
                queue.append(v2)
        del col_rows[v]
    if not alive:
        return rank
    # dense elimination on the residual core
    live_rows = sorted(alive)
    live_cols = sorted({v for r in live_rows for v in rows[r] if v in col_rows})
    colmap = {v: i for i, v in enumerate(live_cols)}
    w = (len(live_cols) + 63) // 64
    mat = np.zeros((len(live_rows), w), dtype=np.uint64)
    for i, r in enumerate(live_rows):
        for v in rows[r]:
            if v in colmap:
                j = colmap[v]
                mat[i, j >> 6] |= np.uint64(1) << np.uint64(j & 63)
    r = 0
    for j in range(len(live_cols)):
        word, bit = j >> 6, np.uint64(1) << np.uint64(j & 63)
        pivot = -1
        for i in range(r, len(live_rows)):
            if mat[i, word] & bit:
                pivot = i
                break
        if pivot < 0:
            continue
        mat[[r, pivot]] = mat[[pivot, r]]
        hits = np.nonzero(mat[:, word] & bit)[0]
        hits = hits[hits != r]
        mat[hits] ^= mat[r]
        r += 1
        if r == len(live_rows):
            break
    return rank + r


def measured_rate(code: CodeSpec) -> float:
    """1 - rank(H)/n; equals the design rate when H has full row rank."""
    return 1.0 - gf2_rank(code) / code.n_bits


# --- alist storage ------------------------------------------------------------


def save_alist(path, code: CodeSpec) -> None:
    n, m = code.n_bits, code.m_checks
    col = [[] for _ in range(n)]
    row = [[] for _ in range(m)]
    for c in range(m):
        for e in range(code.chk_ptr[c], code.chk_ptr[c + 1]):
            v = int(code.edge_var[e])
            col[v].append(c + 1)
            row[c].append(v + 1)
    dmax_c = max(len(x) for x in col)
    dmax_r = max(len(x) for x in row)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {m}\n{dmax_c} {dmax_r}\n")
        fh.write(" ".join(str(len(x)) for x in col) + "\n")
        fh.write(" ".join(str(len(x)) for x in row) + "\n")
        for x in col:
            fh.write(" ".join(map(str, x + [0] * (dmax_c - len(x)))) + "\n")
        for x in row:
            fh.write(" ".join(map(str, x + [0] * (dmax_r - len(x)))) + "\n")


def load_alist(path, ensemble: MetEnsemble | None = None, seed: int = 0) -> CodeSpec:
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    it = iter(tokens)
    n, m = int(next(it)), int(next(it))
    next(it), next(it)
    col_deg = [int(next(it)) for _ in range(n)]
    row_deg = [int(next(it)) for _ in range(m)]
    max_c = max(col_deg)
    max_r = max(row_deg)
    # per-column lists are redundant with the per-row lists; skip them
    for _ in range(n * max_c):
        next(it)
    ev = []
    ptr = [0]
    for r in range(m):
        got = 0
        for _ in range(max_r):
            v = int(next(it))
            if v > 0:
                ev.append(v - 1)
                got += 1
        ptr.append(ptr[-1] + got)
    if ensemble is None:
        ensemble = regular_ensemble(2, 4)  # placeholder table for foreign codes
    chk_ptr = np.array(ptr, dtype=np.int64)
    edge_var = np.array(ev, dtype=np.int32)
    chk_ptr.setflags(write=False)
    edge_var.setflags(write=False)
    return CodeSpec(
        n_bits=n, k_bits=n - m, ensemble=ensemble, seed=seed, chk_ptr=chk_ptr, edge_var=edge_var
    )
