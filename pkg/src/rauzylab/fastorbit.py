"""Compiled double-precision pseudo-orbits of the Delta-return map.

Monte Carlo experiments need many returns, and in genus two a single return
takes tens of thousands of induction steps.  This kernel runs the same
streak-accelerated induction as ``rauzy._return_core`` on float64 lengths and
pushes a frame (or a product matrix) through the cocycle without ever forming
a whole return matrix, which would overflow.

Fixed precision subtraction is mostly exact, so an unperturbed orbit runs out
of bits like Euclid's algorithm on a dyadic rational.  The kernel rescales the
lengths by 2^REFRESH_BITS whenever they fall below 2^-REFRESH_BITS and then
perturbs each by a relative amount below 2^-PERTURB_BITS; it does the same
after every return.  Ties, which the perturbation makes rare, are resolved by
another perturbation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import EscapeError, InputError, PrecisionError

REFRESH_BITS = 13
PERTURB_BITS = 45
FLUSH_SIZE = 2.0**30

MODE_QR = 0
MODE_PRODUCT = 1


@dataclass(frozen=True, eq=False)
class KernelTables:
    """Rauzy-class tables of a simplex system as int64 arrays."""

    winner: np.ndarray  # [kind, state]
    cyc_state: np.ndarray  # [kind, state, i]
    cyc_loser: np.ndarray
    cyc_len: np.ndarray  # [kind, state]
    inv_cone: np.ndarray  # float64 (B0^T)^-1
    base: int
    k0: int
    a0: int

    @classmethod
    def of(cls, sys) -> KernelTables:
        rc = sys.rauzy_class
        n, d = len(rc), sys.d
        winner = np.array([rc.t_letter, rc.b_letter], dtype=np.int64)
        cs = np.zeros((2, n, d), dtype=np.int64)
        cl = np.zeros((2, n, d), dtype=np.int64)
        ln = np.zeros((2, n), dtype=np.int64)
        for kind in (0, 1):
            for s, cyc in enumerate(rc.cycles[kind]):
                ln[kind, s] = len(cyc)
                for i, (u, loser) in enumerate(cyc):
                    cs[kind, s, i] = u
                    cl[kind, s, i] = loser
        inv = np.array(sys.inverse_cone_matrix, dtype=float)
        k0, a0 = sys.first_run
        return cls(winner, cs, cl, ln, inv, rc.index[sys.permutation], k0, a0)


@numba.njit(cache=True)
def _perturb(lam, eps):
    if eps > 0.0:
        for i in range(lam.shape[0]):
            lam[i] *= 1.0 + eps * (2.0 * np.random.random() - 1.0)


@numba.njit(cache=True)
def _in_cone(inv, lam):
    d = lam.shape[0]
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += inv[i, j] * lam[j]
        if not acc > 0.0:
            return False
    return True


@numba.njit(cache=True)
def _reset(chunk):
    d = chunk.shape[0]
    for i in range(d):
        for j in range(d):
            chunk[i, j] = 1.0 if i == j else 0.0


@numba.njit(cache=True)
def _push(chunk, frame, orthonormalize, logs):
    """frame <- chunk @ frame, then QR (log-diagonal into ``logs``) or max-rescale (into logs[0])."""
    d, k = frame.shape
    if k == 0:
        return
    moved = chunk @ frame
    if orthonormalize:
        q, r = np.linalg.qr(moved)
        for j in range(k):
            v = r[j, j]
            if v < 0.0:
                for i in range(d):
                    q[i, j] = -q[i, j]
                v = -v
            logs[j] += math.log(v) if v > 0.0 else -np.inf
        frame[:, :] = q[:, :k]
    else:
        big = np.max(np.abs(moved))
        logs[0] += math.log(big) if big > 0.0 else -np.inf
        frame[:, :] = moved / big


@numba.njit(cache=True)
def _run(lam, frame, dual, proj, n_returns, mode, winner, cyc_state, cyc_loser, cyc_len,
         inv, base, k0, a0, cap, seed, eps, out, out_dual, rtimes, steps, record, rec_end):
    """Advance ``n_returns`` returns, filling the output arrays row by row.

    ``frame`` moves under the cocycle B and ``dual`` under its inverse
    transpose.  Mode 0 stores per-return log-diagonal QR increments of both
    (the frame is projected by ``proj`` at each return); mode 1 stores, in
    column 0 of ``out``, the running log operator norm of the product applied
    to the initial frame.  Returns 0, or 1 if a return needed more than
    ``cap`` streaks, or 2 if a frame degenerated, or 3 if ``record`` (one
    row (state, kind, length) per streak, ``rec_end`` the row count after
    each return) ran out of rows.
    """
    np.random.seed(seed)
    d = lam.shape[0]
    k = frame.shape[1]
    kd = dual.shape[1]
    qr = mode == 0
    chunk = np.eye(d)
    chunk_dual = np.eye(d)
    logs = np.zeros(max(k, 1))
    logs_dual = np.zeros(max(kd, 1))
    log_scale = 0.0
    lift = 2.0**REFRESH_BITS
    floor_ = 2.0**-REFRESH_BITS
    ells = np.zeros(d)
    n_rec = 0
    for n in range(n_returns):
        sid = base
        boost = 0.0
        nsteps = 0
        hit = False
        for _ in range(cap):
            t = winner[0, sid]
            b = winner[1, sid]
            if lam[t] == lam[b]:
                _perturb(lam, eps if eps > 0.0 else 2.0**-PERTURB_BITS)
                continue
            kind = 0 if lam[t] > lam[b] else 1
            w = t if kind == 0 else b
            c = cyc_len[kind, sid]
            s_cyc = 0.0
            for i in range(c):
                ells[i] = lam[cyc_loser[kind, sid, i]]
                s_cyc += ells[i]
            xw = lam[w]
            # whole cycles: rem = xw - q s_cyc in (0, s_cyc]
            if xw > s_cyc:
                rem = np.fmod(xw, s_cyc)
                if rem == 0.0:
                    rem = s_cyc
                qf = float(round((xw - rem) / s_cyc))
                if qf > 4.0e18:
                    qf = 4.0e18
                q = np.int64(qf)
            else:
                rem = xw
                q = np.int64(0)
            r0 = rem
            j = 0
            while j < c - 1 and rem > ells[j]:
                rem -= ells[j]
                j += 1
            if rem == ells[j] or rem <= 0.0:
                _perturb(lam, eps if eps > 0.0 else 2.0**-PERTURB_BITS)
                continue
            k_len = q * c + j
            kstar = k_len - a0 if kind == k0 else k_len
            if kstar >= 1 and cyc_state[kind, sid, kstar % c] == base:
                qs = kstar // c
                js = kstar % c
                xs = r0 + (q - qs) * s_cyc
                for i in range(js):
                    xs -= ells[i]
                saved = lam[w]
                lam[w] = xs
                if xs > 0.0 and _in_cone(inv, lam):
                    hit = True
                    k_len = kstar
                else:
                    lam[w] = saved
            if not hit:
                lam[w] = rem
            qk = k_len // c
            jk = k_len % c
            big = 0.0
            for i in range(c):
                cnt = float(qk + (1 if i < jk else 0))
                if cnt > 0.0:
                    lo = cyc_loser[kind, sid, i]
                    for col in range(d):
                        chunk[lo, col] += cnt * chunk[w, col]
                        chunk_dual[w, col] -= cnt * chunk_dual[lo, col]
                        big = max(big, chunk[lo, col], abs(chunk_dual[w, col]))
            if record.shape[0] > 0:
                if n_rec == record.shape[0]:
                    return 3
                record[n_rec, 0] = sid
                record[n_rec, 1] = kind
                record[n_rec, 2] = k_len
                n_rec += 1
            nsteps += k_len
            sid = cyc_state[kind, sid, k_len % c]
            if big > FLUSH_SIZE:
                _push(chunk, frame, qr, logs)
                _push(chunk_dual, dual, True, logs_dual)
                _reset(chunk)
                _reset(chunk_dual)
            if hit:
                break
            mx = 0.0
            for i in range(d):
                mx = max(mx, lam[i])
            if mx < floor_:
                for i in range(d):
                    lam[i] *= lift
                boost += REFRESH_BITS * math.log(2.0)
                _perturb(lam, eps)
        if not hit:
            return 1
        _push(chunk, frame, qr, logs)
        _push(chunk_dual, dual, True, logs_dual)
        _reset(chunk)
        _reset(chunk_dual)
        total = 0.0
        for i in range(d):
            total += lam[i]
        rtimes[n] = boost - math.log(total)
        steps[n] = nsteps
        if record.shape[0] > 0:
            rec_end[n] = n_rec
        for i in range(d):
            lam[i] /= total
        if eps > 0.0:
            moved = lam.copy()
            _perturb(moved, eps)
            if _in_cone(inv, moved):
                total = 0.0
                for i in range(d):
                    total += moved[i]
                for i in range(d):
                    lam[i] = moved[i] / total
        if qr:
            if k > 0:
                # re-project onto H to remove drift; the QR factor is absorbed
                q2, r2 = np.linalg.qr(proj @ frame)
                for jj in range(k):
                    v = r2[jj, jj]
                    logs[jj] += math.log(abs(v)) if v != 0.0 else -np.inf
                    sgn = 1.0 if v >= 0.0 else -1.0
                    for i in range(d):
                        frame[i, jj] = q2[i, jj] * sgn
            for jj in range(k):
                out[n, jj] = logs[jj]
                logs[jj] = 0.0
                if not np.isfinite(out[n, jj]):
                    return 2
            for jj in range(kd):
                out_dual[n, jj] = logs_dual[jj]
                logs_dual[jj] = 0.0
                if not np.isfinite(out_dual[n, jj]):
                    return 2
        else:
            log_scale += logs[0]
            logs[0] = 0.0
            sv = np.linalg.svd(frame)[1]
            out[n, 0] = log_scale + math.log(sv[0])
            if not np.isfinite(out[n, 0]):
                return 2
    return 0


@dataclass(frozen=True)
class PseudoOrbitRun:
    """Per-return output of the compiled kernel.

    ``values`` holds the frame increments (QR mode) or running log norms in
    column 0 (product mode); ``dual_values`` the increments of the dual frame.
    """

    values: np.ndarray
    dual_values: np.ndarray
    return_times: np.ndarray
    induction_steps: np.ndarray
    final_point: np.ndarray
    frame: np.ndarray
    streaks: np.ndarray | None = None
    streak_ends: np.ndarray | None = None

    def streaks_of(self, n: int) -> np.ndarray:
        """Rows (state, kind, length) of the streaks making up return ``n``."""
        if self.streaks is None:
            raise InputError("run was not recorded")
        lo = self.streak_ends[n - 1] if n else 0
        return self.streaks[lo:self.streak_ends[n]]


def seed_of(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def _as_frame(m, d):
    if m is None:
        return np.zeros((d, 0))
    fr = np.array(m, dtype=float, order="C")
    return fr.reshape(-1, 1) if fr.ndim == 1 else fr


def pseudo_orbit(sys, point, n_returns: int, rng: np.random.Generator, frame=None, dual=None,
                 mode: int = MODE_QR, projector=None, cap: int = 10**9, perturb: bool = True,
                 record: bool = False, tables: KernelTables | None = None) -> PseudoOrbitRun:
    """Run ``n_returns`` Delta-returns of a float64 pseudo-orbit started at ``point``.

    ``frame`` is the d x k matrix the cocycle acts on (identity by default),
    ``dual`` an optional d x k' frame for the inverse-transpose cocycle (QR
    mode only).  ``projector`` is applied to the frame at each return in QR
    mode.  ``perturb=False`` follows the plain double-precision orbit, which
    tracks the true orbit only for a few dozen units of log-length time.
    ``record=True`` keeps the streaks so exact matrices can be rebuilt with
    :func:`return_matrix`.
    """
    tb = tables or KernelTables.of(sys)
    d = sys.d
    lam = np.array([float(x) for x in point], dtype=float)
    if lam.shape != (d,) or not np.all(lam > 0):
        raise InputError("point must be a positive vector of length d")
    lam /= lam.sum()
    if not _in_cone(tb.inv_cone, lam):
        raise InputError("starting point is not in Delta")
    fr = np.eye(d) if frame is None else _as_frame(frame, d)
    du = _as_frame(dual, d)
    if mode != MODE_QR and du.shape[1]:
        raise InputError("the dual frame is only used in QR mode")
    proj = np.eye(d) if projector is None else np.asarray(projector, dtype=float)
    out = np.zeros((n_returns, max(fr.shape[1], 1)))
    out_dual = np.zeros((n_returns, du.shape[1]))
    rt = np.zeros(n_returns)
    st = np.zeros(n_returns, dtype=np.int64)
    eps = 2.0**-PERTURB_BITS if perturb else 0.0
    seed = seed_of(rng)
    rows = 256 * n_returns if record else 0
    while True:
        lam_run, fr_run, du_run = lam.copy(), fr.copy(), du.copy()
        rec = np.zeros((rows, 3), dtype=np.int64)
        rec_end = np.zeros(n_returns if record else 0, dtype=np.int64)
        status = _run(lam_run, fr_run, du_run, proj, n_returns, mode, tb.winner, tb.cyc_state, tb.cyc_loser,
                      tb.cyc_len, tb.inv_cone, tb.base, tb.k0, tb.a0, cap, seed, eps, out, out_dual, rt, st,
                      rec, rec_end)
        if status != 3:
            break
        rows *= 4
    if status == 1:
        raise EscapeError(f"no return to Delta within {cap} streaks")
    if status == 2:
        raise PrecisionError("frame degenerated in double precision")
    if record:
        return PseudoOrbitRun(out, out_dual, rt, st, lam_run, fr_run, rec[:rec_end[-1]], rec_end)
    return PseudoOrbitRun(out, out_dual, rt, st, lam_run, fr_run)


def return_matrix(sys, streaks) -> list[list[int]]:
    """Exact integer path matrix B of one recorded return."""
    rc = sys.rauzy_class
    d = sys.d
    b = [[int(i == j) for j in range(d)] for i in range(d)]
    winners = (rc.t_letter, rc.b_letter)
    for sid, kind, k_len in streaks.tolist():
        cyc = rc.cycles[kind][sid]
        c = len(cyc)
        w = winners[kind][sid]
        q, j = divmod(k_len, c)
        row_w = b[w]
        for i, (_, loser) in enumerate(cyc):
            cnt = q + (1 if i < j else 0)
            if cnt:
                b[loser] = [u + cnt * v for u, v in zip(b[loser], row_w)]
    return b
