"""Bounded-variable primal simplex for ranged-row linear programs.

Solves

    maximize    c @ z
    subject to  row_lo <= R @ z <= row_hi
                col_lo <= z <= col_hi

with every variable and every row activity bounded.  Each row carries an
implicit slack ``s = R @ z`` boxed by the row bounds, so a two-sided
absolute-value constraint costs one row rather than two.

Only the *kernel* of the basis is factorized: the square submatrix
``K = R[tight_rows, basic_cols]``.  Rows whose slack is basic never enter a
linear solve, so the factorization is never larger than the number of
basic structural columns, however many rows the problem has.

Between refactorizations ``K`` is handled as a fixed sparse LU of the
kernel ``K0`` at the last refactorization, bordered by the rows and columns
that changed since.  Rows dropped from ``K0`` become border unknowns that
absorb their equation; columns dropped from ``K0`` become border equations
pinning them to zero.  With ``W = K0^{-1} B`` and ``Z = K0^{-T} C^T`` kept
as dense panels, every solve with ``K`` costs one sparse triangular pass
plus small dense work with the Schur complement ``D - C K0^{-1} B``.  The
panel entry for a new border vector is the first-stage solve already done
for the direction or the pivot row, so it comes for free.

Reduced costs are updated from the pivot row each iteration and recomputed
exactly at every refactorization.

The iteration loop is compiled with numba; factorizations use SuperLU.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba as nb
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
ITERATION_LIMIT = "iteration_limit"

PRICING_RULES = ("dantzig", "devex")

_OPTIMAL, _BORDER_FULL, _ITER_LIMIT, _SINGULAR = 0, 1, 2, 3
# counters: iterations, pivots, flips, degenerate, degenerate_run, bland flag
_CNT_IT, _CNT_PIV, _CNT_FLIP, _CNT_DEG, _CNT_RUN, _CNT_BLAND = range(6)
# devex weights above this are reset to a fresh reference framework
_DEVEX_RESET = 1e6


class SimplexError(RuntimeError):
    """Raised when the simplex cannot produce a certified optimal vertex."""


@dataclass
class SimplexResult:
    status: str
    x: np.ndarray
    objective: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    iterations: int
    primal_residual: float
    dual_bound: float
    gap: float
    stats: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# sparse triangular solves on SuperLU factors:  Pr K0 Pc = L U
# L and U are stored without their diagonals, which are kept inverted.
# ---------------------------------------------------------------------------
@nb.njit(cache=True, nogil=True)
def _lu_solve(F, b):
    Lp, Li, Lx, Linv, Up, Ui, Ux, Uinv, perm_r, perm_c = F
    k = b.size
    w = np.empty(k)
    for i in range(k):
        w[perm_r[i]] = b[i]
    for j in range(k):
        wj = w[j] * Linv[j]
        w[j] = wj
        if wj != 0.0:
            for p in range(Lp[j], Lp[j + 1]):
                w[Li[p]] -= Lx[p] * wj
    for j in range(k - 1, -1, -1):
        wj = w[j] * Uinv[j]
        w[j] = wj
        if wj != 0.0:
            for p in range(Up[j], Up[j + 1]):
                w[Ui[p]] -= Ux[p] * wj
    x = np.empty(k)
    for i in range(k):
        x[i] = w[perm_c[i]]
    return x


@nb.njit(cache=True, nogil=True)
def _lu_solve_t(F, b):
    Lp, Li, Lx, Linv, Up, Ui, Ux, Uinv, perm_r, perm_c = F
    k = b.size
    a = np.empty(k)
    for i in range(k):
        a[perm_c[i]] = b[i]
    for j in range(k):
        acc = a[j]
        for p in range(Up[j], Up[j + 1]):
            acc -= Ux[p] * a[Ui[p]]
        a[j] = acc * Uinv[j]
    for j in range(k - 1, -1, -1):
        acc = a[j]
        for p in range(Lp[j], Lp[j + 1]):
            acc -= Lx[p] * a[Li[p]]
        a[j] = acc * Linv[j]
    y = np.empty(k)
    for i in range(k):
        y[i] = a[perm_r[i]]
    return y


# ---------------------------------------------------------------------------
# small dense LU with partial pivoting for the Schur complement
# ---------------------------------------------------------------------------
@nb.njit(cache=True, nogil=True)
def _dense_lu(A, p, LU, piv):
    """Factor A[:p, :p] into LU; returns the smallest pivot magnitude."""
    for i in range(p):
        for j in range(p):
            LU[i, j] = A[i, j]
    smallest = np.inf
    for col in range(p):
        best = col
        for i in range(col + 1, p):
            if abs(LU[i, col]) > abs(LU[best, col]):
                best = i
        piv[col] = best
        if best != col:
            for j in range(p):
                tmp = LU[col, j]
                LU[col, j] = LU[best, j]
                LU[best, j] = tmp
        pv = LU[col, col]
        if abs(pv) < smallest:
            smallest = abs(pv)
        if pv == 0.0:
            return 0.0
        for i in range(col + 1, p):
            f = LU[i, col] / pv
            LU[i, col] = f
            if f != 0.0:
                for j in range(col + 1, p):
                    LU[i, j] -= f * LU[col, j]
    return smallest


@nb.njit(cache=True, nogil=True)
def _dense_solve(LU, piv, p, b):
    x = b.copy()
    for i in range(p):
        t = x[piv[i]]
        x[piv[i]] = x[i]
        x[i] = t
    for i in range(p):
        acc = x[i]
        for j in range(i):
            acc -= LU[i, j] * x[j]
        x[i] = acc
    for i in range(p - 1, -1, -1):
        acc = x[i]
        for j in range(i + 1, p):
            acc -= LU[i, j] * x[j]
        x[i] = acc / LU[i, i]
    return x


@nb.njit(cache=True, nogil=True)
def _dense_solve_t(LU, piv, p, b):
    x = b.copy()
    for i in range(p):
        acc = x[i]
        for j in range(i):
            acc -= LU[j, i] * x[j]
        x[i] = acc / LU[i, i]
    for i in range(p - 1, -1, -1):
        acc = x[i]
        for j in range(i + 1, p):
            acc -= LU[j, i] * x[j]
        x[i] = acc
    for i in range(p - 1, -1, -1):
        t = x[piv[i]]
        x[piv[i]] = x[i]
        x[i] = t
    return x


# ---------------------------------------------------------------------------
# the iteration loop
# ---------------------------------------------------------------------------
@nb.njit(cache=True, nogil=True)
def _run(
    c, Rp, Ri, Rx, Cp, Ci, Cx,
    row_lo, row_hi, col_lo, col_hi,
    z, s, is_basic, is_tight,
    T0, S0, F,
    feas_tol, opt_tol, pivot_tol, max_border, max_iter, degenerate_switch,
    devex, wcol, wrow, y, d,
    counters, drift,
):
    m = row_lo.size
    n = col_lo.size
    k0 = T0.size

    row_pos = np.full(m, -1, np.int64)
    col_pos = np.full(n, -1, np.int64)
    for p in range(k0):
        row_pos[T0[p]] = p
        col_pos[S0[p]] = p
    row_alive = np.ones(k0, np.bool_)
    col_alive = np.ones(k0, np.bool_)
    row_eq = np.full(m, -1, np.int64)
    col_unk = np.full(n, -1, np.int64)

    # border unknowns: kind 0 added column, 1 dropped K0 row (unit B column)
    # border equations: kind 0 added row, 1 dropped K0 column (unit C row)
    cap = max_border + 2
    vcap = 1
    for j in range(n):
        vcap = max(vcap, Cp[j + 1] - Cp[j])
    for r in range(m):
        vcap = max(vcap, Rp[r + 1] - Rp[r])
    unk_kind = np.zeros(cap, np.int64)
    unk_id = np.zeros(cap, np.int64)
    eq_kind = np.zeros(cap, np.int64)
    eq_id = np.zeros(cap, np.int64)
    Bn = np.zeros(cap, np.int64)
    Bi = np.zeros((cap, vcap), np.int64)
    Bx = np.zeros((cap, vcap))
    Cn = np.zeros(cap, np.int64)
    Cidx = np.zeros((cap, vcap), np.int64)
    Cval = np.zeros((cap, vcap))
    W = np.zeros((cap, k0))
    Z = np.zeros((cap, k0))
    Sc = np.zeros((cap, cap))
    ScLU = np.zeros((cap, cap))
    piv = np.zeros(cap, np.int64)
    n_unk = 0
    n_eq = 0

    # exact duals for K0:  K0^T y = c_S; record how far the updated ones drifted
    y_new = np.zeros(m)
    d_new = c.copy()
    if k0:
        f = np.empty(k0)
        for q in range(k0):
            f[q] = c[S0[q]]
        y0 = _lu_solve_t(F, f)
        for q in range(k0):
            y_new[T0[q]] = y0[q]
    for r in range(m):
        if is_tight[r] and y_new[r] != 0.0:
            yr = y_new[r]
            for t in range(Rp[r], Rp[r + 1]):
                d_new[Ri[t]] -= Rx[t] * yr
    for j in range(n):
        if is_basic[j]:
            d_new[j] = 0.0
    if counters[_CNT_IT] > 0:
        for r in range(m):
            drift[0] = max(drift[0], abs(y_new[r] - y[r]))
        for j in range(n):
            drift[0] = max(drift[0], abs(d_new[j] - d[j]))
    y[:] = y_new
    d[:] = d_new

    dz = np.zeros(n)
    ds = np.zeros(m)
    touched = np.zeros(m, np.int64)
    mark = np.zeros(m, np.bool_)
    basic_cols = np.zeros(n, np.int64)
    alpha = np.zeros(n)
    amark = np.zeros(n, np.bool_)
    atouch = np.zeros(n, np.int64)
    cand_id = np.zeros(n + m, np.int64)
    cand_ex = np.zeros(n + m)
    cand_dv = np.zeros(n + m)
    # tight rows as an unordered list with back-pointers
    tight_list = np.zeros(m, np.int64)
    tight_at = np.full(m, -1, np.int64)
    n_tight = 0
    for r in range(m):
        if is_tight[r]:
            tight_list[n_tight] = r
            tight_at[r] = n_tight
            n_tight += 1

    while True:
        if counters[_CNT_IT] >= max_iter:
            return _ITER_LIMIT
        counters[_CNT_IT] += 1
        bland = counters[_CNT_BLAND] != 0
        p = n_unk

        # ---- pricing over nonbasic columns and tight-row slacks ----------
        kind = -1  # 0 column, 1 row slack
        q = -1
        best = -1.0
        for j in range(n):
            if is_basic[j]:
                continue
            dj = d[j]
            # nonbasic values sit exactly on a bound (or at the start
            # point), so exact comparisons decide the allowed direction
            if (dj > opt_tol and z[j] < col_hi[j]) or (dj < -opt_tol and z[j] > col_lo[j]):
                if bland:
                    kind = 0
                    q = j
                    break
                score = dj * dj / wcol[j] if devex else abs(dj)
                if score > best:
                    best = score
                    kind = 0
                    q = j
        if kind == -1 or not bland:
            for a in range(n_tight):
                r = tight_list[a]
                yr = y[r]
                if (yr > opt_tol and s[r] < row_hi[r]) or (yr < -opt_tol and s[r] > row_lo[r]):
                    if bland:
                        if kind == -1 or r < q:
                            kind = 1
                            q = r
                        continue
                    score = yr * yr / wrow[r] if devex else abs(yr)
                    if score > best:
                        best = score
                        kind = 1
                        q = r
        if kind == -1:
            return _OPTIMAL

        # ---- direction:  K dz_S = rhs  (dead K0 rows included in rhs) ----
        f = np.zeros(k0)
        g = np.zeros(p)
        if kind == 0:
            delta_q = d[q]
            sigma = 1.0 if delta_q > 0 else -1.0
            for t in range(Cp[q], Cp[q + 1]):
                r = Ci[t]
                if row_pos[r] >= 0:
                    f[row_pos[r]] = -sigma * Cx[t]
                elif row_eq[r] >= 0:
                    g[row_eq[r]] = -sigma * Cx[t]
            own = (col_hi[q] - z[q]) if sigma > 0 else (z[q] - col_lo[q])
        else:
            delta_q = y[q]
            sigma = 1.0 if delta_q > 0 else -1.0
            if row_pos[q] >= 0:
                f[row_pos[q]] = sigma
            else:
                g[row_eq[q]] = sigma
            own = (row_hi[q] - s[q]) if sigma > 0 else (s[q] - row_lo[q])

        x0p = _lu_solve(F, f) if k0 else f
        nb_ = 0
        if p:
            rhs = g.copy()
            for i in range(p):
                acc = 0.0
                for t in range(Cn[i]):
                    acc += Cval[i, t] * x0p[Cidx[i, t]]
                rhs[i] -= acc
            u = _dense_solve(ScLU, piv, p, rhs)
            x0 = x0p.copy()
            for j in range(p):
                uj = u[j]
                if uj != 0.0:
                    for t in range(k0):
                        x0[t] -= uj * W[j, t]
                if unk_kind[j] == 0:
                    col = unk_id[j]
                    dz[col] = uj
                    basic_cols[nb_] = col
                    nb_ += 1
        else:
            x0 = x0p
        for qq in range(k0):
            if col_alive[qq]:
                col = S0[qq]
                dz[col] = x0[qq]
                basic_cols[nb_] = col
                nb_ += 1
        if kind == 0:
            dz[q] = sigma

        # ---- row activity change ------------------------------------------
        # dense directions are scanned row by row instead of via a list
        work = 0
        for b_ in range(nb_):
            col = basic_cols[b_]
            if dz[col] != 0.0:
                work += Cp[col + 1] - Cp[col]
        dense = work > m // 4
        n_touch = 0
        for b_ in range(nb_ + (1 if kind == 0 else 0)):
            col = basic_cols[b_] if b_ < nb_ else q
            dc = dz[col]
            if dc == 0.0:
                continue
            if dense:
                for t in range(Cp[col], Cp[col + 1]):
                    ds[Ci[t]] += Cx[t] * dc
            else:
                for t in range(Cp[col], Cp[col + 1]):
                    r = Ci[t]
                    if not mark[r]:
                        mark[r] = True
                        touched[n_touch] = r
                        n_touch += 1
                    ds[r] += Cx[t] * dc
        n_scan = m if dense else n_touch

        # ---- Harris two-pass ratio test -----------------------------------
        # pass 1 finds the relaxed step and keeps every entry whose exact
        # ratio was within the running bound; pass 2 only revisits those.
        # Pivots are judged relative to the size of the direction, whose
        # entries carry rounding error proportional to it.
        scale = 1.0
        for b_ in range(nb_):
            a_ = abs(dz[basic_cols[b_]])
            if a_ > scale:
                scale = a_
        ptol = pivot_tol * scale
        theta_max = own
        n_cand = 0
        for b_ in range(nb_):
            col = basic_cols[b_]
            dv = dz[col]
            if dv > ptol:
                room = col_hi[col] - z[col]
                rr = (room + feas_tol) / dv
            elif dv < -ptol:
                room = col_lo[col] - z[col]
                rr = (room - feas_tol) / dv
            else:
                continue
            if rr < theta_max:
                theta_max = rr
            ex = room / dv
            if ex <= theta_max:
                cand_id[n_cand] = col
                cand_ex[n_cand] = ex
                cand_dv[n_cand] = dv
                n_cand += 1
        for t in range(n_scan):
            r = t if dense else touched[t]
            dv = ds[r]
            if dv > ptol:
                if is_tight[r]:
                    continue
                room = row_hi[r] - s[r]
                rr = (room + feas_tol) / dv
            elif dv < -ptol:
                if is_tight[r]:
                    continue
                room = row_lo[r] - s[r]
                rr = (room - feas_tol) / dv
            else:
                continue
            if rr < theta_max:
                theta_max = rr
            ex = room / dv
            if ex <= theta_max:
                cand_id[n_cand] = n + r
                cand_ex[n_cand] = ex
                cand_dv[n_cand] = dv
                n_cand += 1
        if not np.isfinite(theta_max):
            return _SINGULAR

        leave_kind = -1  # 0 basic column, 1 row slack
        leave = -1
        leave_up = False
        leave_dv = 0.0
        best_piv = 0.0
        best_key = n + m + 1
        theta = own
        min_exact = np.inf
        for a in range(n_cand):
            ex = cand_ex[a]
            if ex > theta_max:
                continue
            if ex < min_exact:
                min_exact = ex
            key = cand_id[a]
            dv = cand_dv[a]
            better = (key < best_key) if bland else (abs(dv) > best_piv)
            if better:
                best_piv = abs(dv)
                best_key = key
                if key < n:
                    leave_kind = 0
                    leave = key
                else:
                    leave_kind = 1
                    leave = key - n
                leave_up = dv > 0
                leave_dv = dv
                theta = ex
        if leave_kind == -1 or own <= min_exact:
            leave_kind = -1
            theta = own
        if theta < 0.0:
            theta = 0.0

        # ---- step -------------------------------------------------------
        for b_ in range(nb_):
            col = basic_cols[b_]
            z[col] += theta * dz[col]
            dz[col] = 0.0
        if kind == 0:
            z[q] += theta * sigma
            dz[q] = 0.0
        if dense:
            for r in range(m):
                dv = ds[r]
                if dv != 0.0:
                    if not is_tight[r]:
                        s[r] += theta * dv
                    ds[r] = 0.0
        else:
            for t in range(n_touch):
                r = touched[t]
                if not is_tight[r]:
                    s[r] += theta * ds[r]
                ds[r] = 0.0
                mark[r] = False
        if kind == 1:
            s[q] += theta * sigma

        if theta <= 1e-14:
            counters[_CNT_DEG] += 1
            counters[_CNT_RUN] += 1
            if counters[_CNT_RUN] >= degenerate_switch:
                counters[_CNT_BLAND] = 1
        else:
            counters[_CNT_RUN] = 0
            counters[_CNT_BLAND] = 0

        if leave_kind == -1:
            counters[_CNT_FLIP] += 1
            if kind == 0:
                z[q] = col_hi[q] if sigma > 0 else col_lo[q]
            else:
                s[q] = row_hi[q] if sigma > 0 else row_lo[q]
            continue

        # ---- pivot row:  rho = K^{-T} e_leave  (dead K0 cols included) ----
        counters[_CNT_PIV] += 1
        f = np.zeros(k0)
        g = np.zeros(p)
        if leave_kind == 0:
            if col_pos[leave] >= 0:
                f[col_pos[leave]] = 1.0
            else:
                g[col_unk[leave]] = 1.0
        else:
            for t in range(Rp[leave], Rp[leave + 1]):
                col = Ri[t]
                if col_pos[col] >= 0:
                    f[col_pos[col]] = Rx[t]
                elif col_unk[col] >= 0:
                    g[col_unk[col]] = Rx[t]
        y0p = _lu_solve_t(F, f) if k0 else f
        if p:
            rhs = g.copy()
            for j in range(p):
                acc = 0.0
                for t in range(Bn[j]):
                    acc += Bx[j, t] * y0p[Bi[j, t]]
                rhs[j] -= acc
            v = _dense_solve_t(ScLU, piv, p, rhs)
            y0 = y0p.copy()
            for i in range(p):
                vi = v[i]
                if vi != 0.0:
                    for t in range(k0):
                        y0[t] -= vi * Z[i, t]
        else:
            v = g
            y0 = y0p

        # alpha_j: change of the leaving variable per unit step of nonbasic j
        # (rate for a tight slack t is rho_t itself)
        alpha_q = leave_dv * sigma

        # the pivot seen by the direction and by the pivot row must agree;
        # if not, the border has lost accuracy and we refactor before the
        # basis change (the step already taken keeps z and s consistent)
        if kind == 0:
            check = 0.0
            for t in range(Cp[q], Cp[q + 1]):
                r = Ci[t]
                if leave_kind == 1 and r == leave:
                    check += Cx[t]
                pos = row_pos[r]
                if pos >= 0 and row_alive[pos]:
                    check -= y0[pos] * Cx[t]
                elif row_eq[r] >= 0:
                    check -= v[row_eq[r]] * Cx[t]
        else:
            pos = row_pos[q]
            if pos >= 0 and row_alive[pos]:
                check = y0[pos]
            else:
                check = v[row_eq[q]]
        if abs(check - alpha_q) > 1e-9 * (1.0 + abs(alpha_q)) + 1e-3 * abs(alpha_q):
            return _SINGULAR
        theta_d = delta_q / alpha_q
        w_q = wcol[q] if kind == 0 else wrow[q]
        reset = False
        n_at = 0
        if leave_kind == 1:
            for t in range(Rp[leave], Rp[leave + 1]):
                col = Ri[t]
                if not amark[col]:
                    amark[col] = True
                    atouch[n_at] = col
                    n_at += 1
                alpha[col] += Rx[t]
        for e in range(k0 + p):
            if e < k0:
                if not row_alive[e]:
                    continue
                r = T0[e]
                rho = y0[e]
            else:
                i = e - k0
                if eq_kind[i] != 0:
                    continue
                r = eq_id[i]
                rho = v[i]
            if rho == 0.0:
                continue
            y[r] -= theta_d * rho
            if devex and not (kind == 1 and r == q):
                ratio = rho / alpha_q
                cand = ratio * ratio * w_q
                if cand > wrow[r]:
                    wrow[r] = cand
                    if cand > _DEVEX_RESET:
                        reset = True
            for t in range(Rp[r], Rp[r + 1]):
                col = Ri[t]
                if not amark[col]:
                    amark[col] = True
                    atouch[n_at] = col
                    n_at += 1
                alpha[col] -= Rx[t] * rho
        for a in range(n_at):
            col = atouch[a]
            al = alpha[col]
            alpha[col] = 0.0
            amark[col] = False
            if is_basic[col] or al == 0.0:
                continue
            d[col] -= theta_d * al
            if devex and not (kind == 0 and col == q):
                ratio = al / alpha_q
                cand = ratio * ratio * w_q
                if cand > wcol[col]:
                    wcol[col] = cand
                    if cand > _DEVEX_RESET:
                        reset = True

        # ---- basis change -------------------------------------------------
        wl = w_q / (alpha_q * alpha_q)
        if wl < 1.0:
            wl = 1.0
        if devex and wl > _DEVEX_RESET:
            wl = 1.0
            reset = True
        if devex and reset:
            # restart the reference framework once weights lose meaning
            wcol[:] = 1.0
            wrow[:] = 1.0
            reset = False
        if leave_kind == 0:
            z[leave] = col_hi[leave] if leave_up else col_lo[leave]
            is_basic[leave] = False
            d[leave] = theta_d
            wcol[leave] = wl
        else:
            s[leave] = row_hi[leave] if leave_up else row_lo[leave]
            is_tight[leave] = True
            tight_list[n_tight] = leave
            tight_at[leave] = n_tight
            n_tight += 1
            y[leave] = theta_d
            wrow[leave] = wl
        if kind == 0:
            is_basic[q] = True
            d[q] = 0.0
        else:
            is_tight[q] = False
            y[q] = 0.0
            a = tight_at[q]
            n_tight -= 1
            tight_list[a] = tight_list[n_tight]
            tight_at[tight_list[a]] = a
            tight_at[q] = -1

        # ---- border edits: leaving variable first, then entering ----------
        if leave_kind == 0:
            # basic column leaves: drop a border unknown or pin a K0 column
            j = col_unk[leave]
            if j >= 0:
                _drop_unk(j, n_unk, unk_kind, unk_id, Bn, Bi, Bx, W, Sc, col_unk)
                n_unk -= 1
            else:
                pos = col_pos[leave]
                col_alive[pos] = False
                i = n_eq
                eq_kind[i] = 1
                eq_id[i] = leave
                Cidx[i, 0] = pos
                Cval[i, 0] = 1.0
                Cn[i] = 1
                Z[i, :] = y0p
                _fill_eq_row(i, n_unk, unk_kind, unk_id, eq_kind, eq_id, Bn, Bi, Bx,
                             Z, Sc, Rp, Ri, Rx)
                n_eq += 1
        else:
            # a row turns tight: revive a dropped K0 row or add an equation
            pos = row_pos[leave]
            if pos >= 0:
                row_alive[pos] = True
                j = -1
                for jj in range(n_unk):
                    if unk_kind[jj] == 1 and unk_id[jj] == leave:
                        j = jj
                _drop_unk(j, n_unk, unk_kind, unk_id, Bn, Bi, Bx, W, Sc, col_unk)
                n_unk -= 1
            else:
                i = n_eq
                eq_kind[i] = 0
                eq_id[i] = leave
                cnt = 0
                for t in range(Rp[leave], Rp[leave + 1]):
                    col = Ri[t]
                    if col_pos[col] >= 0:
                        Cidx[i, cnt] = col_pos[col]
                        Cval[i, cnt] = Rx[t]
                        cnt += 1
                Cn[i] = cnt
                row_eq[leave] = i
                Z[i, :] = y0p
                _fill_eq_row(i, n_unk, unk_kind, unk_id, eq_kind, eq_id, Bn, Bi, Bx,
                             Z, Sc, Rp, Ri, Rx)
                n_eq += 1

        if kind == 0:
            # column enters: revive a pinned K0 column or add an unknown
            pos = col_pos[q]
            if pos >= 0:
                col_alive[pos] = True
                i = -1
                for ii in range(n_eq):
                    if eq_kind[ii] == 1 and eq_id[ii] == q:
                        i = ii
                _drop_eq(i, n_eq, eq_kind, eq_id, Cn, Cidx, Cval, Z, Sc, row_eq)
                n_eq -= 1
            else:
                j = n_unk
                unk_kind[j] = 0
                unk_id[j] = q
                cnt = 0
                for t in range(Cp[q], Cp[q + 1]):
                    r = Ci[t]
                    if row_pos[r] >= 0:
                        Bi[j, cnt] = row_pos[r]
                        Bx[j, cnt] = Cx[t]
                        cnt += 1
                Bn[j] = cnt
                col_unk[q] = j
                for t in range(k0):
                    W[j, t] = -sigma * x0p[t]
                _fill_unk_col(j, n_eq, unk_kind, unk_id, eq_kind, eq_id, Cn, Cidx, Cval,
                              W, Sc, Rp, Ri, Rx)
                n_unk += 1
        else:
            # a row turns loose: drop its equation or free a K0 row
            i = row_eq[q]
            if i >= 0:
                _drop_eq(i, n_eq, eq_kind, eq_id, Cn, Cidx, Cval, Z, Sc, row_eq)
                n_eq -= 1
            else:
                pos = row_pos[q]
                row_alive[pos] = False
                j = n_unk
                unk_kind[j] = 1
                unk_id[j] = q
                Bi[j, 0] = pos
                Bx[j, 0] = 1.0
                Bn[j] = 1
                for t in range(k0):
                    W[j, t] = sigma * x0p[t]
                _fill_unk_col(j, n_eq, unk_kind, unk_id, eq_kind, eq_id, Cn, Cidx, Cval,
                              W, Sc, Rp, Ri, Rx)
                n_unk += 1

        if n_unk != n_eq:
            return _SINGULAR
        if n_unk >= max_border:
            return _BORDER_FULL
        if n_unk:
            smallest = _dense_lu(Sc, n_unk, ScLU, piv)
            if not smallest > 1e-11:
                return _BORDER_FULL


@nb.njit(cache=True, nogil=True)
def _entry(Rp, Ri, Rx, r, col):
    for t in range(Rp[r], Rp[r + 1]):
        if Ri[t] == col:
            return Rx[t]
    return 0.0


@nb.njit(cache=True, nogil=True)
def _fill_unk_col(j, n_eq, unk_kind, unk_id, eq_kind, eq_id, Cn, Cidx, Cval, W, Sc,
                  Rp, Ri, Rx):
    # Sc[:, j] = D[:, j] - C K0^{-1} b_j
    for i in range(n_eq):
        acc = 0.0
        for t in range(Cn[i]):
            acc += Cval[i, t] * W[j, Cidx[i, t]]
        dij = 0.0
        if unk_kind[j] == 0 and eq_kind[i] == 0:
            dij = _entry(Rp, Ri, Rx, eq_id[i], unk_id[j])
        Sc[i, j] = dij - acc


@nb.njit(cache=True, nogil=True)
def _fill_eq_row(i, n_unk, unk_kind, unk_id, eq_kind, eq_id, Bn, Bi, Bx, Z, Sc,
                 Rp, Ri, Rx):
    # Sc[i, :] = D[i, :] - (K0^{-T} c_i)^T B
    for j in range(n_unk):
        acc = 0.0
        for t in range(Bn[j]):
            acc += Z[i, Bi[j, t]] * Bx[j, t]
        dij = 0.0
        if unk_kind[j] == 0 and eq_kind[i] == 0:
            dij = _entry(Rp, Ri, Rx, eq_id[i], unk_id[j])
        Sc[i, j] = dij - acc


@nb.njit(cache=True, nogil=True)
def _drop_unk(j, n_unk, unk_kind, unk_id, Bn, Bi, Bx, W, Sc, col_unk):
    last = n_unk - 1
    if unk_kind[j] == 0:
        col_unk[unk_id[j]] = -1
    if j != last:
        unk_kind[j] = unk_kind[last]
        unk_id[j] = unk_id[last]
        Bn[j] = Bn[last]
        Bi[j, :] = Bi[last, :]
        Bx[j, :] = Bx[last, :]
        W[j, :] = W[last, :]
        Sc[:, j] = Sc[:, last]
        if unk_kind[j] == 0:
            col_unk[unk_id[j]] = j
    Sc[:, last] = 0.0


@nb.njit(cache=True, nogil=True)
def _drop_eq(i, n_eq, eq_kind, eq_id, Cn, Cidx, Cval, Z, Sc, row_eq):
    last = n_eq - 1
    if eq_kind[i] == 0:
        row_eq[eq_id[i]] = -1
    if i != last:
        eq_kind[i] = eq_kind[last]
        eq_id[i] = eq_id[last]
        Cn[i] = Cn[last]
        Cidx[i, :] = Cidx[last, :]
        Cval[i, :] = Cval[last, :]
        Z[i, :] = Z[last, :]
        Sc[i, :] = Sc[last, :]
        if eq_kind[i] == 0:
            row_eq[eq_id[i]] = i
    Sc[last, :] = 0.0


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------
class _Factor:
    """SuperLU factors of R[rows, cols] in the layout the compiled loop reads."""

    def __init__(self, R_csr, rows, cols):
        self.rows = rows
        self.cols = cols
        k = rows.size
        if k == 0:
            e = np.zeros(1, np.int64)
            ef = np.ones(1)
            self.arrays = (e, e, ef, ef, e, e, ef, ef, e, e)
            self.lu = None
            return
        K = R_csr[rows][:, cols].tocsc()
        self.K = K
        try:
            lu = splu(K, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SimplexError(f"singular kernel: {exc}") from exc
        Lp, Li, Lx, Linv = _split_diag(lu.L, lower=True)
        Up, Ui, Ux, Uinv = _split_diag(lu.U, lower=False)
        if not np.all(np.isfinite(Uinv)) or np.abs(Uinv).max() * max(
            1.0, np.abs(lu.U.data).max()
        ) >= 1e13:
            raise SimplexError("numerically singular kernel")
        self.lu = lu
        self.arrays = (
            Lp, Li, Lx, Linv, Up, Ui, Ux, Uinv,
            lu.perm_r.astype(np.int64), lu.perm_c.astype(np.int64),
        )

    def solve(self, b, trans=False, refine=0):
        """Solve with K (or K^T), optionally with iterative refinement."""
        if self.lu is None:
            return np.zeros(0)
        t = "T" if trans else "N"
        x = self.lu.solve(b, trans=t)
        A = self.K.T if trans else self.K
        for _ in range(refine):
            r = b - A @ x
            x = x + self.lu.solve(r, trans=t)
        return x


def _split_diag(M, lower):
    """Strict triangle of M in CSC plus the inverted diagonal."""
    M = M.tocoo()
    k = M.shape[0]
    on = M.row == M.col
    diag = np.zeros(k)
    diag[M.col[on]] = M.data[on]
    if np.any(diag == 0.0):
        raise SimplexError("structurally singular kernel")
    keep = (M.row > M.col) if lower else (M.row < M.col)
    S = sp.csc_matrix((M.data[keep], (M.row[keep], M.col[keep])), shape=M.shape)
    S.sort_indices()
    return S.indptr.astype(np.int64), S.indices.astype(np.int64), S.data, 1.0 / diag


def solve_bounded_lp(
    c,
    R,
    row_lo,
    row_hi,
    col_lo,
    col_hi,
    x0=None,
    feas_tol=1e-9,
    opt_tol=1e-9,
    pivot_tol=1e-7,
    max_iter=None,
    max_border=48,
    degenerate_switch=50,
    pricing="dantzig",
):
    """Maximize ``c @ z`` over a box intersected with ranged rows.

    The start point ``x0`` (default zeros) must satisfy every bound.  All
    slacks start basic and every column starts nonbasic at its ``x0`` value,
    so no phase one is needed.

    ``pricing`` is ``"dantzig"`` (largest reduced cost) or ``"devex"``
    (reduced cost scaled by an approximate reference-framework edge norm).
    The ratio test is Harris two-pass.  After ``degenerate_switch``
    consecutive zero-length steps both choices fall back to Bland's
    smallest-index rule until a step makes progress.

    The returned ``gap`` compares the primal objective with the weak-duality
    bound implied by the final duals, so it certifies optimality without
    trusting the basis bookkeeping.
    """
    if pricing not in PRICING_RULES:
        raise ValueError(f"unknown pricing rule {pricing!r}")
    c = np.ascontiguousarray(c, dtype=float)
    R_csr = sp.csr_matrix(R, dtype=float)
    R_csr.sum_duplicates()
    R_csr.sort_indices()
    R_csc = R_csr.tocsc()
    R_csc.sort_indices()
    m, n = R_csr.shape
    row_lo = np.ascontiguousarray(row_lo, dtype=float)
    row_hi = np.ascontiguousarray(row_hi, dtype=float)
    col_lo = np.ascontiguousarray(col_lo, dtype=float)
    col_hi = np.ascontiguousarray(col_hi, dtype=float)
    if c.shape != (n,) or row_lo.shape != (m,) or row_hi.shape != (m,):
        raise ValueError("inconsistent LP dimensions")
    if col_lo.shape != (n,) or col_hi.shape != (n,):
        raise ValueError("inconsistent LP dimensions")
    if max_iter is None:
        max_iter = 20 * (n + m) + 1000

    z = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if np.any(z < col_lo - feas_tol) or np.any(z > col_hi + feas_tol):
        raise ValueError("start point violates column bounds")
    s = R_csr @ z
    if np.any(s < row_lo - feas_tol) or np.any(s > row_hi + feas_tol):
        raise ValueError("start point violates row bounds")

    csr = (R_csr.indptr.astype(np.int64), R_csr.indices.astype(np.int64), R_csr.data)
    csc = (R_csc.indptr.astype(np.int64), R_csc.indices.astype(np.int64), R_csc.data)
    is_basic = np.zeros(n, dtype=np.bool_)
    is_tight = np.zeros(m, dtype=np.bool_)
    wcol = np.ones(n)
    wrow = np.ones(m)
    y_run = np.zeros(m)
    d_run = np.zeros(n)
    drift = np.zeros(1)
    counters = np.zeros(6, dtype=np.int64)
    n_refactor = 0
    retries = 0
    code = _ITER_LIMIT
    confirms = 0

    while True:
        it_start = counters[_CNT_IT]
        rows = np.flatnonzero(is_tight)
        cols = np.flatnonzero(is_basic)
        fac = _Factor(R_csr, rows, cols)
        n_refactor += 1
        z, s = _resync(fac, R_csr, z, s, is_basic, is_tight)
        code = _run(
            c, *csr, *csc, row_lo, row_hi, col_lo, col_hi,
            z, s, is_basic, is_tight, rows, cols, fac.arrays,
            feas_tol, opt_tol, pivot_tol, max_border, max_iter, degenerate_switch,
            pricing == "devex", wcol, wrow, y_run, d_run,
            counters, drift,
        )
        if code == _BORDER_FULL:
            continue
        if code == _SINGULAR:
            # a breakdown right after refactoring means the pivot itself is
            # unreliable: demand larger pivots from here on
            if counters[_CNT_IT] - it_start <= 1:
                retries += 1
                pivot_tol *= 10.0
                logger.debug("simplex breakdown, pivot tolerance raised to %g", pivot_tol)
            else:
                retries = 0
            if retries > 4:
                raise SimplexError("repeated numerical breakdown in the simplex")
            continue
        if code == _OPTIMAL and counters[_CNT_IT] != it_start and confirms < 5:
            # optimality was judged on updated reduced costs; confirm it
            # from a fresh factorization before accepting
            confirms += 1
            continue
        break

    rows = np.flatnonzero(is_tight)
    cols = np.flatnonzero(is_basic)
    fac = _Factor(R_csr, rows, cols)
    z, s = _resync(fac, R_csr, z, s, is_basic, is_tight, refine=2)
    y = np.zeros(m)
    if rows.size:
        y[rows] = fac.solve(c[cols], trans=True, refine=2)
    d = c - R_csc.T @ y
    activity = R_csr @ z
    residual = max(
        float(np.max(np.maximum(activity - row_hi, row_lo - activity), initial=0.0)),
        float(np.max(np.maximum(z - col_hi, col_lo - z), initial=0.0)),
    )
    primal = float(c @ z)
    dual = float(
        np.sum(np.where(y > 0, y * row_hi, y * row_lo))
        + np.sum(np.where(d > 0, d * col_hi, d * col_lo))
    )
    gap = (dual - primal) / max(1.0, abs(primal))
    status = OPTIMAL if code == _OPTIMAL else ITERATION_LIMIT
    stats = {
        "pivots": int(counters[_CNT_PIV]),
        "flips": int(counters[_CNT_FLIP]),
        "degenerate": int(counters[_CNT_DEG]),
        "refactors": n_refactor,
        "kernel_size": int(cols.size),
        "dual_drift": float(drift[0]),
    }
    logger.debug("simplex %s after %d iterations %s", status, counters[_CNT_IT], stats)
    return SimplexResult(
        status=status,
        x=z,
        objective=primal,
        duals=y,
        reduced_costs=d,
        iterations=int(counters[_CNT_IT]),
        primal_residual=residual,
        dual_bound=dual,
        gap=gap,
        stats=stats,
    )


def _resync(fac, R_csr, z, s, is_basic, is_tight, refine=0):
    """Recompute basic values from the nonbasic ones to stop drift."""
    z = z.copy()
    if fac.rows.size:
        zN = np.where(is_basic, 0.0, z)
        rhs = s[fac.rows] - R_csr[fac.rows] @ zN
        z[fac.cols] = fac.solve(rhs, refine=refine)
    s_new = R_csr @ z
    s_new[is_tight] = s[is_tight]
    return z, s_new
