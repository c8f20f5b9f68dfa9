"""Dense log-barrier interior-point solver and an alternating-optimisation driver.

Problems are small (a dozen variables at most) but the tracking loop solves
hundreds of independent instances per epoch, so everything here is batched:
a :class:`ConvexProblem` describes ``batch`` instances that share a dimension
and a constraint layout.

Callback protocol
-----------------
Objective and concave-constraint callbacks are called as ``fn(x, idx, order)``
where ``x`` has shape ``(k, dim)`` and ``idx`` holds the batch indices of those
``k`` rows (use it to pick per-instance data). They return
``(value, grad, hess)`` with shapes ``(k,)``, ``(k, dim)``, ``(k, dim, dim)``;
with ``order=0`` the derivatives may be ``None``.
"""

from __future__ import annotations

import copy
import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import nnls

log = logging.getLogger(__name__)

KKT_TOL = 1e-6
AUDIT_TOL = 1e-8
WEAK_TOL = 1e-9


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"


class NonMonotoneError(RuntimeError):
    """An alternating-optimisation half-step made the objective materially worse."""


Callback = Callable[[np.ndarray, np.ndarray, int], tuple]


def _batched(arr, batch, ndim):
    """Broadcast a shared array to a leading batch axis."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == ndim:
        return np.broadcast_to(arr, (batch,) + arr.shape)
    if arr.ndim == ndim + 1 and arr.shape[0] == batch:
        return arr
    raise ValueError(f"expected shape with {ndim} dims or a leading batch of {batch}, got {arr.shape}")


@dataclass
class ConvexProblem:
    """``minimize f(x)`` s.t. ``A x = c``, ``G x <= h``, ``g_j(x) >= 0``, ``lower <= x <= upper``.

    ``G``/``h`` is an extension beyond pure boxes that epigraph reformulations need.
    Any of ``c``, ``h``, ``lower``, ``upper`` (and ``A``, ``G``) may carry a
    leading batch axis.
    """

    dim: int
    objective: Callback
    linear_eq: tuple | None = None
    concave_ineq: Sequence[Callback] = ()
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    linear_ineq: tuple | None = None
    batch: int = 1

    def __post_init__(self):
        n, B = self.dim, self.batch
        lo = np.full(n, -np.inf) if self.lower is None else self.lower
        hi = np.full(n, np.inf) if self.upper is None else self.upper
        self.lower = np.array(_batched(lo, B, 1))
        self.upper = np.array(_batched(hi, B, 1))
        if np.any(self.lower >= self.upper):
            raise ValueError("box: lower must be < upper componentwise")
        if self.linear_eq is None:
            self.A = np.zeros((B, 0, n))
            self.c = np.zeros((B, 0))
            self.eq_inconsistent = np.zeros(B, bool)
        else:
            A, c = self.linear_eq
            self.A, self.c, self.eq_inconsistent = _reduce_rows(np.asarray(A, float), np.asarray(c, float), B)
        if self.linear_ineq is None:
            self.G = np.zeros((B, 0, n))
            self.h = np.zeros((B, 0))
        else:
            G, h = self.linear_ineq
            self.G = np.array(_batched(G, B, 2))
            self.h = np.array(_batched(h, B, 1))
        self.concave_ineq = tuple(self.concave_ineq)
        self.finite_lo = np.isfinite(self.lower)
        self.finite_hi = np.isfinite(self.upper)

    @property
    def n_linear_slacks(self):
        return 2 * self.dim + self.G.shape[1]

    @property
    def has_inequalities(self):
        return bool(self.finite_lo.any() or self.finite_hi.any() or self.G.shape[1] or self.concave_ineq)


def _reduce_rows(A, c, B):
    """Drop linearly dependent equality rows (shared A only); batched A must be full rank.

    Also returns a per-row flag for right-hand sides outside the range of ``A``.
    """
    bad = np.zeros(B, bool)
    if A.ndim == 2:
        A = A.reshape(-1, A.shape[-1]) if A.size else np.zeros((0, A.shape[-1]))
        c = _batched(c, B, 1)
        if A.shape[0]:
            u, sv, vt = np.linalg.svd(A, full_matrices=False)
            rank = int(np.sum(sv > sv[0] * 1e-12)) if sv.size else 0
            if rank < A.shape[0]:
                ur = u[:, :rank]
                lost = c - np.einsum("mk,bk->bm", ur, np.einsum("mk,bm->bk", ur, c))
                bad = np.abs(lost).max(axis=1) > 1e-9 * np.maximum(1.0, np.abs(c).max(axis=1))
                # Work in the row space; rows of u' A = S V give an equivalent full-rank system.
                c = np.einsum("mk,bm->bk", ur, c)
                A = sv[:rank, None] * vt[:rank]
        return np.array(np.broadcast_to(A, (B,) + A.shape)), np.array(c), bad
    A = _batched(A, B, 2)
    if A.shape[1] and np.any(np.linalg.matrix_rank(A) < A.shape[1]):
        raise ValueError("linear_eq: batched A must have full row rank")
    return np.array(A), np.array(_batched(c, B, 1)), bad


@dataclass
class Multipliers:
    """``lam`` is ordered [lower box, upper box, G rows, concave]; ``nu`` for equalities."""

    lam: np.ndarray
    nu: np.ndarray


@dataclass
class SolverReport:
    x_star: np.ndarray
    objective: float
    kkt_residual: float
    status: Status
    iterations: int
    barrier_mu_final: float
    multipliers: Multipliers | None = None
    stage: str = "phase2"

    @property
    def ok(self):
        return self.status is Status.OPTIMAL


@dataclass
class BatchReport:
    x_star: np.ndarray
    objective: np.ndarray
    kkt_residual: np.ndarray
    status: np.ndarray
    iterations: np.ndarray
    barrier_mu_final: float
    lam: np.ndarray
    nu: np.ndarray
    stage: np.ndarray
    audit: np.ndarray = field(default=None)

    @property
    def optimal(self):
        return np.array([s is Status.OPTIMAL for s in self.status])

    @property
    def infeasible(self):
        return np.array([s is Status.INFEASIBLE for s in self.status])

    def __len__(self):
        return len(self.status)

    def report(self, i):
        return SolverReport(
            self.x_star[i].copy(), float(self.objective[i]), float(self.kkt_residual[i]),
            self.status[i], int(self.iterations[i]), self.barrier_mu_final,
            Multipliers(self.lam[i].copy(), self.nu[i].copy()), str(self.stage[i]),
        )


class _View:
    """Barrier ingredients for phase II or one of the elastic phase-I stages.

    In phase-I mode the last coordinate is the elastic variable ``e``; it is
    added to the slacks selected by ``emask`` and the objective is ``e`` itself.
    """

    def __init__(self, prob, mode):
        self.p = prob
        self.mode = mode
        self.use_concave = mode != "phase1a"
        self.elastic = mode != "phase2"
        n = prob.dim
        self.n = n + 1 if self.elastic else n
        m = prob.A.shape[1]
        if self.elastic:
            self.A = np.concatenate([prob.A, np.zeros((prob.batch, m, 1))], axis=2)
        else:
            self.A = prob.A
        self.c = prob.c
        nl = prob.n_linear_slacks
        nc = len(prob.concave_ineq) if self.use_concave else 0
        self.K = nl + nc
        finite = np.concatenate(
            [prob.finite_lo, prob.finite_hi, np.ones((prob.batch, prob.G.shape[1]), bool)], axis=1
        )
        self.finite = np.concatenate([finite, np.ones((prob.batch, nc), bool)], axis=1)
        if mode == "phase1a":
            self.emask = finite.astype(float)
        elif mode == "phase1b":
            self.emask = np.concatenate([np.zeros_like(finite, float), np.ones((prob.batch, nc))], axis=1)
        else:
            self.emask = None

    def slacks(self, z, idx, order):
        p = self.p
        n = p.dim
        x = z[:, :n]
        k = x.shape[0]
        lo, hi = p.lower[idx], p.upper[idx]
        flo, fhi = p.finite_lo[idx], p.finite_hi[idx]
        s_lo = np.where(flo, x - np.where(flo, lo, 0.0), 1.0)
        s_hi = np.where(fhi, np.where(fhi, hi, 0.0) - x, 1.0)
        G, h = p.G[idx], p.h[idx]
        s_g = h - np.einsum("bkn,bn->bk", G, x)
        parts = [s_lo, s_hi, s_g]
        conc = []
        if self.use_concave:
            for fn in p.concave_ineq:
                val, gr, he = fn(x, idx, order)
                parts.append(np.asarray(val, float)[:, None])
                conc.append((gr, he))
        s = np.concatenate(parts, axis=1)
        if self.elastic:
            s = s + self.emask[idx] * z[:, n:n + 1]
        if order == 0:
            return s, None, None
        eye = np.broadcast_to(np.eye(n), (k, n, n))
        J = np.concatenate(
            [eye * flo[:, :, None], -eye * fhi[:, :, None], -G]
            + [np.asarray(gr, float)[:, None, :] for gr, _ in conc],
            axis=1,
        )
        if self.elastic:
            J = np.concatenate([J, self.emask[idx][:, :, None]], axis=2)
        hess = [np.asarray(he, float) for _, he in conc]
        if self.elastic:
            hess = [np.pad(he, ((0, 0), (0, 1), (0, 1))) for he in hess]
        return s, J, hess

    def objective(self, z, idx, order):
        if self.elastic:
            k = z.shape[0]
            val = z[:, -1].copy()
            if order == 0:
                return val, None, None
            g = np.zeros((k, self.n))
            g[:, -1] = 1.0
            return val, g, np.zeros((k, self.n, self.n))
        val, g, H = self.p.objective(z, idx, order)
        val = np.asarray(val, float)
        if order == 0:
            return val, None, None
        return val, np.asarray(g, float), np.asarray(H, float)

    def merit(self, z, idx, mu, order):
        f, gf, Hf = self.objective(z, idx, order)
        s, J, hc = self.slacks(z, idx, order)
        fin = self.finite[idx]
        with np.errstate(all="ignore"):
            feasible = np.all((s > 0) | ~fin, axis=1) & np.isfinite(f) & np.all(np.isfinite(s), axis=1)
            logs = np.where(fin, np.log(np.where(s > 0, s, 1.0)), 0.0)
        psi = f - mu * logs.sum(axis=1)
        if order == 0:
            return psi, feasible, None, None, s
        inv = np.where(fin, 1.0 / s, 0.0)
        grad = gf - mu * np.einsum("bkn,bk->bn", J, inv)
        H = Hf + mu * np.einsum("bkn,bk,bkm->bnm", J, inv**2, J)
        nl = self.K - len(hc)
        for j, he in enumerate(hc):
            H = H - mu * he * inv[:, nl + j, None, None]
        return psi, feasible, grad, H, s


def _newton_dir(H, grad, A, r, shift=0.0):
    k, n = grad.shape
    m = A.shape[1]
    if shift:
        # Levenberg shift: phase I has no curvature along directions the active slacks ignore.
        scale = np.maximum(1.0, np.abs(np.diagonal(H, axis1=1, axis2=2)).max(axis=1))
        H = H + shift * scale[:, None, None] * np.eye(n)
    if m == 0:
        M, rhs = H, -grad
    else:
        M = np.zeros((k, n + m, n + m))
        M[:, :n, :n] = H
        M[:, :n, n:] = np.transpose(A, (0, 2, 1))
        M[:, n:, :n] = A
        rhs = np.concatenate([-grad, r], axis=1)
    # Diagonal scaling keeps the KKT matrix well conditioned when barrier terms blow up.
    d = np.sqrt(np.abs(np.diagonal(M, axis1=1, axis2=2)))
    d = np.where(d > 1e-300, d, 1.0)
    Ms = M / d[:, :, None] / d[:, None, :]
    ok = np.ones(k, bool)
    try:
        sol = np.linalg.solve(Ms, (rhs / d)[..., None])[..., 0]
    except np.linalg.LinAlgError:
        sol = np.zeros_like(rhs)
        for i in range(k):
            try:
                sol[i] = np.linalg.solve(Ms[i], rhs[i] / d[i])
            except np.linalg.LinAlgError:
                sol[i] = np.linalg.lstsq(Ms[i], rhs[i] / d[i], rcond=None)[0]
                ok[i] = False
    sol = sol / d
    return sol[:, :n], sol[:, n:], ok


def _fraction_to_boundary(view, z, dz, idx):
    """Largest step keeping the linear slacks positive (concave ones are checked by evaluation)."""
    p = view.p
    nl = p.n_linear_slacks
    s, J, _ = _linear_part(view, z, idx)
    ds = np.einsum("bkn,bn->bk", J, dz)
    fin = view.finite[idx][:, :nl]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where((ds < 0) & fin, -s / ds, np.inf)
    return np.minimum(1.0, 0.99 * ratio.min(axis=1)) if ratio.size else np.ones(len(z))


def _linear_part(view, z, idx):
    p = view.p
    n = p.dim
    x = z[:, :n]
    k = x.shape[0]
    flo, fhi = p.finite_lo[idx], p.finite_hi[idx]
    s = np.concatenate(
        [np.where(flo, x - np.where(flo, p.lower[idx], 0), 1.0),
         np.where(fhi, np.where(fhi, p.upper[idx], 0) - x, 1.0),
         p.h[idx] - np.einsum("bkn,bn->bk", p.G[idx], x)],
        axis=1,
    )
    eye = np.broadcast_to(np.eye(n), (k, n, n))
    J = np.concatenate([eye * flo[:, :, None], -eye * fhi[:, :, None], -p.G[idx]], axis=1)
    if view.elastic:
        em = view.emask[idx][:, : s.shape[1]]
        s = s + em * z[:, n:n + 1]
        J = np.concatenate([J, em[:, :, None]], axis=2)
    return s, J, None


def _center(view, z, idx, mu, iters, max_newton, inner_tol, stop=None, grad_tol=np.inf):
    """Damped Newton centring at one barrier weight; updates ``z`` in place.

    Returns masks (converged, stopped_early, failed) over the rows of ``idx``.
    """
    k = len(idx)
    conv = np.zeros(k, bool)
    stopped = np.zeros(k, bool)
    failed = np.zeros(k, bool)
    act = np.arange(k)
    for _ in range(max_newton):
        if act.size == 0:
            break
        ia = idx[act]
        za = z[ia]
        psi, feas, grad, H, _ = view.merit(za, ia, mu, 2)
        bad = ~np.isfinite(psi) | ~np.all(np.isfinite(grad), axis=1) | ~np.all(np.isfinite(H), axis=(1, 2))
        r = view.c[ia] - np.einsum("bmn,bn->bm", view.A[ia], za)
        dz, w, ok = _newton_dir(H, grad, view.A[ia], r, 1e-10 if view.elastic else 0.0)
        iters[ia] += 1
        lam2 = -np.einsum("bn,bn->b", grad, dz)
        pgrad = np.abs(grad + np.einsum("bmn,bm->bn", view.A[ia], w)).max(axis=1)
        tiny = np.abs(dz).max(axis=1) <= 1e-15 * (1.0 + np.abs(za).max(axis=1))
        done = (((np.abs(lam2) * 0.5 <= inner_tol) & (pgrad <= grad_tol)) | tiny) & ~bad
        failed[act[bad]] = True
        conv[act[done]] = True
        go = ~done & ~bad
        if not go.any():
            act = act[go]
            break
        sub = act[go]
        isub = idx[sub]
        zs, dzs, psis, slope = za[go], dz[go], psi[go], -lam2[go]
        t = _fraction_to_boundary(view, zs, dzs, isub)
        pending = np.ones(len(sub), bool)
        for _ls in range(60):
            pi = np.nonzero(pending)[0]
            if pi.size == 0:
                break
            ztry = zs[pi] + t[pi, None] * dzs[pi]
            with np.errstate(all="ignore"):
                ptry, ftry, *_ = view.merit(ztry, isub[pi], mu, 0)
            accept = ftry & (ptry <= psis[pi] + 0.25 * t[pi] * slope[pi] + 1e-13 * (1 + np.abs(psis[pi])))
            acc = pi[accept]
            z[isub[acc]] = ztry[accept]
            pending[acc] = False
            t[pi[~accept]] *= 0.5
        # A stalled line search means round-off dominates; leave it to the KKT check.
        conv[sub[pending]] = True
        keep = ~pending
        nxt = sub[keep]
        if stop is not None and nxt.size:
            st = stop(z[idx[nxt]])
            stopped[nxt[st]] = True
            nxt = nxt[~st]
        act = nxt
    return conv, stopped, failed, act


def _mu_schedule(tol, dim, start=1.0):
    mus = [start]
    floor = tol / max(dim, 1)
    while mus[-1] > floor * (1 + 1e-12):
        mus.append(max(mus[-1] / 10.0, floor))
    return mus


def _project_eq(prob, x):
    """Least-norm correction of ``x`` onto ``A x = c``."""
    A, c = prob.A, prob.c
    if A.shape[1] == 0:
        return x
    r = c - np.einsum("bmn,bn->bm", A, x)
    AAt = np.einsum("bmn,bkn->bmk", A, A)
    w = np.linalg.solve(AAt, r[..., None])[..., 0]
    return x + np.einsum("bmn,bm->bn", A, w)


def _phase1(prob, x, idx, tol, max_newton, mode):
    """Elastic feasibility stage; returns (x, feasible mask, elastic optimum)."""
    view = _View(prob, mode)
    s, _, _ = view.slacks(np.concatenate([x, np.zeros((len(x), 1))], axis=1), idx, 0)
    fin = view.emask[idx] > 0
    worst = np.where(fin, -s, -np.inf).max(axis=1) if s.size else np.zeros(len(x))
    e0 = np.maximum(worst, 0.0) + 1.0
    z = np.zeros((prob.batch, prob.dim + 1))
    z[idx] = np.concatenate([x, e0[:, None]], axis=1)
    iters = np.zeros(prob.batch, int)
    active = idx.copy()
    found = np.zeros(prob.batch, bool)
    stop = lambda zz: zz[:, -1] < 0
    for mu in _mu_schedule(tol * 1e-2, prob.dim + 1):
        if active.size == 0:
            break
        _, stopped, _, _ = _center(view, z, active, mu, iters, max_newton, 1e-14, stop=stop)
        found[active[stopped]] = True
        active = active[~stopped]
        early = z[active, -1] < 0
        found[active[early]] = True
        active = active[~early]
    return z[idx, : prob.dim], found[idx], z[idx, -1], iters[idx]


def _kkt(prob, x, idx, mu):
    view = _View(prob, "phase2")
    f, gf, _ = view.objective(x, idx, 2)
    s, J, _ = view.slacks(x, idx, 2)
    fin = view.finite[idx]
    lam = np.where(fin, mu / np.where(fin, s, 1.0), 0.0)
    r = gf - np.einsum("bkn,bk->bn", J, lam)
    A = prob.A[idx]
    if A.shape[1]:
        AAt = np.einsum("bmn,bkn->bmk", A, A)
        nu = -np.linalg.solve(AAt, np.einsum("bmn,bn->bm", A, r)[..., None])[..., 0]
        r = r + np.einsum("bmn,bm->bn", A, nu)
    else:
        nu = np.zeros((len(idx), 0))
    return f, lam, nu, _kkt_residual(prob, x, idx, lam, nu)


def _kkt_residual(prob, x, idx, lam, nu):
    view = _View(prob, "phase2")
    _, gf, _ = view.objective(x, idx, 2)
    s, J, _ = view.slacks(x, idx, 2)
    fin = view.finite[idx]
    stat = gf - np.einsum("bkn,bk->bn", J, lam) + np.einsum("bmn,bm->bn", prob.A[idx], nu)
    prim_eq = prob.c[idx] - np.einsum("bmn,bn->bm", prob.A[idx], x)
    parts = [
        np.abs(stat).max(axis=1, initial=0.0),
        np.abs(prim_eq).max(axis=1, initial=0.0),
        np.where(fin, np.maximum(-s, 0.0), 0.0).max(axis=1, initial=0.0),
        np.where(fin, np.abs(lam * s), 0.0).max(axis=1, initial=0.0),
        np.maximum(-lam, 0.0).max(axis=1, initial=0.0),
    ]
    return np.max(parts, axis=0)


def constraint_audit(prob, x, idx=None):
    """Worst relative violation of every constraint (independent of the solver state)."""
    x = np.atleast_2d(np.asarray(x, float))
    idx = np.arange(len(x)) if idx is None else np.asarray(idx)
    view = _View(prob, "phase2")
    s, _, _ = view.slacks(x, idx, 0)
    fin = view.finite[idx]
    nl = prob.n_linear_slacks
    scale = np.ones_like(s)
    scale[:, :nl] = np.maximum(
        1.0, np.abs(np.concatenate([prob.lower[idx], prob.upper[idx], prob.h[idx]], axis=1))
    )
    scale = np.where(np.isfinite(scale), scale, 1.0)
    ineq = np.where(fin, np.maximum(-s, 0.0) / scale, 0.0).max(axis=1, initial=0.0)
    c = prob.c[idx]
    eq = np.abs(c - np.einsum("bmn,bn->bm", prob.A[idx], x)) / np.maximum(1.0, np.abs(c))
    return np.maximum(ineq, eq.max(axis=1, initial=0.0))


def _relaxed(prob, rows):
    """Copy of ``prob`` with the boxes and ``G x <= h`` of ``rows`` widened by ``WEAK_TOL``."""
    out = copy.copy(prob)
    out.lower, out.upper, out.h = prob.lower.copy(), prob.upper.copy(), prob.h.copy()
    for arr, sign in ((out.lower, -1.0), (out.upper, 1.0), (out.h, 1.0)):
        with np.errstate(invalid="ignore"):
            arr[rows] += sign * WEAK_TOL * np.maximum(1.0, np.abs(arr[rows]))
    return out


def solve_batch(problem: ConvexProblem, tol: float = 1e-7, x0=None, max_newton: int = 100,
                kkt_tol: float = KKT_TOL, mu0: float = 1.0) -> BatchReport:
    """Solve every instance of ``problem``; ``x0`` is an optional warm start.

    ``mu0`` is the first barrier weight; a smaller value skips the early,
    far-from-optimal centring steps when ``x0`` is already close.
    """
    prob = problem
    B, n = prob.batch, prob.dim
    status = np.array([Status.OPTIMAL] * B, dtype=object)
    stage = np.array(["phase2"] * B, dtype=object)
    iters = np.zeros(B, int)
    if x0 is None:
        lo = np.where(prob.finite_lo, prob.lower, np.where(prob.finite_hi, prob.upper - 1.0, 0.0))
        hi = np.where(prob.finite_hi, prob.upper, lo + 2.0)
        x = _project_eq(prob, 0.5 * (lo + hi))
    else:
        x = _project_eq(prob, np.array(_batched(x0, B, 1), dtype=float))
    alive = np.arange(B)
    eq_res = np.abs(prob.c - np.einsum("bmn,bn->bm", prob.A, x)).max(axis=1, initial=0.0)
    bad_eq = (eq_res > 1e-9 * np.maximum(1.0, np.abs(prob.c).max(axis=1, initial=1.0))) | prob.eq_inconsistent
    status[bad_eq] = Status.INFEASIBLE
    stage[bad_eq] = "equality"
    alive = alive[~bad_eq]
    if prob.has_inequalities and alive.size:
        for mode in ("phase1a", "phase1b"):
            if mode == "phase1b" and not prob.concave_ineq:
                continue
            view = _View(prob, mode)
            s, _, _ = view.slacks(np.concatenate([x[alive], np.zeros((alive.size, 1))], axis=1), alive, 0)
            fin = view.emask[alive] > 0
            with np.errstate(invalid="ignore"):
                ok = np.all(~fin | (s > 0), axis=1) & np.all(np.isfinite(s), axis=1)
            need = alive[~ok]
            if need.size == 0:
                continue
            xs, found, e_opt, it = _phase1(prob, x[need], need, tol, max_newton, mode)
            iters[need] += it
            x[need] = xs
            weak = need[~found & (e_opt <= WEAK_TOL)] if mode == "phase1a" else need[:0]
            if weak.size:
                # Feasible set without interior (e.g. the budget pins every box at a bound):
                # widen the linear constraints by WEAK_TOL; the audit still uses the original.
                prob = _relaxed(prob, weak)
                xs, ok2, _, it = _phase1(prob, x[weak], weak, tol, max_newton, mode)
                iters[weak] += it
                x[weak] = xs
                found[np.isin(need, weak[ok2])] = True
                log.debug("rows %s solved on constraints widened by %g", weak[ok2], WEAK_TOL)
            lost = need[~found]
            status[lost] = Status.INFEASIBLE
            stage[lost] = "phase1-linear" if mode == "phase1a" else "phase1-concave"
            if lost.size:
                log.debug("phase I (%s) left elastic optimum %s", mode, e_opt[~found])
            alive = np.setdiff1d(alive, lost)
    mus = _mu_schedule(tol, n, mu0)
    view = _View(prob, "phase2")
    maxed = np.zeros(B, bool)
    failed = np.zeros(B, bool)
    for mu in mus:
        if alive.size == 0:
            break
        conv, _, fail, left = _center(view, x, alive, mu, iters, max_newton, 1e-14, grad_tol=0.01 * kkt_tol)
        failed[alive[fail]] = True
        maxed[alive[left]] = True
        alive = alive[~fail]
    mu_final = mus[-1]
    x_out = x.copy()
    obj = np.full(B, np.nan)
    kkt = np.full(B, np.nan)
    lam = np.zeros((B, view.K))
    nu = np.zeros((B, prob.A.shape[1]))
    audit = np.full(B, np.nan)
    solved = np.nonzero([s is not Status.INFEASIBLE for s in status])[0]
    if solved.size:
        with np.errstate(all="ignore"):
            f, lm, nv, res = _kkt(prob, x[solved], solved, mu_final)
            aud = constraint_audit(problem, x[solved], solved)
        obj[solved], kkt[solved], lam[solved], nu[solved], audit[solved] = f, res, lm, nv, aud
        # Barrier multipliers mu/s are noisy when several slacks sit near 1e-9;
        # an active-set NNLS fit is an equally valid certificate.
        for i in solved[(res > kkt_tol) & ~failed[solved]]:
            for act_tol in (1e-8, 1e-7, 1e-6):
                lm_i, nv_i = _nnls_multipliers(prob, x[i:i + 1], i, act_tol)
                r_i = _kkt_residual(prob, x[i:i + 1], np.array([i]), lm_i, nv_i)[0]
                if r_i < kkt[i]:
                    kkt[i], lam[i], nu[i] = r_i, lm_i[0], nv_i[0]
        for j, i in enumerate(solved):
            if failed[i] or not (np.isfinite(kkt[i]) and np.isfinite(f[j])):
                status[i] = Status.NUMERICAL_FAILURE
            elif kkt[i] <= kkt_tol and aud[j] <= AUDIT_TOL:
                status[i] = Status.OPTIMAL
            elif maxed[i]:
                status[i] = Status.MAX_ITER
            else:
                status[i] = Status.NUMERICAL_FAILURE
    return BatchReport(x_out, obj, kkt, status, iters, mu_final, lam, nu, stage, audit)


def solve(problem: ConvexProblem, tol: float = 1e-7, x0=None, **kw) -> SolverReport:
    """Solve a single-instance problem (``problem.batch == 1``)."""
    if problem.batch != 1:
        raise ValueError("solve() takes a single instance; use solve_batch()")
    return solve_batch(problem, tol, None if x0 is None else np.atleast_2d(x0), **kw).report(0)


def check_kkt(problem: ConvexProblem, x, multipliers: Multipliers | None = None, active_tol=1e-6):
    """Infinity-norm KKT residual of a single instance at ``x``.

    Without multipliers, they are estimated by nonnegative least squares over
    the constraints whose slack is below ``active_tol``.
    """
    x = np.atleast_2d(np.asarray(x, float))
    idx = np.zeros(1, int)
    if multipliers is not None:
        lam, nu = np.atleast_2d(multipliers.lam), np.atleast_2d(multipliers.nu)
    else:
        lam, nu = _nnls_multipliers(problem, x, 0, active_tol)
    return float(_kkt_residual(problem, x, idx, lam, nu)[0])


def _nnls_multipliers(problem, x, i, active_tol):
    """Multipliers of row ``i`` at ``x`` (shape ``(1, n)``) fitted over the near-active set."""
    idx = np.array([i])
    view = _View(problem, "phase2")
    _, gf, _ = view.objective(x, idx, 2)
    s, J, _ = view.slacks(x, idx, 2)
    act = np.nonzero(view.finite[i] & (np.abs(s[0]) <= active_tol))[0]
    A = problem.A[i]
    # gf = J_act^T lam - A^T nu, lam >= 0, nu free (split into two nonnegative parts)
    M = np.concatenate([J[0, act].T, -A.T, A.T], axis=1)
    coef, _ = nnls(M, gf[0]) if M.shape[1] else (np.zeros(0), 0.0)
    lam = np.zeros((1, view.K))
    lam[0, act] = coef[: act.size]
    m = A.shape[0]
    nu = (coef[act.size: act.size + m] - coef[act.size + m:])[None, :]
    return lam, nu


# --------------------------------------------------------------------------- #
# Small callback factories

def linear_objective(cvec):
    """``f(x) = c . x`` with ``c`` shared or batched."""
    cvec = np.asarray(cvec, float)

    def f(x, idx, order):
        cc = cvec if cvec.ndim == 1 else cvec[idx]
        val = x @ cc if cvec.ndim == 1 else np.einsum("bn,bn->b", x, cc)
        if order == 0:
            return val, None, None
        k, n = x.shape
        return val, np.broadcast_to(cc, (k, n)).copy(), np.zeros((k, n, n))

    return f


def quadratic_objective(Q, q=None):
    """``f(x) = x'Qx/2 + q'x`` with shared ``Q``."""
    Q = np.asarray(Q, float)
    q = np.zeros(Q.shape[0]) if q is None else np.asarray(q, float)

    def f(x, idx, order):
        g = x @ Q + q
        val = 0.5 * np.einsum("bn,bn->b", x, x @ Q) + x @ q
        if order == 0:
            return val, None, None
        return val, g, np.broadcast_to(Q, (x.shape[0],) + Q.shape).copy()

    return f


# --------------------------------------------------------------------------- #
# Alternating optimisation

@dataclass
class Subproblem:
    """One half-step: a batched problem over the active block plus a decoder.

    ``decode(x)`` maps solver variables back to the block's values (shape
    ``(k, M)``); ``x0`` optionally warm-starts the solve.
    """

    problem: ConvexProblem
    decode: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray | None = None


@dataclass
class AOResult:
    p: np.ndarray
    b: np.ndarray
    trace: list
    status: np.ndarray
    outer_iters: np.ndarray
    infeasible_half_step: np.ndarray
    reports: list = field(default_factory=list)

    @property
    def objective(self):
        return self.trace[-1]


def alternating_optimize(sub_p, sub_b, init, objective, tol=1e-6, max_outer=100, sense="max",
                         atol=1e-12, slack=None, solver_tol=1e-7, enforce_monotone=True,
                         feasible=None, mu0=1.0):
    """Alternate between the power and bandwidth blocks of a batch of problems.

    ``sub_p(p, b, idx)`` and ``sub_b(p, b, idx)`` build :class:`Subproblem`
    instances for the rows ``idx``; ``objective(p, b, idx)`` evaluates F.
    ``init`` is ``(p0, b0)`` with shape ``(B, M)``.

    A half-step whose solution scores worse than the incumbent by no more than
    ``slack`` (the barrier's duality-gap allowance) keeps the incumbent, which
    is feasible for the same subproblem. A larger drop raises
    :class:`NonMonotoneError`. ``trace[k]`` holds F after half-step ``k``
    (entry 0 is the seed); rows that have stopped carry their final value.

    With ``enforce_monotone=False`` every usable half-step is accepted; this is
    for builders whose constraint set moves between half-steps, where the
    incumbent need not be feasible for the next subproblem. ``feasible(p, b,
    idx)`` (optional) flags rows whose incumbent violates the constraints; such
    rows accept the next usable half-step unconditionally.
    """
    p = np.array(init[0], float, ndmin=2)
    b = np.array(init[1], float, ndmin=2)
    B = p.shape[0]
    sgn = 1.0 if sense == "max" else -1.0
    all_idx = np.arange(B)
    F = np.asarray(objective(p, b, all_idx), float)
    trace = [F.copy()]
    status = np.array(["MaxIter"] * B, dtype=object)
    outer = np.zeros(B, int)
    bad_half = np.full(B, -1)
    active = all_idx.copy()
    half = 0
    reports = []
    for it in range(max_outer):
        if active.size == 0:
            break
        F_start = F.copy()
        for which, builder in (("p", sub_p), ("b", sub_b)):
            half += 1
            if active.size == 0:
                trace.append(F.copy())
                continue
            sp = builder(p[active], b[active], active)
            rep = solve_batch(sp.problem, solver_tol, x0=sp.x0, mu0=mu0)
            reports.append(rep)
            usable = np.array([s in (Status.OPTIMAL, Status.MAX_ITER) for s in rep.status])
            for r, s in zip(active[~usable], rep.status[~usable]):
                status[r] = s.value
                bad_half[r] = half
            cand_p, cand_b = p[active].copy(), b[active].copy()
            vals = sp.decode(rep.x_star)
            if which == "p":
                cand_p[usable] = vals[usable]
            else:
                cand_b[usable] = vals[usable]
            F_new = np.asarray(objective(cand_p, cand_b, active), float)
            F_old = F[active]
            gap = slack if slack is not None else 10 * solver_tol * np.maximum(1.0, np.abs(F_old))
            drop = sgn * (F_old - F_new)
            free = np.full(active.size, not enforce_monotone)
            if feasible is not None and enforce_monotone:
                free = ~np.asarray(feasible(p[active], b[active], active), bool)
            too_far = usable & (drop > gap) & ~free
            if too_far.any():
                k = np.nonzero(too_far)[0][0]
                raise NonMonotoneError(
                    f"half-step {half} ({which}) moved the objective from {F_old[k]:.12g} to {F_new[k]:.12g}"
                )
            take = usable & ((drop <= 0) | free)
            rows = active[take]
            p[rows], b[rows], F[rows] = cand_p[take], cand_b[take], F_new[take]
            trace.append(F.copy())
            active = active[usable]
        outer[active] = it + 1
        if active.size == 0:
            break
        change = np.abs(F[active] - F_start[active])
        conv = change <= atol + tol * np.abs(F_start[active])
        status[active[conv]] = "Converged"
        active = active[~conv]
    return AOResult(p, b, trace, status, outer, bad_half, reports)
