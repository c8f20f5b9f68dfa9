"""Constant-velocity tracking: measurement model, PCRB recursion, EKF and per-epoch allocation.

Internally every quantity carries leading batch axes ``(trials, targets)`` so the
closed loop advances all Monte Carlo trials in lockstep; the public single-target
functions are thin wrappers.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _rate
from .channel import Allocation, DomainError, comm_gain_at, sensing_gain_at
from .estimation import CrbModel, Criterion
from .optim import ConvexProblem, Subproblem, alternating_optimize

log = logging.getLogger(__name__)

PRIOR_VAR = (25.0, 25.0, 4.0, 4.0)


@dataclass(frozen=True)
class MotionState:
    x_m: float
    y_m: float
    vx_mps: float
    vy_mps: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise DomainError("motion state must be finite")

    def as_array(self):
        return np.array([self.x_m, self.y_m, self.vx_mps, self.vy_mps], dtype=float)

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class StateModel:
    t_s: float
    sigma_tilde: float = 1.0

    def __post_init__(self):
        if not self.t_s > 0:
            raise DomainError("t_s must be > 0")
        if self.sigma_tilde < 0:
            raise DomainError("sigma_tilde must be >= 0")


@dataclass(frozen=True)
class FisherState:
    j: np.ndarray
    predicted_state: MotionState

    def __post_init__(self):
        j = np.asarray(self.j, float)
        if j.shape != (4, 4) or not np.allclose(j, j.T, atol=1e-10 * max(1.0, np.abs(j).max())):
            raise DomainError("FIM must be a symmetric 4x4 matrix")
        object.__setattr__(self, "j", 0.5 * (j + j.T))


def _as_state(xi):
    return xi.as_array() if isinstance(xi, MotionState) else np.asarray(xi, float)


def transition_matrix(t_s):
    return np.kron(np.array([[1.0, t_s], [0.0, 1.0]]), np.eye(2))


def state_transition(xi, model: StateModel):
    """Noise-free constant-velocity step."""
    out = transition_matrix(model.t_s) @ _as_state(xi)
    return MotionState.from_array(out) if isinstance(xi, MotionState) else out


def process_noise_cov(model: StateModel):
    t = model.t_s
    return np.kron(np.array([[t**3 / 3, t**2 / 2], [t**2 / 2, t]]), model.sigma_tilde * np.eye(2))


def _measure(x):
    px, py, vx, vy = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    d = np.hypot(px, py)
    if np.any(d == 0):
        raise DomainError("measurement undefined at the origin")
    return np.stack([d, (vx * px + vy * py) / d, np.arctan2(py, px)], axis=-1)


def _jacobian(x):
    px, py, vx, vy = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    d2 = px**2 + py**2
    if np.any(d2 == 0):
        raise DomainError("measurement undefined at the origin")
    d = np.sqrt(d2)
    d3 = d2 * d
    cross = vx * py - vy * px
    H = np.zeros(x.shape[:-1] + (3, 4))
    H[..., 0, 0], H[..., 0, 1] = px / d, py / d
    H[..., 1, 0], H[..., 1, 1] = py * cross / d3, -px * cross / d3
    H[..., 1, 2], H[..., 1, 3] = px / d, py / d
    H[..., 2, 0], H[..., 2, 1] = -py / d2, px / d2
    return H


def measure(xi):
    """Range, range rate and angle (rad) of a state ``[x, y, vx, vy]``."""
    d, v, th = _measure(_as_state(xi))
    return float(d), float(v), float(th)


def measurement_jacobian(xi):
    return _jacobian(_as_state(xi))


def _meas_var(p, b, gain, model):
    """Diagonal of the measurement covariance in (range, range rate, angle) order."""
    pg = np.asarray(p, float) * np.abs(gain) ** 2
    with np.errstate(divide="ignore"):
        return np.stack([model.beta1 / (pg * b), model.beta3 / pg, model.beta2 / pg], axis=-1)


def measurement_cov(p, b, gain, model: CrbModel):
    if not (p > 0 and b > 0):
        raise DomainError("measurement_cov needs p > 0 and b > 0")
    return np.diag(_meas_var(p, b, gain, model))


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _prior_info(j_prev, F, Phi):
    """``(Phi + F J^-1 F')^-1`` with leading batch axes."""
    cov = F @ np.linalg.inv(j_prev) @ F.T + Phi
    return _sym(np.linalg.inv(_sym(cov)))


def _data_info(H, var):
    return _sym(np.einsum("...ki,...k,...kj->...ij", H, 1.0 / var, H))


@dataclass
class FimResult:
    state: FisherState
    dblock_gap: float


def fim_recursion(prev: FisherState, state_model: StateModel, meas_model: CrbModel, p, b, gain,
                  measured=True):
    """One step of the posterior information recursion.

    The data term is evaluated at ``prev.predicted_state``. With
    ``measured=False`` (or ``p == 0``) only the prior term remains. When the
    process noise is nonsingular the D-block form is also evaluated and its
    relative gap to the direct form is returned.
    """
    j = np.asarray(prev.j, float)
    try:
        np.linalg.cholesky(j)
    except np.linalg.LinAlgError as exc:
        raise DomainError(f"previous FIM is not positive definite: eig={np.linalg.eigvalsh(j)}") from exc
    F = transition_matrix(state_model.t_s)
    Phi = process_noise_cov(state_model)
    prior = _prior_info(j, F, Phi)
    gap = float("nan")
    if state_model.sigma_tilde > 0:
        Pi = np.linalg.inv(Phi)
        D11, D12, D22 = F.T @ Pi @ F, -F.T @ Pi, Pi
        alt = D22 - D12.T @ np.linalg.solve(j + D11, D12)
        gap = float(np.abs(_sym(alt) - prior).max() / np.abs(prior).max())
    new = prior
    if measured and p > 0:
        xp = prev.predicted_state.as_array()
        new = prior + _data_info(_jacobian(xp), _meas_var(p, b, gain, meas_model))
    return FimResult(FisherState(_sym(new), prev.predicted_state), gap)


@dataclass(frozen=True)
class TraceResult:
    value: float
    ill_conditioned: bool


def pcrb_trace(fs):
    j = np.asarray(fs.j if isinstance(fs, FisherState) else fs, float)
    w = np.linalg.eigvalsh(j)
    if w.min() <= 0:
        raise DomainError("FIM must be positive definite")
    cond = w.max() / w.min()
    if cond > 1e12:
        warnings.warn(f"FIM condition number {cond:.3g} exceeds 1e12", RuntimeWarning, stacklevel=2)
    return TraceResult(float(np.sum(1.0 / w)), bool(cond > 1e12))


def _scalarize(E, V):
    """Batched form of :func:`scalarize_pcrb`."""
    w, Q = np.linalg.eigh(E)
    if np.any(w <= 0):
        raise DomainError("E must be symmetric positive definite")
    e_mhalf = Q @ (Q.swapaxes(-1, -2) / np.sqrt(w)[..., :, None])
    xi, U = np.linalg.eigh(_sym(e_mhalf @ V @ e_mhalf))
    xi = np.maximum(xi, 0.0)
    W = e_mhalf @ U
    # diag(U' E^-1 U) = column norms of E^-1/2 U
    d = np.einsum("...ij,...ij->...j", W, W)
    a = 1.0 / d
    return a, xi * a


def scalarize_pcrb(E, V):
    """Coefficients with ``trace((E + pV)^-1) = Σ 1/(a_i + b_i p)`` for all ``p >= 0``."""
    E = np.asarray(E, float)
    V = np.asarray(V, float)
    return _scalarize(_sym(E), _sym(V))


def scalarized_value(a, b, p):
    return np.sum(1.0 / (a + b * np.asarray(p, float)[..., None]), axis=-1)


# --------------------------------------------------------------------------- #
# Allocation


@dataclass
class _TrackBatch:
    """Per-epoch allocation data for ``T`` trials and ``Q`` tracked objects."""

    E: np.ndarray      # (T, Q, 4, 4) prior information
    H: np.ndarray      # (T, Q, 3, 4)
    g2: np.ndarray     # (T, Q) |ς|^2
    c: np.ndarray      # (T, K) normalised comm gains
    m: int
    S: np.ndarray
    C: np.ndarray
    P: float
    Bt: float
    p_box: tuple
    b_box: tuple
    model: CrbModel
    gamma: np.ndarray | None = None

    def info(self, u, v):
        """Posterior FIM for normalised allocations ``u, v`` of shape (T, M)."""
        p = u[:, self.S] * self.P
        b = v[:, self.S] * self.Bt
        var = _meas_var(p, b, np.sqrt(self.g2), self.model)
        return self.E + _data_info(self.H, var)

    def subset(self, idx):
        return _TrackBatch(self.E[idx], self.H[idx], self.g2[idx], self.c[idx], self.m, self.S, self.C,
                           self.P, self.Bt, self.p_box, self.b_box, self.model, self.gamma)


def _pieces(tb, which, fixed):
    """(E_eff, V) with information linear in the active block's normalised variable."""
    mdl = tb.model
    h = tb.H
    outer = lambda r: np.einsum("...i,...j->...ij", h[..., r, :], h[..., r, :])
    if which == "p":
        v = fixed[:, tb.S] * tb.Bt
        V = tb.g2[..., None, None] * (v[..., None, None] / mdl.beta1 * outer(0) + outer(1) / mdl.beta3
                                      + outer(2) / mdl.beta2) * tb.P
        return tb.E, V
    p = fixed[:, tb.S] * tb.P
    pg = (p * tb.g2)[..., None, None]
    E = tb.E + pg * (outer(1) / mdl.beta3 + outer(2) / mdl.beta2)
    V = pg * outer(0) / mdl.beta1 * tb.Bt
    return E, V


def _trace_objective(a, b, S, dim, scale, q_index=None):
    """Sum over targets of ``Σ_i 1/(a_i + b_i x_q)`` divided by ``scale``; batched via idx."""

    def f(x, idx, order):
        aa, bb, sc = a[idx], b[idx], scale[idx]
        xq = x[:, S][..., None]
        den = aa + bb * xq
        terms = 1.0 / den
        if q_index is not None:
            terms = terms[:, q_index:q_index + 1]
            cols = S[q_index:q_index + 1]
        else:
            cols = S
        val = terms.sum(axis=(1, 2)) / sc
        if order == 0:
            return val, None, None
        k = len(x)
        grad = np.zeros((k, dim))
        sel = slice(q_index, q_index + 1) if q_index is not None else slice(None)
        grad[:, cols] = -(bb[:, sel] / den[:, sel] ** 2).sum(axis=2) / sc[:, None]
        hess = np.zeros((k, dim, dim))
        hess[:, cols, cols] = (2 * bb[:, sel] ** 2 / den[:, sel] ** 3).sum(axis=2) / sc[:, None]
        return val, grad, hess

    return f


def _epi_constraint(obj_q, dim):
    """``t - rho_q(x) >= 0`` (concave because rho_q is convex)."""

    def g(x, idx, order):
        val, gr, he = obj_q(x, idx, order)
        out = x[:, -1] - val
        if order == 0:
            return out, None, None
        gg = -gr
        gg[:, -1] += 1.0
        return out, gg, -he

    return g


def _track_subproblem(tb, which, fixed, prev, gamma_c, criterion):
    m, S = tb.m, tb.S
    k = fixed.shape[0]
    E, V = _pieces(tb, which, fixed)
    a, b = _scalarize(E, V)
    fair = criterion is Criterion.FAIRNESS
    dim = m + 1 if fair else m
    lo, hi = (tb.p_box[0] / tb.P, tb.p_box[1] / tb.P) if which == "p" else (tb.b_box[0] / tb.Bt, tb.b_box[1] / tb.Bt)
    prev_terms = 1.0 / (a + b * prev[:, S][..., None])
    scale = np.maximum(prev_terms.sum(axis=(1, 2)), 1e-300)
    rate = (_rate.rate_in_power if which == "p" else _rate.rate_in_bandwidth)(
        tb.C, tb.c, fixed[:, tb.C], gamma_c, dim)
    cons = [rate] if len(tb.C) else []
    rows = [np.broadcast_to(np.r_[np.ones(m), np.zeros(dim - m)], (k, 1, dim))]
    rhs = [np.ones((k, 1))]
    if tb.gamma is not None and len(S) > 1:
        # First-order expansion of each target's trace around the previous block value.
        r0 = prev_terms.sum(axis=2)
        d0 = -(b / (a + b * prev[:, S][..., None]) ** 2).sum(axis=2)
        g = tb.gamma
        pr = np.zeros((k, len(S) - 1, dim))
        pc = np.zeros((k, len(S) - 1))
        for j in range(1, len(S)):
            pr[:, j - 1, S[j]] = g[0] * d0[:, j]
            pr[:, j - 1, S[0]] = -g[j] * d0[:, 0]
            pc[:, j - 1] = -(g[0] * (r0[:, j] - d0[:, j] * prev[:, S[j]]) - g[j] * (r0[:, 0] - d0[:, 0] * prev[:, S[0]]))
        nrm = np.abs(pr).max(axis=2)
        rows.append(pr / nrm[..., None])
        rhs.append(pc / nrm)
    A = np.concatenate(rows, axis=1)
    c = np.concatenate(rhs, axis=1)
    lower = np.full(dim, lo)
    upper = np.full(dim, hi)
    x0 = prev.copy()
    if fair:
        scale = scale / len(S)
        cons += [_epi_constraint(_trace_objective(a, b, S, dim, scale, q), dim) for q in range(len(S))]
        lower[-1], upper[-1] = -np.inf, np.inf
        per = (prev_terms.sum(axis=2) / scale[:, None]).max(axis=1)
        x0 = np.concatenate([prev, (per * 1.05 + 1e-3)[:, None]], axis=1)
        cvec = np.zeros(dim)
        cvec[-1] = 1.0

        def obj(x, idx, order):
            val = x[:, -1]
            if order == 0:
                return val, None, None
            return val, np.broadcast_to(cvec, x.shape).copy(), np.zeros((len(x), dim, dim))
    else:
        obj = _trace_objective(a, b, S, dim, scale)
    prob = ConvexProblem(dim, obj, linear_eq=(A, c), concave_ineq=cons, lower=lower, upper=upper, batch=k)
    return Subproblem(prob, lambda x: x[:, :m], x0)


def _tracking_objective(tb, criterion):
    def F(u, v, idx):
        J = tb.subset(idx).info(u, v)
        tr = np.trace(np.linalg.inv(J), axis1=-2, axis2=-1)
        return tr.max(axis=1) if criterion is Criterion.FAIRNESS else tr.sum(axis=1)
    return F


def _allocate_batch(tb, gamma_c, u0, v0, criterion=Criterion.COMPREHENSIVE, tol=1e-4, max_outer=20,
                    solver_tol=1e-7, mu0=1.0):
    criterion = Criterion(criterion)
    T = tb.E.shape[0]
    gc = np.broadcast_to(np.asarray(gamma_c, float), (T,)).copy()

    def builder(which):
        def build(u, v, idx):
            sub = tb.subset(idx)
            fixed, prev = (v, u) if which == "p" else (u, v)
            return _track_subproblem(sub, which, fixed, prev, gc[idx], criterion)
        return build

    def feasible(u, v, idx):
        if not len(tb.C):
            return np.ones(len(idx), bool)
        se = _rate.spectral_efficiency(u[:, tb.C], v[:, tb.C], tb.c[idx]).sum(axis=1)
        return se >= gc[idx] * (1 - 1e-9)

    return alternating_optimize(builder("p"), builder("b"), (u0, v0), _tracking_objective(tb, criterion),
                                tol=tol, max_outer=max_outer, sense="min", solver_tol=solver_tol,
                                enforce_monotone=tb.gamma is None, feasible=feasible, mu0=mu0)


@dataclass(frozen=True)
class TrackingConfig:
    dt_s: float = 0.02
    horizon_s: float = 5.0
    gamma_c: float = 7.6
    prior_var: tuple = PRIOR_VAR
    criterion: str = "comprehensive"
    ao_tol: float = 1e-4
    ao_max_outer: int = 20
    warm_mu0: float = 1e-3

    def __post_init__(self):
        if not (self.dt_s > 0 and self.horizon_s > 0):
            raise DomainError("tracking: dt_s and horizon_s must be > 0")
        n = self.horizon_s / self.dt_s
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise DomainError("tracking: horizon_s must be an integer multiple of dt_s")
        if len(self.prior_var) != 4 or min(self.prior_var) <= 0:
            raise DomainError("tracking: prior_var must hold four positive variances")
        Criterion(self.criterion)

    @property
    def epochs(self):
        return int(round(self.horizon_s / self.dt_s))

    @classmethod
    def from_scenario(cls, scenario, **overrides):
        params = dict(scenario.tracking or {})
        params.update({k: v for k, v in overrides.items() if v is not None})
        if "prior_var" in params:
            params["prior_var"] = tuple(params["prior_var"])
        return cls(**params)


def crb_model_for(scenario):
    return CrbModel(**(scenario.crb or {}))


def _scenario_batch(scenario, model, xs_pred, gamma=None):
    """Build a :class:`_TrackBatch` from predicted states ``(T, Q, 4)``."""
    S, C = scenario.sensing_idx, scenario.comm_idx
    objs = scenario.objects
    d_pred = np.hypot(xs_pred[..., 0], xs_pred[..., 1])
    rcs = np.array([objs[i].rcs_m2 for i in S])
    eps = [objs[i].beam_gain for i in S]
    sg = np.stack([sensing_gain_at(scenario, d_pred[:, q], rcs[q], eps[q]) for q in range(len(S))], axis=1)
    cg = np.empty((xs_pred.shape[0], len(C)))
    pos = {int(i): q for q, i in enumerate(S)}
    for k, i in enumerate(C):
        if int(i) in pos:
            cg[:, k] = comm_gain_at(scenario, d_pred[:, pos[int(i)]])
        else:
            cg[:, k] = comm_gain_at(scenario, objs[i].distance_m)
    return _TrackBatch(
        E=None, H=_jacobian(xs_pred), g2=sg**2, c=scenario.p_total_w * cg / scenario.b_total_hz,
        m=scenario.n_objects, S=S, C=C, P=scenario.p_total_w, Bt=scenario.b_total_hz,
        p_box=scenario.p_box, b_box=scenario.b_box, model=model,
        gamma=None if gamma is None else np.asarray(gamma, float),
    )


def _state_models(scenario, dt):
    out = []
    for i in scenario.sensing_idx:
        mo = scenario.objects[i].motion
        if mo is None:
            raise DomainError(f"object {i}: tracking needs a motion entry for every sensing-capable object")
        out.append(StateModel(dt, mo.process_noise))
    return out


def allocate_tracking(fims, scenario, model, gamma_c, gamma=None, prev_alloc=None,
                      criterion=Criterion.COMPREHENSIVE, dt_s=0.02):
    """Per-epoch allocation minimising the predicted PCRB traces.

    ``fims`` holds the previous posterior FIM and the predicted state of each
    sensing-capable object. Returns ``(allocation, status)``; on failure the
    previous allocation is returned with the failing status.
    """
    model = model or CrbModel()
    if prev_alloc is None:
        prev_alloc = scenario.uniform_allocation()
    xs = np.array([f.predicted_state.as_array() for f in fims])[None]
    tb = _scenario_batch(scenario, model, xs, gamma)
    F = transition_matrix(dt_s)
    sms = _state_models(scenario, dt_s)
    tb.E = np.stack([_prior_info(f.j, F, process_noise_cov(sm)) for f, sm in zip(fims, sms)])[None]
    u0 = prev_alloc.power_w[None] / scenario.p_total_w
    v0 = prev_alloc.bandwidth_hz[None] / scenario.b_total_hz
    res = _allocate_batch(tb, gamma_c, u0, v0, criterion)
    st = res.status[0]
    if st in ("Converged", "MaxIter"):
        return Allocation(res.p[0] * tb.P, res.b[0] * tb.Bt, tb.P, tb.Bt), st
    return prev_alloc, st


def first_epoch_reports(scenario, config: TrackingConfig | None = None, model=None):
    """Solver reports of the first-epoch allocation from the prior (used by the self-test)."""
    cfg = config or TrackingConfig.from_scenario(scenario)
    model = model or crb_model_for(scenario)
    S = scenario.sensing_idx
    x0 = np.stack([scenario.objects[i].motion.as_array() for i in S])
    F = transition_matrix(cfg.dt_s)
    Phis = np.stack([process_noise_cov(sm) for sm in _state_models(scenario, cfg.dt_s)])
    J0 = np.broadcast_to(np.linalg.inv(np.diag(cfg.prior_var)), (1, len(S), 4, 4))
    tb = _scenario_batch(scenario, model, (x0 @ F.T)[None], None)
    tb.E = _prior_info(J0, F, Phis)
    alloc = scenario.uniform_allocation()
    res = _allocate_batch(tb, cfg.gamma_c, (alloc.power_w / tb.P)[None], (alloc.bandwidth_hz / tb.Bt)[None],
                          cfg.criterion, cfg.ao_tol, cfg.ao_max_outer)
    return res.reports


# --------------------------------------------------------------------------- #
# EKF

@dataclass
class TrackState:
    x: np.ndarray   # (..., 4) filtered estimate
    M: np.ndarray   # (..., 4, 4) MSE matrix


def _wrap(a):
    """Map angles to (-pi, pi]."""
    w = (np.asarray(a, float) + np.pi) % (2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def _ekf(x, M, F, Phi, var, y):
    """Batched EKF epoch; ``var`` is the measurement variance at the predicted state."""
    xp = x @ F.T
    Mp = _sym(F @ M @ F.T + Phi)
    H = _jacobian(xp)
    S = H @ Mp @ H.swapaxes(-1, -2) + var[..., :, None] * np.eye(3)
    K = Mp @ H.swapaxes(-1, -2) @ np.linalg.inv(S)
    innov = y - _measure(xp)
    innov[..., 2] = _wrap(innov[..., 2])
    xn = xp + np.einsum("...ij,...j->...i", K, innov)
    Mn = _sym((np.eye(4) - K @ H) @ Mp)
    return xn, Mn, xp


def ekf_epoch(track: TrackState, fim: FisherState, allocation, y, state_model: StateModel, model: CrbModel,
              gain):
    """Predict, gain, correct and covariance-update steps for one target.

    ``allocation`` is ``(p, b)`` for this target and ``gain`` its sensing gain
    at the predicted range. Returns the updated track and the matching FIM.
    """
    F = transition_matrix(state_model.t_s)
    Phi = process_noise_cov(state_model)
    p, b = allocation
    var = _meas_var(p, b, gain, model)
    if not np.all(np.isfinite(var)):
        raise DomainError("measurement covariance must be finite")
    xn, Mn, xp = _ekf(np.asarray(track.x, float), np.asarray(track.M, float), F, Phi, var, np.asarray(y, float))
    fr = fim_recursion(FisherState(fim.j, MotionState.from_array(xp)), state_model, model, p, b, gain)
    return TrackState(xn, Mn), fr.state


# --------------------------------------------------------------------------- #
# Closed loop

@dataclass
class TrackRecord:
    """Per-epoch arrays with shape ``(epochs + 1, trials, targets)`` unless noted.

    Epoch 0 is the initial prior. Allocations are ``(epochs + 1, trials, M)``.
    """

    times_s: np.ndarray
    true_state: np.ndarray
    predicted_state: np.ndarray
    filtered_state: np.ndarray
    power_w: np.ndarray
    bandwidth_hz: np.ndarray
    pcrb_trace: np.ndarray
    pcrb_pos_trace: np.ndarray
    sq_err: np.ndarray
    infeasible: np.ndarray   # (epochs + 1, trials)
    target_ids: np.ndarray
    names: list = field(default_factory=list)

    @property
    def epochs(self):
        return len(self.times_s) - 1

    def mean_sq_err(self):
        return self.sq_err.mean(axis=1)

    def mean_pcrb_pos(self):
        return self.pcrb_pos_trace.mean(axis=1)


def _sqrtm_psd(a):
    w, Q = np.linalg.eigh(a)
    return Q * np.sqrt(np.maximum(w, 0.0))


def run_tracking(scenario, horizon_s=None, dt_s=None, trials=1, seed=0, gamma_c=None, model=None,
                 config: TrackingConfig | None = None, gamma=None, progress=None):
    """Closed-loop Monte Carlo: predict, allocate, measure, update, log.

    All trials advance together; randomness comes from one generator seeded
    with ``seed`` so a run is reproducible bit for bit.
    """
    cfg = config or TrackingConfig.from_scenario(scenario, dt_s=dt_s, horizon_s=horizon_s, gamma_c=gamma_c)
    model = model or crb_model_for(scenario)
    if trials < 1:
        raise DomainError("trials must be >= 1")
    S = scenario.sensing_idx
    Q, T, N = len(S), int(trials), cfg.epochs
    sms = _state_models(scenario, cfg.dt_s)
    F = transition_matrix(cfg.dt_s)
    Phis = np.stack([process_noise_cov(sm) for sm in sms])          # (Q, 4, 4)
    Phi_sqrt = np.stack([_sqrtm_psd(P) for P in Phis])
    rng = np.random.default_rng(seed)
    x0 = np.stack([scenario.objects[i].motion.as_array() for i in S])
    P0 = np.diag(cfg.prior_var)
    truth = np.broadcast_to(x0, (T, Q, 4)).copy()
    est = truth + rng.standard_normal((T, Q, 4)) @ _sqrtm_psd(P0).T
    M = np.broadcast_to(P0, (T, Q, 4, 4)).copy()
    J = np.linalg.inv(M)
    alloc = scenario.uniform_allocation()
    u = np.broadcast_to(alloc.power_w / scenario.p_total_w, (T, scenario.n_objects)).copy()
    v = np.broadcast_to(alloc.bandwidth_hz / scenario.b_total_hz, (T, scenario.n_objects)).copy()

    shape = (N + 1, T, Q)
    rec = dict(
        true_state=np.zeros(shape + (4,)), predicted_state=np.zeros(shape + (4,)),
        filtered_state=np.zeros(shape + (4,)), pcrb_trace=np.zeros(shape), pcrb_pos_trace=np.zeros(shape),
        sq_err=np.zeros(shape), power_w=np.zeros((N + 1, T, scenario.n_objects)),
        bandwidth_hz=np.zeros((N + 1, T, scenario.n_objects)), infeasible=np.zeros((N + 1, T), bool),
    )

    def log_epoch(n, xp):
        Minv = np.linalg.inv(J)
        rec["true_state"][n] = truth
        rec["predicted_state"][n] = xp
        rec["filtered_state"][n] = est
        rec["pcrb_trace"][n] = np.trace(Minv, axis1=-2, axis2=-1)
        rec["pcrb_pos_trace"][n] = Minv[..., 0, 0] + Minv[..., 1, 1]
        rec["sq_err"][n] = ((est[..., :2] - truth[..., :2]) ** 2).sum(axis=-1)
        rec["power_w"][n] = u * scenario.p_total_w
        rec["bandwidth_hz"][n] = v * scenario.b_total_hz

    log_epoch(0, est.copy())
    for n in range(1, N + 1):
        xp = est @ F.T
        tb = _scenario_batch(scenario, model, xp, gamma)
        tb.E = _prior_info(J, F, Phis)
        res = _allocate_batch(tb, cfg.gamma_c, u, v, cfg.criterion, cfg.ao_tol, cfg.ao_max_outer,
                              mu0=1.0 if n == 1 else cfg.warm_mu0)
        ok = np.isin(res.status, ("Converged", "MaxIter"))
        u = np.where(ok[:, None], res.p, u)
        v = np.where(ok[:, None], res.b, v)
        rec["infeasible"][n] = ~ok
        if (~ok).any():
            log.info("epoch %d: %d trial(s) kept the previous allocation", n, int((~ok).sum()))
        # truth and measurement
        truth = truth @ F.T + np.einsum("qij,tqj->tqi", Phi_sqrt, rng.standard_normal((T, Q, 4)))
        p_s = u[:, S] * scenario.p_total_w
        b_s = v[:, S] * scenario.b_total_hz
        objs = scenario.objects
        d_true = np.hypot(truth[..., 0], truth[..., 1])
        g_true = np.stack([sensing_gain_at(scenario, d_true[:, q], objs[i].rcs_m2, objs[i].beam_gain)
                           for q, i in enumerate(S)], axis=1)
        var_true = _meas_var(p_s, b_s, g_true, model)
        y = _measure(truth) + rng.standard_normal((T, Q, 3)) * np.sqrt(var_true)
        y[..., 2] = _wrap(y[..., 2])
        var_hat = _meas_var(p_s, b_s, np.sqrt(tb.g2), model)
        est, M, _ = _ekf(est, M, F, Phis, var_hat, y)
        J = tb.E + _data_info(tb.H, var_hat)
        log_epoch(n, xp)
        if progress is not None:
            progress(n, N)
    return TrackRecord(np.arange(N + 1) * cfg.dt_s, target_ids=S, names=[scenario.object_names()[i] for i in S],
                       **rec)
