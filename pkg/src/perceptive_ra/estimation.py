"""Localization QoS: CRB forms, the SBP trade-off and joint power-bandwidth allocation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _rate
from .channel import SPEED_OF_LIGHT, Allocation, DomainError, beam_gain, channel_gains
from .optim import ConvexProblem, Status, Subproblem, alternating_optimize, linear_objective, solve_batch


class Waveform(str, enum.Enum):
    FILTERED_RECT = "FilteredRect"
    LFM = "LFM"


class Criterion(str, enum.Enum):
    FAIRNESS = "fairness"
    COMPREHENSIVE = "comprehensive"


def effective_bandwidth_sq(b_hz, t_pulse_s, waveform=Waveform.FILTERED_RECT):
    """Mean-square bandwidth approximation for the two supported pulse families."""
    if not (np.all(np.asarray(b_hz) > 0) and t_pulse_s > 0):
        raise DomainError("bandwidth and pulse length must be > 0")
    if Waveform(waveform) is Waveform.LFM:
        return np.asarray(b_hz, float) ** 2 / 6.0
    return np.asarray(b_hz, float) / (2 * np.pi**2 * t_pulse_s)


T_PULSE_S = 10e-6
T_EFF_S = 10e-3
BETA1 = SPEED_OF_LIGHT**2 / (8 * np.pi**2) * (2 * np.pi**2 * T_PULSE_S)
BETA2 = 5e-5


@dataclass(frozen=True)
class CrbModel:
    """Scale factors of the range, angle and velocity CRBs plus unit weights.

    Defaults: ``beta1`` follows the delay bound with a filtered rectangular pulse
    of ``T_PULSE_S``; ``beta2`` puts the angle bound near 1e-4 rad^2 for the
    reference localization geometry; ``beta3`` maps ``beta2`` through a coherent
    dwell of ``T_EFF_S`` at 30 GHz. ``omega_tau`` equalises the two reciprocal
    terms at a 20 MHz share.
    """

    beta1: float = BETA1
    beta2: float = BETA2
    beta3: float = BETA2 * (SPEED_OF_LIGHT / 30e9 / (2 * T_EFF_S)) ** 2
    omega_tau: float = BETA1 / (BETA2 * 20e6)
    omega_theta: float = 1.0

    def __post_init__(self):
        if min(self.beta1, self.beta2, self.beta3) <= 0:
            raise DomainError("crb: all beta must be > 0")
        if self.omega_tau < 0 or self.omega_theta < 0 or self.omega_tau + self.omega_theta <= 0:
            raise DomainError("crb: omega weights must be >= 0 with a positive sum")


def _safe_div(num, den):
    den = np.asarray(den, float)
    with np.errstate(divide="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
    return float(out) if out.ndim == 0 else out


def crb_range(p, b, gain, model: CrbModel):
    """Range bound ``beta1 / (p |gain|^2 b)``; infinite when the denominator vanishes."""
    return _safe_div(model.beta1, np.asarray(p, float) * np.abs(gain) ** 2 * np.asarray(b, float))


def crb_angle(p, gain, model: CrbModel):
    return _safe_div(model.beta2, np.asarray(p, float) * np.abs(gain) ** 2)


def crb_velocity(p, gain, model: CrbModel):
    return _safe_div(model.beta3, np.asarray(p, float) * np.abs(gain) ** 2)


def localization_objective(p, b, gain, model: CrbModel):
    """Weighted sum of reciprocal range and angle bounds (bilinear in ``p`` and ``b``)."""
    g2 = np.abs(gain) ** 2
    p = np.asarray(p, float)
    return p * g2 * (model.omega_tau * np.asarray(b, float) / model.beta1 + model.omega_theta / model.beta2)


# --------------------------------------------------------------------------- #
# SBP analysis

@dataclass(frozen=True)
class SbpConfig:
    angles_deg: tuple
    n_tx: int
    n_rx: int
    sigma_eff2: float
    b_total_hz: float
    b_share_hz: float
    interference: str = "exact"

    def __post_init__(self):
        object.__setattr__(self, "angles_deg", tuple(float(a) for a in self.angles_deg))
        if self.b_share_hz > self.b_total_hz or self.b_share_hz <= 0:
            raise DomainError("sbp: need 0 < b_share <= b_total")
        if self.interference not in ("exact", "envelope"):
            raise DomainError("sbp: interference must be 'exact' or 'envelope'")
        if self.sigma_eff2 <= 0:
            raise DomainError("sbp: sigma_eff2 must be > 0")

    @classmethod
    def from_snr_db(cls, angles_deg, n, snr_db, b_total_hz=100e6, b_share_hz=None, interference="exact"):
        """Noise level from ``SNR = 10 log10(n_tx n_rx / sigma_eff2)``."""
        share = b_total_hz / len(angles_deg) if b_share_hz is None else b_share_hz
        return cls(angles_deg, n, n, n * n / 10 ** (snr_db / 10), b_total_hz, share, interference)


def _leakage(theta_q, theta_i, n, mode):
    if mode == "exact":
        return beam_gain(theta_q, theta_i, n)
    delta = np.sin(np.deg2rad(theta_i)) - np.sin(np.deg2rad(theta_q))
    s = abs(np.sin(np.pi * delta / 2))
    return 1.0 if s == 0 else min(1.0, 1.0 / (n * s))


def sbp_ratio(cfg: SbpConfig, ref_index: int = 0):
    """Full-band over orthogonal-band SBP for object ``ref_index``.

    ``interference='envelope'`` replaces each leakage term by the sidelobe
    envelope ``min(1, 1 / (n |sin(pi Δ / 2)|))``, which removes the exact
    pattern's nulls.
    """
    if len(cfg.angles_deg) < 1 or not 0 <= ref_index < len(cfg.angles_deg):
        raise DomainError("sbp: ref_index out of range")
    tq = cfg.angles_deg[ref_index]
    leak = 0.0
    for i, ti in enumerate(cfg.angles_deg):
        if i != ref_index:
            leak += _leakage(tq, ti, cfg.n_tx, cfg.interference) + _leakage(tq, ti, cfg.n_rx, cfg.interference)
    kappa2 = cfg.n_tx * cfg.n_rx
    return cfg.sigma_eff2 / (kappa2 * leak + cfg.sigma_eff2) * cfg.b_total_hz / cfg.b_share_hz


def sbp_sweep(angles_deg, n_values, snr_db, ref_index=None, interference="exact", b_total_hz=100e6):
    """Ratio for each antenna count; the reference defaults to the middle angle."""
    ref = len(angles_deg) // 2 if ref_index is None else ref_index
    return np.array([
        sbp_ratio(SbpConfig.from_snr_db(angles_deg, int(n), snr_db, b_total_hz, interference=interference), ref)
        for n in n_values
    ])


# --------------------------------------------------------------------------- #
# Allocation

@dataclass
class _Layout:
    """Normalised problem data for a batch of localization instances sharing one layout."""

    m: int
    S: np.ndarray
    C: np.ndarray
    p_lo: float
    p_hi: float
    b_lo: float
    b_hi: float
    alpha: np.ndarray   # (B, |S|): rho = alpha u v + delta u
    delta: np.ndarray
    c: np.ndarray       # (B, |C|): P ς / B
    gamma: np.ndarray | None
    rho_ref: np.ndarray  # (B,)
    P: float
    Bt: float
    prop_form: str = "pb"

    @property
    def batch(self):
        return self.alpha.shape[0]


def _layout(scenario, model, gamma, sensing_gain=None, comm_gain=None, prop_form="pb"):
    gains = channel_gains(scenario)
    sg = np.atleast_2d(gains.sensing_gain if sensing_gain is None else sensing_gain)
    cg = np.atleast_2d(gains.comm_gain if comm_gain is None else comm_gain)
    B = max(sg.shape[0], cg.shape[0])
    sg = np.broadcast_to(sg, (B, sg.shape[1]))
    cg = np.broadcast_to(cg, (B, cg.shape[1]))
    m = scenario.n_objects
    P, Bt = scenario.p_total_w, scenario.b_total_hz
    g2 = np.abs(sg) ** 2
    alpha = P * Bt * g2 * model.omega_tau / model.beta1
    delta = P * g2 * model.omega_theta / model.beta2
    rho_ref = (alpha / m**2 + delta / m).mean(axis=1) if alpha.shape[1] else np.ones(B)
    gam = None if gamma is None else np.asarray(gamma, float)
    if gam is not None and (gam.shape != (len(scenario.sensing_idx),) or np.any(gam <= 0)):
        raise DomainError("gamma needs one positive entry per sensing-capable object")
    if prop_form not in ("pb", "rho"):
        raise ValueError(f"unknown proportional form {prop_form!r}")
    return _Layout(
        m, scenario.sensing_idx, scenario.comm_idx,
        scenario.p_box[0] / P, scenario.p_box[1] / P, scenario.b_box[0] / Bt, scenario.b_box[1] / Bt,
        alpha, delta, P * cg / Bt, gam, rho_ref, P, Bt, prop_form,
    )


def _rho(L, u, v, idx):
    return L.alpha[idx] * u[:, L.S] * v[:, L.S] + L.delta[idx] * u[:, L.S]


def _objective_fn(L, criterion):
    def F(u, v, idx):
        r = _rho(L, u, v, idx)
        return r.sum(axis=1) if criterion is Criterion.COMPREHENSIVE else r.min(axis=1)
    return F


def _prop_rows(L, which, other, idx, m):
    """Proportional equalities in the active block, as ``(rows, rhs)``.

    ``pb`` form: ``γ_q p_q b_q = γ_1 p_1 b_1``. ``rho`` form:
    ``γ_1 ρ_q = γ_q ρ_1``, which is linear in ``u`` and affine in ``v``.
    """
    S, gam = L.S, L.gamma
    k = other.shape[0]
    rows = np.zeros((k, len(S) - 1, m))
    rhs = np.zeros((k, len(S) - 1))
    if L.prop_form == "pb":
        for j in range(1, len(S)):
            rows[:, j - 1, S[j]] = gam[j] * other[:, S[j]]
            rows[:, j - 1, S[0]] = -gam[0] * other[:, S[0]]
    else:
        al, de = L.alpha[idx], L.delta[idx]
        o = other[:, S]
        if which == "p":
            slope, const = al * o + de, np.zeros_like(o)
        else:
            slope, const = al * o, de * o
        for j in range(1, len(S)):
            rows[:, j - 1, S[j]] = gam[0] * slope[:, j]
            rows[:, j - 1, S[0]] = -gam[j] * slope[:, 0]
            rhs[:, j - 1] = -(gam[0] * const[:, j] - gam[j] * const[:, 0])
    scale = np.abs(rows).max(axis=2)
    return rows / scale[..., None], rhs / scale


def _eq_system(L, which, other, idx, dim, proportional):
    m = L.m
    k = other.shape[0]
    rows = [np.broadcast_to(np.r_[np.ones(m), np.zeros(dim - m)], (k, 1, dim))]
    rhs = [np.ones((k, 1))]
    if proportional and L.gamma is not None and len(L.S) > 1:
        pr, pc = _prop_rows(L, which, other, idx, m)
        rows.append(np.concatenate([pr, np.zeros((k, pr.shape[1], dim - m))], axis=2))
        rhs.append(pc)
    return np.concatenate(rows, axis=1), np.concatenate(rhs, axis=1)


def _block_problem(L, which, fixed, idx, gamma_c, criterion, x_prev):
    """Linear-objective subproblem in ``which`` ('p' or 'b') with the other block fixed."""
    m, S = L.m, L.S
    k = len(idx)
    fair = criterion is Criterion.FAIRNESS
    dim = m + 1 if fair else m
    ref = L.rho_ref[idx][:, None]
    if which == "p":
        coef = (L.alpha[idx] * fixed[:, S] + L.delta[idx]) / ref
        offset = np.zeros_like(coef)
        lo, hi = L.p_lo, L.p_hi
        rate = _rate.rate_in_power(L.C, L.c[idx], fixed[:, L.C], gamma_c[idx], dim)
    else:
        coef = L.alpha[idx] * fixed[:, S] / ref
        offset = L.delta[idx] * fixed[:, S] / ref
        lo, hi = L.b_lo, L.b_hi
        rate = _rate.rate_in_bandwidth(L.C, L.c[idx], fixed[:, L.C], gamma_c[idx], dim)
    A, c = _eq_system(L, which, fixed, idx, dim, proportional=not fair)
    lower = np.full(dim, lo)
    upper = np.full(dim, hi)
    x0 = x_prev.copy()
    if fair:
        # Rescale so the epigraph variable starts near 1; the barrier gap is absolute.
        t_ref = (coef * x_prev[:, S] + offset).min(axis=1, keepdims=True)
        t_ref = np.where(t_ref > 0, t_ref, 1.0)
        coef, offset = coef / t_ref, offset / t_ref
        cvec = np.zeros(dim)
        cvec[-1] = -1.0
        G = np.zeros((k, len(S), dim))
        G[:, np.arange(len(S)), S] = -coef
        G[:, :, -1] = 1.0
        ineq = (G, offset)
        lower[-1], upper[-1] = -np.inf, np.inf
        t0 = (coef * x_prev[:, S] + offset).min(axis=1)
        x0 = np.concatenate([x_prev, (t0 - 0.05 * np.abs(t0) - 1e-3)[:, None]], axis=1)
        obj = linear_objective(cvec)
    else:
        cvec = np.zeros((k, dim))
        cvec[:, S] = -coef
        obj = linear_objective(cvec)
        ineq = None
    cons = [rate] if len(L.C) else []
    prob = ConvexProblem(dim, obj, linear_eq=(A, c), concave_ineq=cons, lower=lower, upper=upper,
                         linear_ineq=ineq, batch=k)
    return Subproblem(prob, lambda x: x[:, :m], x0)


@dataclass
class InitResult:
    p0: np.ndarray
    b0: np.ndarray
    rate_bps_hz: np.ndarray
    status: np.ndarray


def _max_rate(L, which, fixed, proportional, tol=1e-8):
    m = L.m
    k = fixed.shape[0]
    A, c = _eq_system(L, which, fixed, np.arange(k), m, proportional)
    if which == "p":
        obj = _rate.neg_rate_in_power(L.C, L.c, fixed[:, L.C], m)
        lo, hi = L.p_lo, L.p_hi
    else:
        obj = _rate.neg_rate_in_bandwidth(L.C, L.c, fixed[:, L.C], m)
        lo, hi = L.b_lo, L.b_hi
    prob = ConvexProblem(m, obj, linear_eq=(A, c), lower=np.full(m, lo), upper=np.full(m, hi), batch=k)
    return solve_batch(prob, tol)


def _initial(L, proportional):
    """Rate-maximising seed on a layout: uniform b, best p, then best b for that p."""
    k = L.batch
    v = np.full((k, L.m), 1.0 / L.m)
    if len(L.C) == 0:
        # Nothing to maximise; spread power in proportion to the importance split.
        u = np.full((k, L.m), 1.0 / L.m)
        return u, v, np.zeros(k), np.array([Status.OPTIMAL] * k, dtype=object)
    rp = _max_rate(L, "p", v, proportional)
    u = rp.x_star
    rb = _max_rate(L, "b", u, proportional)
    status = np.array([Status.OPTIMAL if ok else Status.INFEASIBLE for ok in rp.optimal & rb.optimal], dtype=object)
    v_new = np.where(rb.optimal[:, None], rb.x_star, v)
    rate = _rate.spectral_efficiency(u[:, L.C], v_new[:, L.C], L.c).sum(axis=1)
    return u, v_new, rate, status


def initial_bandwidth(scenario, model=None, gamma=None):
    """Rate-maximising seed ``(p0, b0)`` and its spectral efficiency (bps/Hz).

    With ``gamma`` the proportional constraint ``γ_q p_q b_q = γ_1 p_1 b_1`` is
    imposed in both steps; ``gamma=None`` drops it.
    """
    L = _layout(scenario, model or CrbModel(), gamma)
    u, v, rate, status = _initial(L, gamma is not None)
    return InitResult(u[0] * L.P, v[0] * L.Bt, float(rate[0]), status[0])


@dataclass
class LocalizationResult:
    gamma_c: float
    status: str
    allocation: Allocation | None
    crb_range_m2: np.ndarray
    crb_angle_rad2: np.ndarray
    rho: np.ndarray
    ao_iters: int
    seed_rate_bps_hz: float
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    infeasible_half_step: int = -1

    @property
    def feasible(self):
        return self.status in ("Converged", "MaxIter")


def _batched_subproblem(L, which, criterion, gamma_c):
    def build(u, v, idx):
        fixed = v if which == "p" else u
        prev = u if which == "p" else v
        return _block_problem_abs(L, which, fixed, idx, gamma_c, criterion, prev)
    return build


def _block_problem_abs(L, which, fixed, idx, gamma_c, criterion, prev):
    # Local copies so callbacks can index with solver-local positions.
    sub = _Layout(L.m, L.S, L.C, L.p_lo, L.p_hi, L.b_lo, L.b_hi, L.alpha[idx], L.delta[idx],
                  L.c[idx], L.gamma, L.rho_ref[idx], L.P, L.Bt, L.prop_form)
    local = np.arange(len(idx))
    return _block_problem(sub, which, fixed, local, np.asarray(gamma_c)[idx], criterion, prev)


SUBPROBLEM_TOL = 1e-10


def solve_localization(L, gamma_c, criterion, u0, v0, tol=1e-6, max_outer=100, solver_tol=SUBPROBLEM_TOL):
    """Run the AO on a prepared layout from seeds ``(u0, v0)`` (normalised units).

    The subproblem barrier gap is absolute in normalised units, where a
    fairness epigraph value can sit well below 1, hence the tight default.
    """
    criterion = Criterion(criterion)
    gamma_c = np.broadcast_to(np.asarray(gamma_c, float), (L.batch,)).copy()
    return alternating_optimize(
        _batched_subproblem(L, "p", criterion, gamma_c),
        _batched_subproblem(L, "b", criterion, gamma_c),
        (u0, v0), _objective_fn(L, criterion), tol=tol, max_outer=max_outer, sense="max",
        solver_tol=solver_tol,
    )


def localization_sweep(scenario, model, gamma_cs, gamma=None, criterion=Criterion.COMPREHENSIVE,
                       init="algorithm1", tol=1e-6, max_outer=100, prop_form="pb"):
    """Solve the joint allocation for every ``Γ_c`` (batched).

    ``init='uniform'`` keeps the equal bandwidth split as the seed (only the
    power step of the seeding runs, so the first subproblem has a feasible
    start whenever one exists). ``prop_form`` picks the proportional rule used
    with ``gamma``: ``"pb"`` ties the products ``p_q b_q``, ``"rho"`` ties the
    effective SNRs.
    """
    model = model or CrbModel()
    criterion = Criterion(criterion)
    gamma_cs = np.atleast_1d(np.asarray(gamma_cs, float))
    prop = criterion is Criterion.COMPREHENSIVE and gamma is not None
    L1 = _layout(scenario, model, gamma if prop else None, prop_form=prop_form)
    if init == "algorithm1":
        u0, v0, seed_rate, seed_status = _initial(L1, prop)
    elif init == "uniform":
        v0 = np.full((1, L1.m), 1.0 / L1.m)
        if len(L1.C):
            rp = _max_rate(L1, "p", v0, prop)
            u0 = rp.x_star
            seed_status = np.array([Status.OPTIMAL if ok else Status.INFEASIBLE for ok in rp.optimal], dtype=object)
        else:
            u0 = np.full((1, L1.m), 1.0 / L1.m)
            seed_status = np.array([Status.OPTIMAL], dtype=object)
        seed_rate = _rate.spectral_efficiency(u0[:, L1.C], v0[:, L1.C], L1.c).sum(axis=1)
    else:
        raise ValueError(f"unknown init {init!r}")
    nb = len(gamma_cs)
    rep = lambda a: np.repeat(a, nb, axis=0)
    L = _Layout(L1.m, L1.S, L1.C, L1.p_lo, L1.p_hi, L1.b_lo, L1.b_hi, rep(L1.alpha), rep(L1.delta),
                rep(L1.c), L1.gamma, rep(L1.rho_ref), L1.P, L1.Bt, L1.prop_form)
    results = [None] * nb
    if seed_status[0] is not Status.OPTIMAL:
        for i, gc in enumerate(gamma_cs):
            results[i] = _infeasible_result(L, gc, float(seed_rate[0]), "Infeasible", 0)
        return results
    ao = solve_localization(L, gamma_cs, criterion, rep(u0), rep(v0), tol, max_outer)
    trace = np.array(ao.trace)
    gains = channel_gains(scenario).sensing_gain
    for i, gc in enumerate(gamma_cs):
        st = ao.status[i]
        if st in ("Converged", "MaxIter"):
            p, b = ao.p[i] * L.P, ao.b[i] * L.Bt
            alloc = Allocation(p, b, L.P, L.Bt)
            S = L.S
            results[i] = LocalizationResult(
                float(gc), st, alloc, crb_range(p[S], b[S], gains, model), crb_angle(p[S], gains, model),
                localization_objective(p[S], b[S], gains, model), int(ao.outer_iters[i]),
                float(seed_rate[0]), trace[:, i],
            )
        else:
            results[i] = _infeasible_result(L, gc, float(seed_rate[0]), st, int(ao.outer_iters[i]),
                                            int(ao.infeasible_half_step[i]), trace[:, i])
    return results


def _infeasible_result(L, gc, seed_rate, status, iters, half=-1, trace=None):
    nan = np.full(len(L.S), np.nan)
    return LocalizationResult(float(gc), status, None, nan, nan.copy(), nan.copy(), iters, seed_rate,
                              np.zeros(0) if trace is None else trace, half)


def allocate_joint_localization(scenario, model=None, gamma_c=0.0, gamma=None,
                                criterion=Criterion.COMPREHENSIVE, init="algorithm1", **kw):
    """Joint power and bandwidth allocation for localization at one ``Γ_c``."""
    return localization_sweep(scenario, model, [gamma_c], gamma, criterion, init, **kw)[0]
