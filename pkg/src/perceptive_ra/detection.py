"""Detection QoS and the power-only allocation programs for the detection task."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _rate
from .channel import Allocation, ChannelGains, DomainError, channel_gains
from .optim import ConvexProblem, Status, linear_objective, solve_batch

DEFAULT_PFA = (1e-2, 1e-4, 1e-6)


def chi2_cdf_2dof(x):
    """CDF of the central chi-squared law with two degrees of freedom."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("chi2_cdf_2dof: x must be >= 0")
    out = -np.expm1(-x / 2.0)
    return float(out) if out.ndim == 0 else out


def _check_pfa(p_fa):
    if not np.all((np.asarray(p_fa) > 0) & (np.asarray(p_fa) < 1)):
        raise DomainError("p_fa must lie in (0, 1)")


def detection_threshold(p_fa, n_rx, sigma_r2):
    """Energy threshold giving false-alarm rate ``p_fa`` for noise power ``n_rx * sigma_r2``."""
    _check_pfa(p_fa)
    return -n_rx * sigma_r2 * np.log(p_fa)


def prob_detection(rho, p_fa):
    """Closed-form detection probability ``p_fa ** (1 / (1 + rho))``."""
    _check_pfa(p_fa)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise DomainError("rho must be >= 0")
    out = np.power(p_fa, 1.0 / (1.0 + rho))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MonteCarloResult:
    pd: float
    pfa: float
    trials: int
    seed: int
    hits: int
    false_alarms: int


def simulate_detection(power, gain, p_fa, trials, seed):
    """Monte Carlo energy detector on a standardised complex-normal model.

    The echo has variance ``rho = power * gain`` against unit-variance noise, so
    the threshold is ``-ln p_fa`` and the statistic is ``|x|^2``.
    """
    _check_pfa(p_fa)
    trials = int(trials)
    if trials < 1:
        raise DomainError("trials must be >= 1")
    rho = float(power) * float(gain)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((4, trials)) * np.sqrt(0.5)
    noise0 = z[0] ** 2 + z[1] ** 2
    sig = np.sqrt(rho) * (z[2] + 1j * z[3])
    w = rng.standard_normal((2, trials)) * np.sqrt(0.5)
    energy1 = np.abs(sig + w[0] + 1j * w[1]) ** 2
    thr = -np.log(p_fa)
    hits = int(np.count_nonzero(energy1 > thr))
    fas = int(np.count_nonzero(noise0 > thr))
    return MonteCarloResult(hits / trials, fas / trials, trials, int(seed), hits, fas)


@dataclass(frozen=True)
class DetectionSetup:
    p_fa: float
    n_rx: int
    sigma_r2: float
    gains: ChannelGains
    gamma: np.ndarray

    def __post_init__(self):
        _check_pfa(self.p_fa)
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))
        if np.any(self.gamma <= 0):
            raise DomainError("gamma must be > 0")
        if len(self.gamma) != len(self.gains.sensing_gain):
            raise DomainError("gamma needs one entry per sensing-capable object")

    @classmethod
    def from_scenario(cls, scenario, p_fa=1e-4, gamma=None):
        if gamma is None:
            gamma = [scenario.objects[i].importance for i in scenario.sensing_idx]
        return cls(p_fa, scenario.array.n_rx, scenario.radar_noise_w, channel_gains(scenario), gamma)


@dataclass
class DetectionReport:
    gamma_c: float
    status: Status
    allocation: Allocation | None
    rho: np.ndarray
    pd_analytic: np.ndarray
    pd_empirical: np.ndarray | None = None
    kkt_residual: float = float("nan")
    stage: str = ""
    mc: list = field(default_factory=list)

    @property
    def feasible(self):
        return self.status is Status.OPTIMAL


def _build(scenario, setup, gamma_cs, criterion):
    m = scenario.n_objects
    S, C = scenario.sensing_idx, scenario.comm_idx
    P, Bt = scenario.p_total_w, scenario.b_total_hz
    gs = setup.gains.sensing_gain
    if np.any(gs <= 0):
        raise DomainError("sensing gains must be > 0 for power allocation")
    rho_ref = P * gs.mean() / max(len(S), 1)
    coef = P * gs / rho_ref  # rho_q / rho_ref = coef_q * u_q
    nb = len(gamma_cs)
    v = np.full(len(C), 1.0 / m)  # detection keeps the uniform bandwidth split
    c = P * setup.gains.comm_gain / Bt
    lo = np.full(m, scenario.p_box[0] / P)
    hi = np.full(m, scenario.p_box[1] / P)
    if criterion == "fairness":
        dim = m + 1
        cvec = np.zeros(dim)
        cvec[-1] = -1.0
        G = np.zeros((len(S), dim))
        G[np.arange(len(S)), S] = -coef
        G[:, -1] = 1.0
        ineq = (G, np.zeros(len(S)))
        A = np.zeros((1, dim))
        A[0, :m] = 1.0
        lo = np.append(lo, -np.inf)
        hi = np.append(hi, np.inf)
    else:
        dim = m
        cvec = np.zeros(dim)
        cvec[S] = -coef
        ineq = None
        gam = setup.gamma
        rows = [np.ones(m)]
        for j in range(1, len(S)):
            r = np.zeros(m)
            r[S[j]] = gam[0] * coef[j]
            r[S[0]] = -gam[j] * coef[0]
            rows.append(r / np.abs(r).max())
        A = np.array(rows)
    cons = [_rate.rate_in_power(C, c, v, np.asarray(gamma_cs, float), dim)] if len(C) else []
    beq = np.zeros(A.shape[0])
    beq[0] = 1.0
    return ConvexProblem(
        dim, linear_objective(cvec), linear_eq=(A, beq), concave_ineq=cons,
        lower=lo, upper=hi, linear_ineq=ineq, batch=nb,
    )


def _reports(scenario, setup, gamma_cs, rep):
    m = scenario.n_objects
    S = scenario.sensing_idx
    P, Bt = scenario.p_total_w, scenario.b_total_hz
    out = []
    for i, gc in enumerate(gamma_cs):
        st = rep.status[i]
        if st is Status.OPTIMAL:
            p = rep.x_star[i, :m] * P
            alloc = Allocation(p, np.full(m, Bt / m), P, Bt)
            rho = p[S] * setup.gains.sensing_gain
            pd = prob_detection(rho, setup.p_fa)
        else:
            alloc = None
            rho = np.full(len(S), np.nan)
            pd = np.full(len(S), np.nan)
        out.append(DetectionReport(float(gc), st, alloc, rho, np.atleast_1d(pd),
                                   kkt_residual=float(rep.kkt_residual[i]), stage=str(rep.stage[i])))
    return out


def attach_monte_carlo(reports, setup, trials, seed, workers=1):
    """Fill ``mc`` and ``pd_empirical`` on feasible reports.

    Per-cell seeds are drawn up front in report order, so the result does not
    depend on ``workers``.
    """
    if not trials:
        return
    rng = np.random.default_rng(seed)
    jobs = []
    for r in reports:
        if r.feasible:
            seeds = rng.integers(0, 2**63 - 1, size=len(r.rho))
            jobs.append((r, [(float(rho), int(s)) for rho, s in zip(r.rho, seeds)]))
    run = lambda cells: [simulate_detection(rho, 1.0, setup.p_fa, trials, s) for rho, s in cells]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, [cells for _, cells in jobs]))
    else:
        results = [run(cells) for _, cells in jobs]
    for (r, _), mc in zip(jobs, results):
        r.mc = mc
        r.pd_empirical = np.array([m.pd for m in mc])


def sweep_power(scenario, setup, gamma_cs, criterion="fairness", trials=0, seed=0, tol=1e-7):
    """Solve the detection program for every ``Γ_c`` in one batched call."""
    if criterion not in ("fairness", "comprehensive"):
        raise ValueError(f"unknown criterion {criterion!r}")
    gamma_cs = np.atleast_1d(np.asarray(gamma_cs, float))
    prob = _build(scenario, setup, gamma_cs, criterion)
    reports = _reports(scenario, setup, gamma_cs, solve_batch(prob, tol))
    attach_monte_carlo(reports, setup, trials, seed)
    return reports


def allocate_power_fairness(scenario, setup, gamma_c, trials=0, seed=0):
    """Max-min ``rho`` power allocation under the sum-rate threshold ``gamma_c`` (bps/Hz)."""
    return sweep_power(scenario, setup, [gamma_c], "fairness", trials, seed)[0]


def allocate_power_comprehensive(scenario, setup, gamma_c, trials=0, seed=0):
    """Max ``Σ rho`` with ``rho_q / rho_1 = gamma_q / gamma_1``."""
    return sweep_power(scenario, setup, [gamma_c], "comprehensive", trials, seed)[0]


@dataclass
class FairnessStages:
    flat_end: float
    equal_end: float
    infeasible_from: float
    pinned_object: int


def _stage_labels(scenario, setup, gcs, flat_rho, tol=1e-5):
    out = []
    for r in sweep_power(scenario, setup, gcs, "fairness"):
        if not r.feasible:
            out.append(3)
        elif np.ptp(r.rho) > tol * r.rho.max():
            out.append(2)
        elif r.rho.min() < flat_rho * (1 - tol):
            out.append(1)
        else:
            out.append(0)
    return np.array(out)


def fairness_stages(scenario, setup, gamma_lo=0.0, gamma_hi=20.0, rounds=8, points=17):
    """Locate the Γ_c boundaries between the flat, equal-declining and split stages.

    Stage labels are nondecreasing in Γ_c, so each boundary is bracketed on a
    grid and the bracket is refined ``rounds`` times (all three at once, batched).
    """
    base = allocate_power_fairness(scenario, setup, gamma_lo)
    if not base.feasible:
        raise DomainError("fairness program infeasible at the lower end of the search interval")
    flat = base.rho.min()
    brackets = np.array([[gamma_lo, gamma_hi]] * 3, float)
    found = np.ones(3, bool)
    for _ in range(rounds):
        grids = np.array([np.linspace(lo, hi, points) for lo, hi in brackets])
        labels = _stage_labels(scenario, setup, grids.ravel(), flat).reshape(3, points)
        for k in range(3):
            above = np.nonzero(labels[k] >= k + 1)[0]
            if above.size == 0:
                found[k] = False
                continue
            j = above[0]
            if j == 0:
                brackets[k] = [grids[k, 0], grids[k, 0]]
            else:
                brackets[k] = [grids[k, j - 1], grids[k, j]]
    b1, b2, b3 = (brackets[k, 1] if found[k] else float("nan") for k in range(3))
    pinned = -1
    if np.isfinite(b2):
        probe = b2 + 0.5 * ((b3 if np.isfinite(b3) else b2 + 0.1) - b2)
        r = allocate_power_fairness(scenario, setup, probe)
        if r.feasible:
            S = scenario.sensing_idx
            pinned = int(S[np.argmin(np.abs(r.allocation.power_w[S] - scenario.p_box[0]))])
    return FairnessStages(float(b1), float(b2), float(b3), pinned)
