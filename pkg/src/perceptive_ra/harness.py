"""Scenario files, experiment drivers and the ``perceptive-ra`` command line."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import enum
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import detection, estimation, tracking
from .channel import ArrayConfig, DomainError, MotionInit, ObjectSpec, Role, ScenarioConfig
from .estimation import CrbModel, Criterion
from .optim import AUDIT_TOL, KKT_TOL, ConvexProblem, solve_batch

log = logging.getLogger("perceptive_ra")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4

BUNDLED = ("detection_default", "localization_default", "tracking_default", "tracking_flypast")

DETECT_COLUMNS = ("gamma_c", "object_id", "role", "power_w", "rho", "pd_analytic", "pd_empirical", "feasible")
LOCALIZE_COLUMNS = ("gamma_c", "object_id", "power_w", "bandwidth_hz", "crb_range_m2", "crb_angle_rad2", "rho",
                    "feasible", "ao_iters")
TRACK_COLUMNS = ("epoch", "time_s", "target_id", "true_x_m", "true_y_m", "est_x_m", "est_y_m", "power_w",
                 "bandwidth_hz", "pcrb_trace", "pcrb_pos_trace", "sq_err", "infeasible_frac")
TRACK_CDF_COLUMNS = ("target_id", "mse_m2", "cdf")
SBP_COLUMNS = ("snr_db", "n_antennas", "sbp_ratio", "interference")


class ScenarioError(ValueError):
    """A scenario document failed to parse or validate; the message names the field."""


# --------------------------------------------------------------------------- #
# Scenario I/O

def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _reject_unknown(doc, allowed, where):
    if not isinstance(doc, dict):
        raise ScenarioError(f"{where}: expected an object")
    extra = sorted(set(doc) - set(allowed))
    if extra:
        raise ScenarioError(f"{where}: unknown key(s) {', '.join(extra)}")


def _build(cls, doc, where, allowed=None):
    _reject_unknown(doc, allowed or _fields(cls), where)
    try:
        return cls(**doc)
    except DomainError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc
    except TypeError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def _object_from_doc(doc, i):
    where = f"objects[{i}]"
    _reject_unknown(doc, _fields(ObjectSpec), where)
    doc = dict(doc)
    if "role" not in doc:
        raise ScenarioError(f"{where}.role: required")
    try:
        doc["role"] = Role(doc["role"])
    except ValueError:
        raise ScenarioError(f"{where}.role: must be one of {[r.value for r in Role]}") from None
    if doc.get("motion") is not None:
        mo = _build(MotionInit, doc["motion"], f"{where}.motion")
        doc["motion"] = mo
        d = float(np.hypot(mo.x_m, mo.y_m))
        a = float(np.degrees(np.arctan2(mo.y_m, mo.x_m)))
        doc.setdefault("distance_m", d)
        doc.setdefault("angle_deg", a)
        if abs(doc["distance_m"] - d) > 1e-6 * d or abs(((doc["angle_deg"] - a + 180) % 360) - 180) > 1e-6:
            raise ScenarioError(f"{where}.distance_m/angle_deg: inconsistent with motion start ({d:.6g} m, {a:.6g} deg)")
    if "beam_gain" in doc:
        doc["beam_gain"] = tuple(doc["beam_gain"])
    return _build(ObjectSpec, doc, where)


def scenario_from_dict(doc):
    """Validate a parsed scenario document and build the :class:`ScenarioConfig`."""
    _reject_unknown(doc, _fields(ScenarioConfig), "scenario")
    doc = dict(doc)
    if "objects" not in doc:
        raise ScenarioError("objects: required")
    if not isinstance(doc["objects"], list):
        raise ScenarioError("objects: expected a list")
    doc["objects"] = [_object_from_doc(o, i) for i, o in enumerate(doc["objects"])]
    if "array" in doc:
        doc["array"] = _build(ArrayConfig, doc["array"], "array")
    for key in ("p_box", "b_box"):
        if key in doc:
            if not (isinstance(doc[key], list) and len(doc[key]) == 2):
                raise ScenarioError(f"{key}: expected [min, max]")
            doc[key] = tuple(doc[key])
    if doc.get("crb") is not None:
        _build(CrbModel, doc["crb"], "crb")
    if doc.get("tracking") is not None:
        t = dict(doc["tracking"])
        if "prior_var" in t:
            t["prior_var"] = tuple(t["prior_var"])
        _build(tracking.TrackingConfig, t, "tracking")
    try:
        return ScenarioConfig(**doc)
    except DomainError as exc:
        raise ScenarioError(str(exc)) from exc


def _plain(v):
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if dataclasses.is_dataclass(v):
        return {f.name: _plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
    if isinstance(v, np.generic):
        return v.item()
    return v


def scenario_to_dict(scenario):
    return _plain(scenario)


def load_scenario(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read scenario {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: JSON parse error at line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    return scenario_from_dict(doc)


def save_scenario(scenario, path):
    _atomic_write(Path(path), json.dumps(scenario_to_dict(scenario), indent=2) + "\n")


def bundled_path(name):
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled scenario {name!r}; choose from {', '.join(BUNDLED)}")
    return resources.files("perceptive_ra") / "scenarios" / f"{name}.json"


def bundled_scenarios():
    """Name → :class:`ScenarioConfig` for every scenario shipped with the package."""
    out = {}
    for name in BUNDLED:
        with resources.as_file(bundled_path(name)) as p:
            out[name] = load_scenario(p)
    return out


def resolve_scenario(ref):
    """A path, or the name of a bundled scenario."""
    if ref in BUNDLED:
        return bundled_scenarios()[ref]
    return load_scenario(ref)


# --------------------------------------------------------------------------- #
# CSV

def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path, columns, rows):
    """Write ``rows`` (dicts keyed by ``columns``) atomically."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    _atomic_write(path, buf.getvalue())


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------- #
# Experiments

class Task(str, enum.Enum):
    DETECT = "Detect"
    LOCALIZE = "Localize"
    TRACK = "Track"
    SBP = "Sbp"


@dataclass(frozen=True)
class Sweep:
    param: str
    min: float
    max: float
    steps: int

    def __post_init__(self):
        if not (np.isfinite(self.min) and np.isfinite(self.max)):
            raise ValueError("sweep bounds must be finite")
        if int(self.steps) < 1:
            raise ValueError("sweep steps must be >= 1")
        if self.max < self.min:
            raise ValueError("sweep max must be >= min")

    def values(self):
        return np.linspace(self.min, self.max, int(self.steps))


@dataclass(frozen=True)
class ExperimentSpec:
    """One CLI-level experiment. ``options`` carries task-specific settings."""

    task: Task
    scenario_path: str | None
    out: str
    sweep: Sweep | None = None
    criterion: str = "fairness"
    trials: int = 0
    seed: int | None = None
    options: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if self.trials < 0:
            raise ValueError("trials must be >= 0")
        if self.trials > 0 and self.seed is None:
            raise ValueError("a seed is required whenever trials > 0")


@dataclass
class ExperimentResult:
    exit_code: int
    outputs: list
    rows: int
    summary: list


def _workers():
    raw = os.environ.get("PERCEPTIVE_RA_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"PERCEPTIVE_RA_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("PERCEPTIVE_RA_THREADS must be >= 1")
    return n


def _run_detect(spec, scenario, echo):
    opts = spec.options
    setup = detection.DetectionSetup.from_scenario(scenario, opts.get("pfa", 1e-4))
    gcs = spec.sweep.values()
    reports = detection.sweep_power(scenario, setup, gcs, spec.criterion)
    detection.attach_monte_carlo(reports, setup, spec.trials, spec.seed or 0, workers=_workers())
    names, S = scenario.object_names(), scenario.sensing_idx
    rows = []
    for r in reports:
        for j, i in enumerate(S):
            rows.append(dict(
                gamma_c=r.gamma_c, object_id=names[i], role=scenario.objects[i].role.value,
                power_w=r.allocation.power_w[i] if r.feasible else float("nan"), rho=r.rho[j],
                pd_analytic=r.pd_analytic[j],
                pd_empirical=r.pd_empirical[j] if r.pd_empirical is not None else float("nan"),
                feasible=r.feasible,
            ))
        echo(f"gamma_c={r.gamma_c:.4f} status={r.status.value} "
             f"min_rho={np.nanmin(r.rho) if r.feasible else float('nan'):.6g}")
    write_csv(spec.out, DETECT_COLUMNS, rows)
    return [spec.out], len(rows)


def _run_localize(spec, scenario, echo):
    opts = spec.options
    crit = Criterion(spec.criterion)
    gamma = opts.get("gamma")
    if gamma is None and crit is Criterion.COMPREHENSIVE:
        gamma = [scenario.objects[i].importance for i in scenario.sensing_idx]
    res = estimation.localization_sweep(scenario, tracking.crb_model_for(scenario), spec.sweep.values(), gamma,
                                        crit, init=opts.get("init", "algorithm1"),
                                        prop_form=opts.get("prop_form", "pb"))
    names, S = scenario.object_names(), scenario.sensing_idx
    rows = []
    for r in res:
        for j, i in enumerate(S):
            rows.append(dict(
                gamma_c=r.gamma_c, object_id=names[i],
                power_w=r.allocation.power_w[i] if r.feasible else float("nan"),
                bandwidth_hz=r.allocation.bandwidth_hz[i] if r.feasible else float("nan"),
                crb_range_m2=r.crb_range_m2[j], crb_angle_rad2=r.crb_angle_rad2[j], rho=r.rho[j],
                feasible=r.feasible, ao_iters=r.ao_iters,
            ))
        echo(f"gamma_c={r.gamma_c:.4f} status={r.status} ao_iters={r.ao_iters}")
    write_csv(spec.out, LOCALIZE_COLUMNS, rows)
    return [spec.out], len(rows)


def track_rows(rec, scenario):
    """Trial-averaged per-epoch rows and the per-target CDF of epoch MSE."""
    S = rec.target_ids
    rows = []
    p_mean = rec.power_w.mean(axis=1)
    b_mean = rec.bandwidth_hz.mean(axis=1)
    truth = rec.true_state.mean(axis=1)
    est = rec.filtered_state.mean(axis=1)
    pcrb, pcrb_pos, mse = rec.pcrb_trace.mean(axis=1), rec.pcrb_pos_trace.mean(axis=1), rec.mean_sq_err()
    infeas = rec.infeasible.mean(axis=1)
    for n in range(rec.epochs + 1):
        for q, i in enumerate(S):
            rows.append(dict(
                epoch=n, time_s=float(rec.times_s[n]), target_id=rec.names[q],
                true_x_m=truth[n, q, 0], true_y_m=truth[n, q, 1], est_x_m=est[n, q, 0], est_y_m=est[n, q, 1],
                power_w=p_mean[n, i], bandwidth_hz=b_mean[n, i], pcrb_trace=pcrb[n, q],
                pcrb_pos_trace=pcrb_pos[n, q], sq_err=mse[n, q], infeasible_frac=infeas[n],
            ))
    cdf = []
    for q in range(len(S)):
        vals = np.sort(mse[1:, q])
        for k, v in enumerate(vals):
            cdf.append(dict(target_id=rec.names[q], mse_m2=v, cdf=(k + 1) / len(vals)))
    return rows, cdf


def _run_track(spec, scenario, echo):
    opts = spec.options
    cfg = tracking.TrackingConfig.from_scenario(
        scenario, horizon_s=opts.get("horizon"), dt_s=opts.get("dt"), gamma_c=opts.get("gamma_c"))
    trials = max(spec.trials, 1)
    last = [time.monotonic()]

    def progress(n, total):
        if n == total or time.monotonic() - last[0] > 5:
            last[0] = time.monotonic()
            echo(f"epoch {n}/{total}")

    rec = tracking.run_tracking(scenario, trials=trials, seed=spec.seed or 0, config=cfg,
                                model=tracking.crb_model_for(scenario), progress=progress)
    rows, cdf = track_rows(rec, scenario)
    prefix = spec.out
    epoch_path, cdf_path = f"{prefix}_epochs.csv", f"{prefix}_mse_cdf.csv"
    write_csv(epoch_path, TRACK_COLUMNS, rows)
    write_csv(cdf_path, TRACK_CDF_COLUMNS, cdf)
    echo(f"infeasible epochs (trial-epochs): {int(rec.infeasible.sum())}")
    return [epoch_path, cdf_path], len(rows)


def _run_sbp(spec, scenario, echo):
    opts = spec.options
    angles = opts.get("angles", (-30.0, 0.0, 30.0))
    ns = np.arange(int(spec.sweep.min), int(spec.sweep.max) + 1)
    rows = []
    for snr in opts.get("snr_db", (0.0, 10.0, 20.0)):
        vals = estimation.sbp_sweep(angles, ns, snr, interference=opts.get("interference", "exact"))
        rows += [dict(snr_db=float(snr), n_antennas=int(n), sbp_ratio=v, interference=opts.get("interference", "exact"))
                 for n, v in zip(ns, vals)]
        echo(f"snr_db={snr:g} ratio range [{vals.min():.4g}, {vals.max():.4g}]")
    write_csv(spec.out, SBP_COLUMNS, rows)
    return [spec.out], len(rows)


_RUNNERS = {Task.DETECT: _run_detect, Task.LOCALIZE: _run_localize, Task.TRACK: _run_track, Task.SBP: _run_sbp}


def run_experiment(spec: ExperimentSpec, echo=print) -> ExperimentResult:
    """Dispatch one experiment; infeasible sweep points are data, never errors.

    Returns exit code 3 on I/O failure and 4 on an internal error.
    """
    summary = []

    def say(line):
        summary.append(line)
        echo(line)

    try:
        scenario = resolve_scenario(spec.scenario_path) if spec.scenario_path else None
    except OSError as exc:
        log.error("%s", exc)
        return ExperimentResult(EXIT_IO, [], 0, summary)
    except (ScenarioError, KeyError) as exc:
        log.error("%s", exc)
        return ExperimentResult(EXIT_USAGE, [], 0, summary)
    if scenario is None and spec.task is not Task.SBP:
        log.error("--scenario is required for %s", spec.task.value)
        return ExperimentResult(EXIT_USAGE, [], 0, summary)
    try:
        outputs, n = _RUNNERS[spec.task](spec, scenario, say)
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return ExperimentResult(EXIT_IO, [], 0, summary)
    except Exception:  # noqa: BLE001 - reported as an internal error with traceback
        log.exception("internal error")
        return ExperimentResult(EXIT_INTERNAL, [], 0, summary)
    return ExperimentResult(EXIT_OK, outputs, n, summary)


# --------------------------------------------------------------------------- #
# Solver self-test

@dataclass
class SelftestCase:
    name: str
    solves: int
    worst_kkt: float
    worst_audit: float
    passed: bool
    detail: str = ""


def _check_reports(name, reports):
    kkt = audit = 0.0
    count = 0
    ok = True
    for rep in reports:
        good = rep.optimal
        count += len(rep)
        ok &= bool(good.all())
        if good.any():
            kkt = max(kkt, float(rep.kkt_residual[good].max()))
            audit = max(audit, float(np.max(rep.audit[good])))
    passed = ok and kkt <= KKT_TOL and audit <= AUDIT_TOL
    return SelftestCase(name, count, kkt, audit, passed, "" if ok else "non-optimal status")


def _water_filling_case():
    """Maximise Σ log2(1 + g_i x_i) with Σ x = P, against the analytic water level."""
    g = np.array([4.0, 2.0, 1.0, 0.5, 0.25])
    P = 3.0
    n = len(g)

    def obj(x, idx, order):
        val = -np.log2(1 + g * x).sum(axis=1)
        if order == 0:
            return val, None, None
        grad = -g / ((1 + g * x) * np.log(2))
        hess = np.zeros((len(x), n, n))
        hess[:, np.arange(n), np.arange(n)] = g**2 / ((1 + g * x) ** 2 * np.log(2))
        return val, grad, hess

    prob = ConvexProblem(n, obj, linear_eq=(np.ones((1, n)), np.array([P])), lower=np.zeros(n))
    rep = solve_batch(prob, 1e-10)
    inv = np.sort(1 / g)
    for k in range(n, 0, -1):
        level = (P + inv[:k].sum()) / k
        if level > inv[k - 1]:
            break
    exact = np.maximum(level - 1 / g, 0)
    err = float(np.abs(rep.x_star[0] - exact).max())
    case = _check_reports("water-filling", [rep])
    case.passed &= err <= 1e-6
    case.detail = f"max |x - x_analytic| = {err:.2e}"
    return case


def solver_selftest(echo=print):
    """Solve every bundled instance family and the water-filling oracle; True if all pass."""
    sc = bundled_scenarios()
    cases = [_water_filling_case()]
    det = sc["detection_default"]
    setup = detection.DetectionSetup.from_scenario(det)
    for crit in ("fairness", "comprehensive"):
        prob = detection._build(det, setup, np.array([0.0, 2.0, 4.0, 4.5, 5.0]), crit)
        cases.append(_check_reports(f"detection_default/{crit}", [solve_batch(prob)]))
    loc = sc["localization_default"]
    gamma = [loc.objects[i].importance for i in loc.sensing_idx]
    L1 = estimation._layout(loc, tracking.crb_model_for(loc), gamma)
    u0, v0, _, _ = estimation._initial(L1, True)
    reps = [estimation._max_rate(L1, "p", v0, True)]
    gcs = np.array([3.0, 5.0, 6.5])
    nb = len(gcs)
    rep = lambda a: np.repeat(a, nb, axis=0)
    L = estimation._Layout(L1.m, L1.S, L1.C, L1.p_lo, L1.p_hi, L1.b_lo, L1.b_hi, rep(L1.alpha), rep(L1.delta),
                           rep(L1.c), L1.gamma, rep(L1.rho_ref), L1.P, L1.Bt, L1.prop_form)
    ao = estimation.solve_localization(L, gcs, Criterion.COMPREHENSIVE, rep(u0), rep(v0))
    cases.append(_check_reports("localization_default/comprehensive", reps + ao.reports))
    for name in ("tracking_default", "tracking_flypast"):
        trk = sc[name]
        rec_reports = tracking.first_epoch_reports(trk)
        cases.append(_check_reports(f"{name}/epoch1", rec_reports))
    for c in cases:
        echo(f"{'PASS' if c.passed else 'FAIL'} {c.name}: solves={c.solves} kkt={c.worst_kkt:.2e} "
             f"audit={c.worst_audit:.2e} {c.detail}".rstrip())
    return all(c.passed for c in cases), cases


# --------------------------------------------------------------------------- #
# CLI

SCHEMA_EXAMPLE = "detection_default"


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    def globals_(suppress):
        g = argparse.ArgumentParser(add_help=False)
        # Subcommands repeat the global flags without defaults so either position works.
        dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g.add_argument("--scenario", default=dflt(None), help="scenario JSON path or bundled name")
        g.add_argument("--out", default=dflt(None), help="output CSV path (track-run: file prefix)")
        g.add_argument("--seed", type=int, default=dflt(None))
        g.add_argument("--log-level", default=dflt("WARNING"), choices=["DEBUG", "INFO", "WARNING", "ERROR"])
        return g

    common = globals_(True)
    p = _Parser(prog="perceptive-ra", description="ISAC power and bandwidth allocation experiments.",
                parents=[globals_(False)])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("schema", parents=[common], help="print an example scenario document")

    d = sub.add_parser("detect-sweep", parents=[common], help="detection power allocation over a Γ_c sweep")
    d.add_argument("--criterion", choices=["fairness", "comprehensive"], default="fairness")
    d.add_argument("--gamma-c-min", type=float, default=0.0)
    d.add_argument("--gamma-c-max", type=float, default=6.0)
    d.add_argument("--steps", type=int, default=60)
    d.add_argument("--pfa", type=float, default=1e-4)
    d.add_argument("--trials", type=int, default=0)

    lo = sub.add_parser("localize-sweep", parents=[common], help="joint localization allocation over a Γ_c sweep")
    lo.add_argument("--criterion", choices=["fairness", "comprehensive"], default="comprehensive")
    lo.add_argument("--gamma-c-min", type=float, default=1.0)
    lo.add_argument("--gamma-c-max", type=float, default=7.5)
    lo.add_argument("--steps", type=int, default=27)
    lo.add_argument("--gamma", type=_floats, default=None, help="proportional factors, e.g. 1,0.5,0.667")
    lo.add_argument("--init", choices=["algorithm1", "uniform"], default="algorithm1")
    lo.add_argument("--prop-form", choices=["pb", "rho"], default="pb",
                    help="proportional rule: tie p*b products or effective SNRs")

    t = sub.add_parser("track-run", parents=[common], help="closed-loop tracking Monte Carlo")
    t.add_argument("--horizon", type=float, default=None)
    t.add_argument("--dt", type=float, default=None)
    t.add_argument("--trials", type=int, default=500)
    t.add_argument("--gamma-c", type=float, default=None)
    t.add_argument("--out-prefix", default=None)

    s = sub.add_parser("sbp-analyze", parents=[common], help="full-band vs orthogonal-band SBP ratio")
    s.add_argument("--angles", type=_floats, default=[-30.0, 0.0, 30.0])
    s.add_argument("--n-min", type=int, default=2)
    s.add_argument("--n-max", type=int, default=128)
    s.add_argument("--snr-db", type=_floats, default=[0.0, 10.0, 20.0])
    s.add_argument("--interference", choices=["exact", "envelope"], default="exact")

    sub.add_parser("solver-selftest", parents=[common], help="solver oracle suite")
    return p


def _spec_from_args(a):
    if a.command == "detect-sweep":
        return ExperimentSpec(Task.DETECT, a.scenario, a.out, Sweep("gamma_c", a.gamma_c_min, a.gamma_c_max, a.steps),
                              a.criterion, a.trials, a.seed if a.seed is not None or a.trials == 0 else None,
                              {"pfa": a.pfa})
    if a.command == "localize-sweep":
        return ExperimentSpec(Task.LOCALIZE, a.scenario, a.out,
                              Sweep("gamma_c", a.gamma_c_min, a.gamma_c_max, a.steps), a.criterion, 0, a.seed,
                              {"gamma": a.gamma, "init": a.init, "prop_form": a.prop_form})
    if a.command == "track-run":
        return ExperimentSpec(Task.TRACK, a.scenario, a.out_prefix or a.out, None, "comprehensive", a.trials,
                              a.seed, {"horizon": a.horizon, "dt": a.dt, "gamma_c": a.gamma_c})
    if a.command == "sbp-analyze":
        return ExperimentSpec(Task.SBP, a.scenario, a.out, Sweep("n", a.n_min, a.n_max, a.n_max - a.n_min + 1),
                              "fairness", 0, a.seed,
                              {"angles": a.angles, "snr_db": a.snr_db, "interference": a.interference})
    raise AssertionError(a.command)


def main(argv=None):
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, a.log_level), format="%(levelname)s %(name)s: %(message)s")
    if a.command == "schema":
        with resources.as_file(bundled_path(SCHEMA_EXAMPLE)) as p:
            sys.stdout.write(Path(p).read_text())
        return EXIT_OK
    if a.command == "solver-selftest":
        try:
            ok, _ = solver_selftest()
        except Exception:  # noqa: BLE001
            log.exception("self-test crashed")
            return EXIT_INTERNAL
        return EXIT_OK if ok else EXIT_INTERNAL
    if not (a.out or getattr(a, "out_prefix", None)):
        parser.error("--out is required")
    if a.command in ("detect-sweep", "localize-sweep") and a.steps < 1:
        parser.error("--steps must be >= 1")
    if a.command in ("detect-sweep", "track-run") and a.trials > 0 and a.seed is None:
        parser.error("--seed is required when --trials > 0")
    if a.command == "sbp-analyze" and not 1 <= a.n_min <= a.n_max:
        parser.error("need 1 <= --n-min <= --n-max")
    try:
        spec = _spec_from_args(a)
    except ValueError as exc:
        parser.error(str(exc))
    return run_experiment(spec).exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
