"""Config-driven experiments: validation, presets, task dispatch and result bundles.

A config is a JSON object::

    {
      "model":  {"kind": "equiprobable" | "random_walk" | "custom", "M": 2, "p_c": 0.5, "matrix": [[...]]},
      "params": {"p_s": 0.8, "C_u": 12, "omega": 1, "delta_cap": 200, "aoi_cap": 200},
      "solver": {"method": "rpi" | "rvi", "tol": 1e-10, "max_iter": 100000,
                 "aperiodicity": 0.5},
      "sim":    {"horizon": 100000, "replications": 20, "seed": 0, "warmup": 10000, "crn": true},
      "policies": ["optimal", "zero_wait", "sample_at_change", "threshold_star", {"threshold": 6}],
      "trace":  {"horizon": 200, "policy": "optimal"},
      "sweep":  {"axis": "params.p_s", "grid": [...], "task": "threshold" | "solve" | "simulate",
                 "series": {"key": "params.C_u", "values": [6, 12, 24]}},
      "workers": 1
    }

Every run writes ``<prefix>.json`` (results), ``<prefix>.csv`` (flat table)
and ``<prefix>.manifest.json`` (config echo, seed, versions, wall time). A
manifest is itself a valid ``--config`` and reproduces the CSV byte for byte.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import os
import platform
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy

from . import __version__
from .mdp import Kernel, Lattice, SystemParams, pr_table_for, transition
from .process import ProcessModelError, build_model
from .simulator import (
    SampleAtChange,
    SimConfig,
    SolvedTable,
    Threshold,
    ZeroWait,
    compare_policies,
    simulate,
    trace,
    write_trace_csv,
)
from .solver import (
    SingularEvaluation,
    policy_threshold_shape,
    recurrent_states,
    relative_policy_iteration,
    relative_value_iteration,
    structural_lower_boundary,
    verify_value_properties,
)
from .threshold import blocking_probability, optimal_threshold, average_cost_closed_form

TASKS = ("solve", "threshold", "simulate", "sweep", "verify", "trace")
SWEEP_TASKS = ("threshold", "solve", "simulate")

DEFAULTS = {
    "model": {"kind": "equiprobable", "M": 2},
    "params": {"p_s": 1.0, "C_u": 12.0, "omega": 1.0, "delta_cap": 200, "aoi_cap": 200},
    "solver": {"method": "rpi", "tol": 1e-10, "max_iter": 100_000, "aperiodicity": 0.5},
    "sim": {"horizon": 100_000, "replications": 20, "seed": 0, "warmup": 10_000, "crn": True},
    "policies": ["optimal", "zero_wait", "sample_at_change"],
    "trace": {"horizon": 200, "policy": "optimal"},
    "workers": 1,
}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = [errors] if isinstance(errors, str) else list(errors)
        super().__init__("; ".join(self.errors))


class UnknownPreset(KeyError):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {k} is not an object")
    node[keys[-1]] = value


def get_path(cfg: dict, dotted: str):
    node = cfg
    for k in dotted.split("."):
        node = node[k]
    return node


def parse_override(text: str) -> tuple[str, object]:
    """``key.path=value``; the value is parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, dict) and "manifest_version" in data:
        return data["config"]
    return data


def resolve_config(data: dict, overrides=(), env=None) -> dict:
    """Defaults, then the file, then ``--set`` overrides, then ``AOCI_SEED``."""
    cfg = _merge(DEFAULTS, data or {})
    for key, value in overrides:
        set_path(cfg, key, value)
    env = os.environ if env is None else env
    if env.get("AOCI_SEED"):
        try:
            cfg["sim"]["seed"] = int(env["AOCI_SEED"])
        except ValueError as exc:
            raise ConfigError(f"AOCI_SEED must be an integer, got {env['AOCI_SEED']!r}") from exc
    return cfg


def _policy_entry_ok(p):
    if p in ("optimal", "zero_wait", "sample_at_change", "threshold_star"):
        return True
    return isinstance(p, dict) and set(p) == {"threshold"} and isinstance(p["threshold"], int) and p["threshold"] >= 1


def validate(cfg: dict, task: str) -> None:
    errors = []
    if task not in TASKS:
        errors.append(f"task: unknown task {task!r} (expected one of {', '.join(TASKS)})")
    try:
        build_model(cfg["model"])
    except (KeyError, TypeError) as exc:
        errors.append(f"model: missing or malformed field {exc}")
    except ProcessModelError as exc:
        errors.append(f"model: {exc}")
    try:
        SystemParams(**cfg["params"])
    except TypeError as exc:
        errors.append(f"params: {exc}")
    except ValueError as exc:
        errors.append(f"params: {exc}")
    solver = cfg["solver"]
    if solver.get("method") not in ("rpi", "rvi"):
        errors.append("solver.method: must be 'rpi' or 'rvi'")
    if not isinstance(solver.get("tol"), (int, float)) or isinstance(solver.get("tol"), bool) or solver["tol"] <= 0:
        errors.append("solver.tol: positive number required")
    if not isinstance(solver.get("max_iter"), int) or isinstance(solver.get("max_iter"), bool) or solver["max_iter"] < 1:
        errors.append("solver.max_iter: positive integer required")
    tau = solver.get("aperiodicity")
    if not isinstance(tau, (int, float)) or isinstance(tau, bool) or not 0 < tau <= 1:
        errors.append("solver.aperiodicity: number in (0, 1] required")
    sim = cfg["sim"]
    try:
        SimConfig(int(sim["horizon"]), int(sim["replications"]), int(sim["seed"]), int(sim["warmup"]))
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"sim: {exc}")
    if task in ("simulate", "sweep"):
        pols = cfg.get("policies")
        if not isinstance(pols, list) or not pols:
            errors.append("policies: need a non-empty list")
        else:
            for i, p in enumerate(pols):
                if not _policy_entry_ok(p):
                    errors.append(f"policies[{i}]: unknown policy {p!r}")
    if task == "trace":
        tr = cfg.get("trace", {})
        if not isinstance(tr.get("horizon"), int) or tr["horizon"] < 1:
            errors.append("trace.horizon: positive integer required")
        if not _policy_entry_ok(tr.get("policy")):
            errors.append(f"trace.policy: unknown policy {tr.get('policy')!r}")
    if task == "sweep":
        sw = cfg.get("sweep")
        if not isinstance(sw, dict):
            errors.append("sweep: section required for the sweep task")
        else:
            grid = sw.get("grid")
            if not isinstance(grid, list) or len(grid) < 1:
                errors.append("sweep.grid: non-empty list required")
            elif any(b <= a for a, b in zip(grid, grid[1:])) and any(b >= a for a, b in zip(grid, grid[1:])):
                errors.append("sweep.grid: must be strictly monotone")
            if not isinstance(sw.get("axis"), str) or sw["axis"].split(".")[0] not in ("params", "model"):
                errors.append("sweep.axis: dotted path under params or model required")
            if sw.get("task", "threshold") not in SWEEP_TASKS:
                errors.append(f"sweep.task: must be one of {', '.join(SWEEP_TASKS)}")
            series = sw.get("series")
            if series is not None and not (isinstance(series, dict) and isinstance(series.get("key"), str)
                                           and isinstance(series.get("values"), list)):
                errors.append("sweep.series: needs 'key' and a 'values' list")
    if errors:
        raise ConfigError(errors)


def _grid(start, stop, step):
    n = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(n)]


def preset(name: str) -> dict:
    """Named experiment config (data tables only; no plotting)."""
    comparison_sim = {"horizon": 100_000, "replications": 20, "seed": 2021, "warmup": 10_000, "crn": True}
    presets = {
        "fig3": {
            "task": "sweep",
            "model": {"kind": "equiprobable", "M": 2},
            "params": {"p_s": 1.0, "omega": 1.0},
            "sweep": {"axis": "params.p_s", "grid": _grid(0.1, 1.0, 0.05), "task": "threshold",
                      "series": {"key": "params.C_u", "values": [6, 12, 24]}},
        },
        "fig4": {
            "task": "sweep",
            "model": {"kind": "equiprobable", "M": 2},
            "params": {"p_s": 1.0, "omega": 1.0},
            "sweep": {"axis": "model.M", "grid": list(range(2, 21)), "task": "threshold",
                      "series": {"key": "params.C_u", "values": [6, 12, 24]}},
        },
        "fig5": {
            "task": "solve",
            "model": {"kind": "random_walk", "M": 4, "p_c": 0.5},
            "params": {"p_s": 0.8, "C_u": 12.0, "omega": 1.0},
        },
        "fig6": {
            "task": "solve",
            "model": {"kind": "random_walk", "M": 6, "p_c": 0.5},
            "params": {"p_s": 0.8, "C_u": 12.0, "omega": 1.0},
        },
        "fig7": {
            "task": "sweep",
            "model": {"kind": "equiprobable", "M": 2},
            "params": {"p_s": 1.0, "C_u": 12.0, "omega": 1.0},
            "sim": comparison_sim,
            "policies": ["optimal", "zero_wait", "sample_at_change"],
            "sweep": {"axis": "params.p_s", "grid": _grid(0.1, 1.0, 0.1), "task": "simulate"},
        },
        "fig8": {
            "task": "sweep",
            "model": {"kind": "random_walk", "M": 4, "p_c": 0.2},
            "params": {"p_s": 1.0, "C_u": 12.0, "omega": 1.0},
            "sim": comparison_sim,
            "policies": ["optimal", "zero_wait", "sample_at_change"],
            "sweep": {"axis": "params.p_s", "grid": _grid(0.1, 1.0, 0.1), "task": "simulate"},
        },
        "fig9": {
            "task": "sweep",
            "model": {"kind": "random_walk", "M": 4, "p_c": 0.2},
            "params": {"p_s": 0.5, "C_u": 12.0, "omega": 1.0},
            "sim": comparison_sim,
            "policies": ["optimal", "zero_wait", "sample_at_change"],
            "sweep": {"axis": "params.omega", "grid": [0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0], "task": "simulate"},
        },
    }
    if name not in presets:
        raise UnknownPreset(f"unknown preset {name!r}; known: {', '.join(sorted(presets))}")
    return copy.deepcopy(presets[name])


# -- task implementations -------------------------------------------------------------


@dataclass
class TaskResult:
    results: dict
    table_header: list[str]
    table_rows: list[list]
    failed: bool = False
    extra_csv: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)


def _instance(cfg):
    model = build_model(cfg["model"])
    params = SystemParams(**cfg["params"])
    return params, model


def _rvi(params, model, solver):
    return relative_value_iteration(
        params, model, tol=solver["tol"], max_iter=solver["max_iter"], aperiodicity=solver["aperiodicity"]
    )


def _solve(cfg, params, model):
    solver = cfg["solver"]
    if solver["method"] == "rvi":
        return _rvi(params, model, solver)
    return relative_policy_iteration(params, model)


def _case1_pz(params, model):
    pr = pr_table_for(model, params)
    if np.ptp(pr) > 1e-12:
        raise ConfigError("threshold: closed form needs a return probability independent of the AoI")
    return blocking_probability(params.p_s, float(pr[0]))


def task_threshold(cfg) -> TaskResult:
    params, model = _instance(cfg)
    p_z = _case1_pz(params, model)
    if p_z >= 1.0:
        raise ConfigError("threshold: blocking probability is 1 (p_s = 0 or p_r = 1); cost diverges")
    rep = optimal_threshold(p_z, params.weighted_cost)
    rows = []
    for w in range(1, max(2 * rep.threshold, 20) + 1):
        J, J1, J2 = average_cost_closed_form(w, p_z, params.weighted_cost)
        rows.append([w, J, J1, J2])
    return TaskResult({"threshold": rep.to_dict()}, ["Omega", "J", "J1", "J2"], rows)


def task_solve(cfg) -> TaskResult:
    params, model = _instance(cfg)
    rep = _solve(cfg, params, model)
    shape = policy_threshold_shape(rep.policy)
    boundary = structural_lower_boundary(params, model)
    props = verify_value_properties(rep.V, model, params)
    lat = rep.policy.lattice
    results = {
        "solve": {k: v for k, v in rep.to_dict().items() if k != "policy"},
        "shape": {
            "pure_threshold": shape.pure,
            "threshold": shape.threshold,
            "monotone_columns": shape.monotone,
            "switch": [c.switch for c in shape.columns],
        },
        "lower_boundary": boundary.levels,
        "value_properties": props.summary(),
    }
    rows = [[int(d), int(a), int(u), float(v)] for d, a, u, v in zip(lat.aoci, lat.aoi, rep.policy.actions, rep.V.values)]
    return TaskResult(results, ["Delta", "delta", "action", "V"], rows)


def _policy_specs(entries, params, model, solved=None):
    specs = []
    for p in entries:
        if p == "optimal":
            specs.append(SolvedTable(solved.policy))
        elif p == "zero_wait":
            specs.append(ZeroWait())
        elif p == "sample_at_change":
            specs.append(SampleAtChange())
        elif p == "threshold_star":
            p_z = _case1_pz(params, model)
            specs.append(Threshold(optimal_threshold(p_z, params.weighted_cost).threshold, name="threshold_star"))
        else:
            specs.append(Threshold(int(p["threshold"]), name=f"threshold_{p['threshold']}"))
    return specs


def _sim_config(cfg):
    s = cfg["sim"]
    return SimConfig(int(s["horizon"]), int(s["replications"]), int(s["seed"]), int(s["warmup"]))


def _simulate_point(cfg):
    params, model = _instance(cfg)
    solved = _solve(cfg, params, model) if "optimal" in cfg["policies"] else None
    specs = _policy_specs(cfg["policies"], params, model, solved)
    sim_cfg = _sim_config(cfg)
    if len(specs) == 1:
        stats = [simulate(params, model, specs[0], sim_cfg)]
    else:
        stats = compare_policies(params, model, specs, sim_cfg, common_random_numbers=bool(cfg["sim"]["crn"]))
    out = []
    for st in stats:
        d = st.to_dict()
        d["per_replication"] = [float(x) for x in st.per_replication]
        out.append(d)
    return {"theta_optimal": None if solved is None else solved.theta, "policies": out}


SIM_COLUMNS = ["policy", "avg_aoci", "avg_update_cost", "total_avg_cost", "ci_half_width", "update_rate"]


def task_simulate(cfg) -> TaskResult:
    res = _simulate_point(cfg)
    rows = [[p[c] for c in SIM_COLUMNS] for p in res["policies"]]
    return TaskResult({"simulate": res}, SIM_COLUMNS, rows)


def task_trace(cfg) -> TaskResult:
    params, model = _instance(cfg)
    entry = cfg["trace"]["policy"]
    solved = _solve(cfg, params, model) if entry == "optimal" else None
    spec = _policy_specs([entry], params, model, solved)[0]
    tr = trace(params, model, spec, int(cfg["trace"]["horizon"]), seed=int(cfg["sim"]["seed"]))
    buf = io.StringIO()
    write_trace_csv(tr, buf)
    lines = list(csv.reader(io.StringIO(buf.getvalue())))
    results = {
        "trace": {
            "policy": spec.name,
            "horizon": len(tr.records),
            "deliveries": len(tr.updates) - 1,
            "consistent": tr.consistent(),
            "updates": [[u.index, u.generated, u.delivered, u.content + 1] for u in tr.updates],
        }
    }
    return TaskResult(results, lines[0], lines[1:], failed=not tr.consistent())


def _sweep_point(args):
    cfg, inner = args
    if inner == "threshold":
        return task_threshold(cfg).results["threshold"]
    if inner == "solve":
        params, model = _instance(cfg)
        rep = _solve(cfg, params, model)
        shape = policy_threshold_shape(rep.policy)
        return {"theta": rep.theta, "iterations": rep.iterations, "pure_threshold": shape.pure,
                "threshold": shape.threshold, "monotone_columns": shape.monotone}
    return _simulate_point(cfg)


def _apply_axis(cfg, axis, value):
    point = copy.deepcopy(cfg)
    set_path(point, axis, value)
    if axis == "model.M" and point["model"]["kind"] == "custom":
        raise ConfigError("sweep.axis: model.M cannot be swept for a custom matrix")
    return point


def task_sweep(cfg) -> TaskResult:
    sw = cfg["sweep"]
    inner = sw.get("task", "threshold")
    axis = sw["axis"]
    series = sw.get("series")
    series_values = series["values"] if series else [None]
    jobs, labels = [], []
    for sv in series_values:
        base = _apply_axis(cfg, series["key"], sv) if series else cfg
        for x in sw["grid"]:
            point = _apply_axis(base, axis, x)
            validate(point, "simulate" if inner == "simulate" else inner)
            jobs.append((point, inner))
            labels.append((sv, x))
    workers = int(cfg.get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_sweep_point, jobs))
    else:
        outputs = [_sweep_point(j) for j in jobs]

    series_col = series["key"] if series else None
    rows: list[list] = []
    points = []
    if inner == "threshold":
        header = [axis] + ([series_col] if series else []) + ["relaxed", "threshold", "J", "J1", "J2"]
        for (sv, x), out in zip(labels, outputs):
            rows.append([x] + ([sv] if series else []) + [out["relaxed"], out["threshold"], out["J"], out["J1"], out["J2"]])
    elif inner == "solve":
        header = [axis] + ([series_col] if series else []) + ["theta", "threshold", "pure_threshold", "iterations"]
        for (sv, x), out in zip(labels, outputs):
            rows.append([x] + ([sv] if series else []) + [out["theta"], out["threshold"], int(out["pure_threshold"]), out["iterations"]])
    else:
        header = [axis] + ([series_col] if series else []) + SIM_COLUMNS
        for (sv, x), out in zip(labels, outputs):
            for p in out["policies"]:
                rows.append([x] + ([sv] if series else []) + [p[c] for c in SIM_COLUMNS])
    for (sv, x), out in zip(labels, outputs):
        points.append({"axis_value": x, "series_value": sv, "result": out})
    results = {"sweep": {"axis": axis, "series": series_col, "task": inner, "points": points}}
    verdict = _sweep_verdict(cfg, inner, labels, outputs)
    if verdict is not None:
        results["sweep"]["monotonicity"] = verdict
    return TaskResult(results, header, rows)


def _sweep_verdict(cfg, inner, labels, outputs):
    axis = cfg["sweep"]["axis"]
    if inner != "threshold" or axis not in ("params.p_s", "params.C_u", "model.M"):
        return None
    expect = 1 if axis == "params.C_u" else -1
    if cfg["sweep"]["grid"][0] > cfg["sweep"]["grid"][-1]:
        expect = -expect
    verdicts = {}
    by_series: dict = {}
    for (sv, _), out in zip(labels, outputs):
        by_series.setdefault(str(sv), []).append(out["threshold"])
    for key, th in by_series.items():
        verdicts[key] = all(expect * (b - a) >= 0 for a, b in zip(th, th[1:]))
    return {"expected": "non-decreasing" if expect > 0 else "non-increasing", "holds": verdicts}


def task_verify(cfg) -> TaskResult:
    """Invariant suite on one instance; ``failed`` is set if any check fails."""
    params, model = _instance(cfg)
    checks: dict[str, dict] = {}

    def record(name, ok, **detail):
        checks[name] = {"passed": bool(ok), **detail}

    pr = pr_table_for(model, params)
    record("return_probability_range", pr.min() >= 0 and pr.max() <= 1)

    lat = Lattice.for_params(params)
    bad_sum = bad_closed = 0
    for s in lat.states():
        for a in (0, 1):
            dist = transition(params, pr, s, a)
            if abs(sum(dist.values()) - 1.0) > 1e-12:
                bad_sum += 1
            for nxt in dist:
                if not (1 <= nxt.aoi <= min(nxt.aoci, params.aoi_cap) and nxt.aoci <= params.delta_cap):
                    bad_closed += 1
    record("kernel_normalised", bad_sum == 0, violations=bad_sum)
    record("lattice_closed", bad_closed == 0, violations=bad_closed)

    rpi = relative_policy_iteration(params, model)
    rvi = _rvi(params, model, cfg["solver"])
    rec = recurrent_states(params, model, rpi.policy)
    same = np.array_equal(rpi.policy.actions[rec], rvi.policy.actions[rec])
    dtheta = abs(rpi.theta - rvi.theta)
    record("solvers_agree", same and dtheta < 1e-9 and rvi.converged, theta_rpi=rpi.theta, theta_rvi=rvi.theta,
           theta_gap=dtheta, policy_mismatch_on_recurrent=int(np.count_nonzero(rpi.policy.actions[rec] != rvi.policy.actions[rec])))
    record("theta_at_least_one", rpi.theta >= 1.0 - 1e-12, theta=rpi.theta)
    th = rpi.theta_history
    record("rpi_theta_monotone", all(b <= a + 1e-9 * max(1, abs(a)) for a, b in zip(th, th[1:])), history=th)

    props = verify_value_properties(rpi.V, model, params)
    record("value_monotone_in_aoci", not props.l1_violations, witnesses=props.l1_violations)
    record("value_aoci_slope", not props.l2_violations, witnesses=props.l2_violations)
    record("value_aoi_slope", not props.l3_violations, witnesses=props.l3_violations,
           checked=props.l3_checked, skipped=props.l3_skipped)
    diagnostics = {
        "aoi_slope_all_pairs": {
            "checked": props.pairwise_checked,
            "violations": len(props.pairwise_violations),
            "witnesses": props.pairwise_violations,
        },
        "aoi_slope_shift_closed": {
            "checked": props.shift_closed_checked,
            "violations": len(props.shift_closed_violations),
            "witnesses": props.shift_closed_violations,
        },
        "short_circuit_rate": rpi.short_circuit_rate,
        "shadow_mismatches": rpi.shadow_mismatches,
    }

    boundary = structural_lower_boundary(params, model)
    grid = rpi.policy.table()
    viol = []
    for d in range(1, params.aoi_cap + 1):
        level = boundary[d]
        if level is None or not rpi.held_always[d - 1]:
            continue
        col = grid[max(level, d) - 1 :, d - 1]
        if not np.all(col == 1):
            viol.append(d)
    record("structure_above_lower_boundary", not viol, violating_aoi=viol,
           condition_held_for=int(rpi.held_always.sum()))

    kernel = Kernel(params, pr)
    q0, q1 = kernel.q_values(rpi.V.values)
    resid = float(np.max(np.abs(np.minimum(q0, q1) - rpi.theta - rpi.V.values)))
    record("bellman_fixed_point", resid < 1e-7 * max(1.0, float(np.max(np.abs(rpi.V.values)))), residual=resid)

    shape = policy_threshold_shape(rpi.policy)
    if np.ptp(pr) <= 1e-12 and params.p_s > 0 and pr[0] < 1:
        rep = optimal_threshold(blocking_probability(params.p_s, float(pr[0])), params.weighted_cost)
        ok = shape.pure and shape.threshold is not None and abs(shape.threshold - rep.threshold) <= 1
        record("case1_threshold_matches_closed_form", ok, solved=shape.threshold, closed_form=rep.threshold)

    rows = [[name, int(c["passed"])] for name, c in checks.items()]
    failed = not all(c["passed"] for c in checks.values())
    return TaskResult({"verify": checks, "diagnostics": diagnostics, "passed": not failed}, ["check", "passed"], rows,
                      failed=failed)


DISPATCH = {
    "solve": task_solve,
    "threshold": task_threshold,
    "simulate": task_simulate,
    "sweep": task_sweep,
    "verify": task_verify,
    "trace": task_trace,
}


# -- bundle output --------------------------------------------------------------------


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


@dataclass
class ResultBundle:
    task: str
    results: dict
    csv_text: str
    manifest: dict
    paths: dict[str, str]
    failed: bool = False


def run(config: dict, task: str, out: str | None = None) -> ResultBundle:
    """Validate ``config``, run ``task`` and write the bundle under prefix ``out``.

    ``config`` must already be resolved (see :func:`resolve_config`). Raises
    :class:`ConfigError` for invalid input; other errors propagate.
    """
    validate(config, task)
    start = time.perf_counter()
    try:
        result = DISPATCH[task](config)
    except ConfigError:
        raise
    except SingularEvaluation as exc:
        raise RuntimeError(f"{task}: {exc}") from exc
    wall = time.perf_counter() - start
    csv_text = _csv_text(result.table_header, result.table_rows)
    manifest = {
        "manifest_version": 1,
        "task": task,
        "config": config,
        "seed": config["sim"]["seed"],
        "versions": {
            "aoci": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_time_s": wall,
    }
    paths = {}
    if out:
        paths = {"json": f"{out}.json", "csv": f"{out}.csv", "manifest": f"{out}.manifest.json"}
        _atomic_write(paths["json"], json.dumps(_jsonable({"task": task, **result.results}), indent=2, sort_keys=True) + "\n")
        _atomic_write(paths["csv"], csv_text)
        _atomic_write(paths["manifest"], json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return ResultBundle(task, result.results, csv_text, manifest, paths, result.failed)
