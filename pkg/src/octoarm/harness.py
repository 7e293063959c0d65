"""Experiment configuration, error metrics, runs, and sweep orchestration.

Configs are JSON with SI units in the key names.  Every omitted field takes
the reference-arm default, so an empty config reproduces the standard
reaching experiment.  All CSV output is deterministic for a fixed config;
floats are serialized with 17 significant digits.
"""

import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .errors import ConfigError, OctoarmError
from .muscles import CHANNELS, MuscleParams, build_muscles
from .rod import build_properties
from .se3 import Grid, Pose, reconstruct_pose
from .shaping import fb_solve
from .tasks import Cylinder, GraspTask, ReachTask

SCHEMA_VERSION = 1

_DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "arm": {
        "length_m": 0.2,
        "r_base_m": 0.012,
        "r_tip_m": 0.0012,
        "youngs_modulus_Pa": 10e3,
        "shear_modulus_Pa": 40e3 / 9.0,
        "density_kg_m3": 1050.0,
        "zeta_v_per_s": 0.02,
        "zeta_w_per_s": 0.02,
        "n_elements": 100,
        "base_position_m": [0.0, 0.0, 0.0],
        # Director columns d1, d2, d3; the arm initially points along e1.
        "base_d1": [0.0, 1.0, 0.0],
        "base_d2": [0.0, 0.0, 1.0],
        "base_d3": [1.0, 0.0, 0.0],
    },
    "muscles": {
        "tm_sigma_max_Pa": 15e3,
        "tm_area_ratio": 1.0 / 8.0,
        "lm_sigma_max_Pa": 10e3,
        "lm_area_ratio": 1.0 / 16.0,
        "lm_beta": 5.0 / 8.0,
        "om_sigma_max_Pa": 100e3,
        "om_area_ratio": 1.0 / 256.0,
        "om_beta": 15.0 / 16.0,
        "om_winding_cycles": 6.0,
    },
    "task": {
        "type": "reach",
        "target_m": [0.01, 0.15, 0.06],
        "mu_pos": 1e6,
        "mu_dir": 1e3,
        # Grasp-only fields (ignored for reach):
        "cylinder_center_m": [0.06, -0.05, 0.02],
        "cylinder_axis": [0.0, 0.0, 1.0],
        "cylinder_radius_m": 0.02,
        "cylinder_height_m": 0.15,
        "interior_point_m": [0.06, -0.05, 0.02],
        "wrap_start_fraction": 0.3,
        "penalty_weight": 1e7,
    },
    "solver": {
        "eta": 1e-8,
        "max_iterations": 100000,
        "accept_tol": 1e-12,
        "window": 100,
        "window_rel_tol": 1e-10,
    },
    "dynamics": {
        "dt_s": 1e-5,
        "t_final_s": 5.0,
        "ramp_s": 0.1,
        "record_stride": 1000,
    },
    "output": {
        "dir": "out",
    },
}


def config_defaults():
    return json.loads(json.dumps(_DEFAULTS))


def _merge(base, override, path=""):
    if not isinstance(override, dict):
        raise ConfigError(path or "<root>", "expected an object")
    out = dict(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(here, "unknown field")
        if isinstance(base[key], dict):
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = value
    return out


def _require_number(cfg, section, key, positive=False, non_negative=False):
    value = cfg[section][key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key}", "expected a number")
    if not math.isfinite(value):
        raise ConfigError(f"{section}.{key}", "must be finite")
    if positive and not value > 0:
        raise ConfigError(f"{section}.{key}", "must be positive")
    if non_negative and value < 0:
        raise ConfigError(f"{section}.{key}", "must be non-negative")
    return float(value)


def _require_vec3(cfg, section, key):
    value = cfg[section][key]
    if (not isinstance(value, (list, tuple)) or len(value) != 3
            or any(isinstance(v, bool) or not isinstance(v, (int, float))
                   for v in value)):
        raise ConfigError(f"{section}.{key}", "expected a 3-vector of numbers")
    return [float(v) for v in value]


def validate_config(config):
    """Merge onto defaults and type/range-check every field."""
    cfg = _merge(_DEFAULTS, config or {})
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError("schema_version",
                          f"unsupported version {cfg['schema_version']}")
    for key in ("length_m", "r_base_m", "r_tip_m", "youngs_modulus_Pa",
                "shear_modulus_Pa", "density_kg_m3"):
        _require_number(cfg, "arm", key, positive=True)
    for key in ("zeta_v_per_s", "zeta_w_per_s"):
        _require_number(cfg, "arm", key, non_negative=True)
    n_el = cfg["arm"]["n_elements"]
    if isinstance(n_el, bool) or not isinstance(n_el, int) or n_el < 1:
        raise ConfigError("arm.n_elements", "expected a positive integer")
    for key in ("base_position_m", "base_d1", "base_d2", "base_d3"):
        _require_vec3(cfg, "arm", key)
    for key in cfg["muscles"]:
        _require_number(cfg, "muscles", key, positive=True)
    if cfg["task"]["type"] not in ("reach", "grasp"):
        raise ConfigError("task.type", "must be 'reach' or 'grasp'")
    _require_vec3(cfg, "task", "target_m")
    _require_vec3(cfg, "task", "cylinder_center_m")
    _require_vec3(cfg, "task", "cylinder_axis")
    _require_vec3(cfg, "task", "interior_point_m")
    for key in ("mu_pos", "mu_dir", "cylinder_radius_m", "cylinder_height_m",
                "penalty_weight"):
        _require_number(cfg, "task", key, positive=True)
    _require_number(cfg, "task", "wrap_start_fraction", non_negative=True)
    _require_number(cfg, "solver", "eta", positive=True)
    iters = cfg["solver"]["max_iterations"]
    if isinstance(iters, bool) or not isinstance(iters, int) or iters < 0:
        raise ConfigError("solver.max_iterations", "expected a non-negative integer")
    _require_number(cfg, "solver", "accept_tol", non_negative=True)
    _require_number(cfg, "solver", "window_rel_tol", non_negative=True)
    _require_number(cfg, "dynamics", "dt_s", positive=True)
    _require_number(cfg, "dynamics", "t_final_s", non_negative=True)
    _require_number(cfg, "dynamics", "ramp_s", non_negative=True)
    if not isinstance(cfg["output"]["dir"], str):
        raise ConfigError("output.dir", "expected a string")
    return cfg


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    return validate_config(raw)


def _canonical(value):
    if isinstance(value, dict):
        return {k: _canonical(value[k]) for k in sorted(value)}
    if isinstance(value, list):
        return [_canonical(v) for v in value]
    if isinstance(value, float):
        return float(f"{value:.17g}")
    return value


def serialize_config(cfg):
    return json.dumps(_canonical(cfg), indent=2, sort_keys=True)


def config_hash(cfg):
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


def build_system(cfg):
    """Instantiate (grid, props, muscles, base pose) from a validated config."""
    arm = cfg["arm"]
    grid = Grid(arm["n_elements"], arm["length_m"])
    props = build_properties(
        grid, r_base=arm["r_base_m"], r_tip=arm["r_tip_m"],
        youngs=arm["youngs_modulus_Pa"], shear_modulus=arm["shear_modulus_Pa"],
        density=arm["density_kg_m3"], zeta_v=arm["zeta_v_per_s"],
        zeta_w=arm["zeta_w_per_s"])
    mus = cfg["muscles"]
    params = MuscleParams(
        tm_sigma_max=mus["tm_sigma_max_Pa"], tm_area_ratio=mus["tm_area_ratio"],
        lm_sigma_max=mus["lm_sigma_max_Pa"], lm_area_ratio=mus["lm_area_ratio"],
        lm_beta=mus["lm_beta"], om_sigma_max=mus["om_sigma_max_Pa"],
        om_area_ratio=mus["om_area_ratio"], om_beta=mus["om_beta"],
        om_winding_cycles=mus["om_winding_cycles"])
    mset = build_muscles(props, params)
    q0 = Pose(np.array(arm["base_position_m"]),
              np.column_stack([arm["base_d1"], arm["base_d2"], arm["base_d3"]]))
    return grid, props, mset, q0


def build_objective(cfg, props, q0):
    """Task objective plus the initial (rest) pose used to define it."""
    grid = props.grid
    pose0 = reconstruct_pose(q0, *props.rest_strain(), grid)
    task_cfg = cfg["task"]
    if task_cfg["type"] == "reach":
        task = ReachTask.toward(np.array(task_cfg["target_m"]), pose=pose0,
                                mu_pos=task_cfg["mu_pos"],
                                mu_dir=task_cfg["mu_dir"])
    else:
        cyl = Cylinder(center=task_cfg["cylinder_center_m"],
                       axis=task_cfg["cylinder_axis"],
                       radius=task_cfg["cylinder_radius_m"],
                       height=task_cfg["cylinder_height_m"])
        task = GraspTask(cylinder=cyl,
                         x_star=np.array(task_cfg["interior_point_m"]),
                         wrap_start=task_cfg["wrap_start_fraction"] * grid.length,
                         radius_fn=props.radius_at,
                         mu_pos=task_cfg["mu_pos"], mu_dir=task_cfg["mu_dir"],
                         penalty_weight=task_cfg["penalty_weight"])
    return task, pose0


def reach_errors(pose, task, arm_length):
    """Tip position error normalized by arm length; orientation error in [0, 1]."""
    e_pos = float(np.linalg.norm(task.x_star - pose.x[-1])) / arm_length
    e_dir = float(np.sum((task.q_star - pose.Q[-1]) ** 2)) / 8.0
    return e_pos, e_dir


def grasp_errors(pose, task, grid, radius_fn):
    """Wrap-region integral errors, trapezoid over nodes past the wrap start."""
    s = grid.s_nodes
    ind = (s >= task.wrap_start).astype(float)
    gap = np.linalg.norm(task.x_star - pose.x, axis=-1) - radius_fn(s)
    e_pos_density = ind * 0.5 * (gap / task.cylinder.radius) ** 2
    b = task.x_star - pose.x
    b = b / np.maximum(np.linalg.norm(b, axis=-1, keepdims=True), 1e-15)
    d1 = pose.Q[:, :, 0]
    e_dir_density = ind * 0.5 * (1.0 - np.einsum("ni,ni->n", b, d1))
    return (float(np.trapezoid(e_pos_density, s)),
            float(np.trapezoid(e_dir_density, s)))


def _fmt(value):
    return f"{value:.17g}"


def _write_csv(path, header, rows):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")
    os.replace(tmp, path)


def _write_activations(path, grid, alpha):
    header = ["s_m"] + [f"alpha_{c}" for c in CHANNELS]
    rows = [[float(grid.s_elems[i])] + [float(v) for v in alpha.values[:, i]]
            for i in range(grid.n_elements)]
    _write_csv(path, header, rows)


def _write_pose(path, grid, pose):
    header = ["s_m", "x_m", "y_m", "z_m",
              "d1x", "d1y", "d1z", "d2x", "d2y", "d2z", "d3x", "d3y", "d3z"]
    rows = []
    for i in range(grid.n_elements + 1):
        q = pose.Q[i]
        rows.append([float(grid.s_nodes[i])] + [float(v) for v in pose.x[i]]
                    + [float(v) for v in q[:, 0]] + [float(v) for v in q[:, 1]]
                    + [float(v) for v in q[:, 2]])
    _write_csv(path, header, rows)


def _write_history(path, history):
    header = ["iter", "J", "J_muscle", "J_task", "max_dH_dalpha"]
    rows = [[int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4])]
            for r in history]
    _write_csv(path, header, rows)


def run(config, out_dir=None, dynamics=False):
    """Execute one experiment: design the activation, write artifacts.

    Returns the report dictionary (also written to report.json).  When
    ``dynamics`` is true, a time-domain validation run follows the design and
    its diagnostics are added to the report.
    """
    cfg = validate_config(config)
    out_dir = out_dir or cfg["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)

    grid, props, mset, q0 = build_system(cfg)
    task, pose0 = build_objective(cfg, props, q0)
    solver = cfg["solver"]

    t_start = time.perf_counter()
    result = fb_solve(props, mset, q0, task, eta=solver["eta"],
                      max_iters=solver["max_iterations"],
                      accept_tol=solver["accept_tol"],
                      window=solver["window"],
                      window_rel_tol=solver["window_rel_tol"])
    wall = time.perf_counter() - t_start

    _write_activations(os.path.join(out_dir, "activations.csv"), grid,
                       result.alpha)
    _write_pose(os.path.join(out_dir, "pose.csv"), grid, result.pose)
    _write_history(os.path.join(out_dir, "J_history.csv"), result.history)

    report = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash(cfg),
        "timestamp_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "task_type": cfg["task"]["type"],
        "objective_value": result.objective_value,
        "iterations": result.iterations,
        "stop_reason": result.stop_reason,
        "wall_time_s": wall,
    }
    if cfg["task"]["type"] == "reach":
        e_pos, e_dir = reach_errors(result.pose, task, grid.length)
        report["e_pos"] = e_pos
        report["e_dir"] = e_dir
    else:
        e_pos, e_dir = grasp_errors(result.pose, task, grid, props.radius_at)
        report["e_pos"] = e_pos
        report["e_dir"] = e_dir
        psi = task.violation(grid.s_nodes, result.pose.x)
        report["psi_max_m"] = float(psi.max())

    if dynamics:
        report["dynamics"] = _dynamics_validation(cfg, props, mset, q0,
                                                  result, out_dir)

    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    return report


def _dynamics_validation(cfg, props, mset, q0, result, out_dir):
    from .dynamics import SimConfig, simulate

    dyn = cfg["dynamics"]
    sim_cfg = SimConfig(dt=dyn["dt_s"], t_final=dyn["t_final_s"],
                        ramp=dyn["ramp_s"], record_stride=dyn["record_stride"])
    res = simulate(props, mset, result.alpha, sim_cfg, q0)

    grid = props.grid
    header = ["t_s"]
    for i in range(grid.n_elements + 1):
        header += [f"x{i}", f"y{i}", f"z{i}"]
    header += ["H_J", "T_J", "V_J", "dissipation_W", "max_p"]
    rows = []
    for k in range(res.times.shape[0]):
        rows.append([float(res.times[k])]
                    + [float(v) for v in res.positions[k].ravel()]
                    + [float(res.hamiltonian[k]), float(res.kinetic[k]),
                       float(res.potential[k]), float(res.dissipation_rate[k]),
                       float(res.max_momentum[k])])
    _write_csv(os.path.join(out_dir, "trajectory.csv"), header, rows)

    tip_err = float(np.linalg.norm(res.final_state.x[-1] - result.pose.x[-1]))
    scale = max(float(np.abs(res.hamiltonian).max()), 1e-30)
    post = res.times >= dyn["ramp_s"]
    h_post = res.hamiltonian[post]
    max_rise = float(np.diff(h_post).max()) if h_post.size > 1 else 0.0
    return {
        "final_tip_error_m": tip_err,
        "final_tip_error_rel_L": tip_err / grid.length,
        "strain_error_max": float(np.abs(res.final_strain
                                         - result.equilibrium.strain).max()),
        "hamiltonian_max_rise": max_rise,
        "hamiltonian_scale": scale,
        "final_max_momentum": float(res.max_momentum[-1]),
    }


def _case_updates(variation):
    """Expand a variation spec into (case_id, config update, params) tuples."""
    axis = variation.get("axis")
    cases = []
    if axis == "reach_grid":
        counts = variation.get("counts", [3, 3, 3])
        center = np.asarray(variation.get("cube_center_m", [0.1, 0.0, 0.0]))
        side = float(variation.get("cube_side_m", 0.2))
        coords = []
        for c in counts:
            # c points strictly inside [-side/2, side/2].
            coords.append([(side * (2 * k + 1) / (2 * c)) - side / 2.0
                           for k in range(c)])
        idx = 0
        for ox in coords[0]:
            for oy in coords[1]:
                for oz in coords[2]:
                    target = center + np.array([ox, oy, oz])
                    cases.append((f"reach_{idx:03d}",
                                  {"task": {"type": "reach",
                                            "target_m": list(target)}},
                                  {"target_x_m": float(target[0]),
                                   "target_y_m": float(target[1]),
                                   "target_z_m": float(target[2])}))
                    idx += 1
    elif axis == "grasp_radius":
        for idx, r in enumerate(variation.get("radii_m", [0.01, 0.02, 0.03, 0.04])):
            cases.append((f"radius_{idx:03d}",
                          {"task": {"type": "grasp",
                                    "cylinder_radius_m": float(r)}},
                          {"cylinder_radius_m": float(r)}))
    elif axis in ("grasp_rotation_e1", "grasp_rotation_e2"):
        unit = {"grasp_rotation_e1": np.array([1.0, 0.0, 0.0]),
                "grasp_rotation_e2": np.array([0.0, 1.0, 0.0])}[axis]
        from .se3 import so3_exp

        for idx, deg in enumerate(variation.get("angles_deg",
                                                [-60, -30, 0, 30, 60])):
            rot = so3_exp(np.deg2rad(float(deg)) * unit)
            axis_vec = rot @ np.array([0.0, 0.0, 1.0])
            cases.append((f"rot_{idx:03d}",
                          {"task": {"type": "grasp",
                                    "cylinder_axis": [float(v) for v in axis_vec]}},
                          {"angle_deg": float(deg)}))
    else:
        raise OctoarmError(f"unknown sweep axis: {axis!r}")
    return cases


def _run_case(payload):
    case_id, cfg, out_dir, dynamics = payload
    started = time.perf_counter()
    try:
        report = run(cfg, out_dir=out_dir, dynamics=dynamics)
        report["case_id"] = case_id
        report["wall_time_s"] = time.perf_counter() - started
        return case_id, report, None
    except Exception as exc:  # record and keep the sweep going
        return case_id, None, f"{type(exc).__name__}: {exc}"


def sweep(config, variation, out_dir=None, threads=1, dynamics=False):
    """Run independent variations of a base config, one row per case.

    Case outputs land in per-case subdirectories; the merged sweep.csv is
    written in case-id order regardless of completion order.
    """
    cfg = validate_config(config)
    out_dir = out_dir or cfg["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    cases = _case_updates(variation)

    payloads = []
    for case_id, update, params in cases:
        case_cfg = _merge(cfg, update)
        payloads.append((case_id, case_cfg, os.path.join(out_dir, case_id),
                         dynamics))

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_case, payloads))
    else:
        outcomes = [_run_case(p) for p in payloads]

    param_keys = sorted({k for _, _, params in cases for k in params})
    header = (["case_id"] + [k if isinstance(k, str) else str(k)
                             for k in param_keys]
              + ["e_pos", "e_dir", "J", "iterations", "psi_max_m",
                 "wall_time_s", "error"])
    rows = []
    results = {}
    by_id = {case_id: (report, err) for case_id, report, err in outcomes}
    for case_id, update, params in cases:
        report, err = by_id[case_id]
        results[case_id] = report
        row = [case_id]
        for k in param_keys:
            v = params.get(k, "")
            row.append(_fmt(v) if isinstance(v, float) else str(v))
        if report is None:
            row += ["nan"] * 5 + [err]
        else:
            row += [_fmt(report["e_pos"]), _fmt(report["e_dir"]),
                    _fmt(report["objective_value"]),
                    str(report["iterations"]),
                    _fmt(report.get("psi_max_m", float("nan"))),
                    _fmt(report["wall_time_s"]), ""]
        rows.append(row)

    path = os.path.join(out_dir, "sweep.csv")
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    os.replace(tmp, path)
    return results
