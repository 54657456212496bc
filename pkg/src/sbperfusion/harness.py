"""Run orchestration: solves, sweeps, slices, residuals and figure data."""

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from ._accel import BACKEND, worker_count
from .field import boundary_residuals, slice_grid, total_flux_constant
from .geometry import validate_scene
from .kernel import assemble_kernel_matrix, select_theta_order
from .scene import VesselScene, builtin, resolve
from .solver1d import AccuracyError, build_mesh, solve_psb

MODES = ("solve", "sweep-eps", "sweep-mesh", "slice", "residuals", "figures")
DEFAULT_SWEEP_EPS = (0.04, 0.02, 0.01)
DEFAULT_SWEEP_NODES = (100, 200, 400, 800)
FIGURE_EPS = (0.02, 0.015, 0.01, 0.0075, 0.005)
FIGURE_PARAMS = {"hi": (0.05, 10.0), "lo": (1.0, 1.0)}
RESIDUAL_BASE_REFINE = 0.9
CONVERGENCE_RTOL = 1e-6


class SceneValidationError(ValueError):
    def __init__(self, scene, report):
        names = ", ".join(f"{c.name} ({c.detail}; value={c.value:.4g})" for c in report.failures)
        super().__init__(f"scene {scene.name!r} rejected: {names}")
        self.report = report


class ComparisonError(ValueError):
    pass


@dataclass
class RunConfig:
    scene: str
    mode: str
    out: str
    eps: list = None
    nodes: list = None
    theta_order: int = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.eps is not None:
            self.eps = [float(e) for e in self.eps]
            if any(not (0 < e <= 0.1) for e in self.eps):
                raise ValueError("eps values must lie in (0, 0.1]")
        if self.nodes is not None:
            self.nodes = [int(n) for n in self.nodes]
            if any(n < 16 for n in self.nodes):
                raise ValueError("nodes must be >= 16")


@dataclass
class RunReport:
    mode: str
    scene_hash: str
    scene: dict
    defaults: dict
    results: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(_jsonable(self.__dict__), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def defaults_ledger(scene, N, theta_order):
    return {
        "ell_rule": "1 - sqrt(1 - eps^2)",
        "e1_initial": list(scene.e1),
        "gamma": scene.gamma,
        "base_refine": scene.base_refine,
        "N": int(N),
        "theta_order": int(theta_order),
        "radius": scene.radius,
        "scaling": "unit frame with eta*L^2 and omega*L; s, a scaled by L, a4ps by L^3, a4ps_s by L^2",
        "backend": BACKEND,
        "version": __version__,
    }


# ---------------------------------------------------------------------------
# Core pipeline
# ---------------------------------------------------------------------------


def require_valid(scene):
    report = validate_scene(scene)
    if not report.accepted:
        raise SceneValidationError(scene, report)
    return report


def solve_scene(scene, N=None, theta_order=None, workers=1):
    """Validate, assemble and solve. Returns ``(solution, kernel_matrix)``."""
    require_valid(scene)
    mesh = build_mesh(scene, N)
    order = theta_order or scene.theta_order or select_theta_order(scene.geometry, mesh)
    kmat = assemble_kernel_matrix(scene.geometry, mesh, theta_order=order, workers=workers)
    return solve_psb(scene, mesh, kmat), kmat


def nodal_flux(sol):
    """``a^4 p_s`` at nodes: midpoint average inside, zero at the tip."""
    f = sol.flux
    out = np.empty(len(sol.s))
    out[1:-1] = 0.5 * (f[1:] + f[:-1])
    out[0] = f[0] - 0.5 * sol.mesh.h[0] * sol.source[0]
    out[-1] = 0.0
    return out


def solution_table(scene, sol):
    """Physical-unit columns ``s, a, p, a4ps, a4ps_s``."""
    L = scene.length
    return {
        "s": sol.s * L,
        "a": sol.mesh.a * L,
        "p": sol.p,
        "a4ps": nodal_flux(sol) * L**3,
        "a4ps_s": sol.source * L**2,
    }


def _member(scene_dict, N, theta_order, residuals):
    """One sweep member; top level so it can run in a worker process."""
    scene = VesselScene.from_dict(scene_dict)
    sol, kmat = solve_scene(scene, N, theta_order)
    out = {"eps": scene.eps, "N": sol.mesh.N, "theta_order": kmat.theta_order, "s": sol.s, "p": sol.p,
           "norms": sol.norms, "condition": sol.meta["condition"], "table": solution_table(scene, sol)}
    if residuals:
        out["residuals"] = boundary_residuals(scene, sol).summary
    return out


def _map(fn, argsets, workers):
    if workers <= 1 or len(argsets) <= 1:
        return [fn(*a) for a in argsets]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*argsets)))


def loglog_slope(x, y):
    x, y = np.asarray(x, dtype=float), np.abs(np.asarray(y, dtype=float))
    if np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


class _Outputs:
    """Tracks files written in a run so a failure can remove them."""

    def __init__(self, root):
        self.root = root
        self.files = []
        self._made_root = not os.path.isdir(root)
        os.makedirs(root, exist_ok=True)

    def path(self, name):
        p = os.path.join(self.root, name)
        self.files.append(p)
        return p

    def csv(self, name, columns):
        keys = list(columns)
        n = len(next(iter(columns.values())))
        with open(self.path(name), "w") as fh:
            fh.write(",".join(keys) + "\n")
            for i in range(n):
                fh.write(",".join(_fmt(columns[k][i]) for k in keys) + "\n")
        return name

    def json(self, name, obj):
        with open(self.path(name), "w") as fh:
            fh.write(json.dumps(_jsonable(obj), indent=2, sort_keys=True))
        return name

    def cleanup(self):
        for p in self.files:
            if os.path.exists(p):
                os.remove(p)
        if self._made_root and os.path.isdir(self.root) and not os.listdir(self.root):
            os.rmdir(self.root)


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# ---------------------------------------------------------------------------
# Modes
# ---------------------------------------------------------------------------


def _apply_overrides(scene, config):
    changes = {}
    if config.eps:
        changes["eps"] = config.eps[0]
    if config.nodes:
        changes["nodes"] = config.nodes[0]
    if config.theta_order:
        changes["theta_order"] = config.theta_order
    return scene.with_(**changes) if changes else scene


def _mode_solve(scene, config, out, report, workers):
    sol, kmat = solve_scene(scene, workers=workers)
    report.defaults = defaults_ledger(scene, sol.mesh.N, kmat.theta_order)
    report.files.append(out.csv(f"{scene.name}_solution.csv", solution_table(scene, sol)))
    report.results = {"s": sol.s, "p": sol.p, "norms": sol.norms, "condition": sol.meta["condition"],
                      "p0": sol.p0, "total_flux_constant": total_flux_constant(scene, sol)}


def _residual_mesh(scene):
    # residuals need the s=0 layer resolved; respect an explicit choice
    return scene if scene.base_refine else scene.with_(base_refine=RESIDUAL_BASE_REFINE)


def _mode_residuals(scene, config, out, report, workers):
    scene = _residual_mesh(scene)
    sol, kmat = solve_scene(scene, workers=workers)
    rep = boundary_residuals(scene, sol)
    report.defaults = defaults_ledger(scene, sol.mesh.N, kmat.theta_order)
    report.files.append(out.csv(f"{scene.name}_residuals.csv", {
        "s": rep.s * scene.length,
        "flux_residual": rep.flux_residual,
        "flux_residual_robin": rep.flux_residual_robin,
        "pointwise_sup_theta": np.max(np.abs(rep.pointwise), axis=1),
        "tip_band": rep.tip_band.astype(int),
    }))
    report.results = {"s": sol.s, "p": sol.p, "norms": sol.norms, "residuals": rep.summary}


def _mode_sweep_eps(scene, config, out, report, workers):
    eps_list = config.eps or list(DEFAULT_SWEEP_EPS)
    scene = _residual_mesh(scene)
    members = [scene.with_(eps=e) for e in eps_list]
    for m in members:
        require_valid(m)
    args = [(m.to_dict(), None, config.theta_order, True) for m in members]
    res = _map(_member, args, workers)
    report.defaults = defaults_ledger(scene, res[0]["N"], res[0]["theta_order"])
    norm_keys = sorted(res[0]["norms"])
    table = {"eps": [r["eps"] for r in res]}
    for k in norm_keys:
        table[k] = [r["norms"][k] for r in res]
    for k in ("flux_sup", "flux_L2", "pointwise_sup", "pointwise_L2", "consistency"):
        table["residual_" + k] = [r["residuals"][k] for r in res]
    report.files.append(out.csv("sweep_eps.csv", table))
    slopes = {k: loglog_slope(eps_list, table[k]) for k in table if k != "eps"}
    ha = table["p_Ha"]
    report.results = {
        "eps": eps_list,
        "table": table,
        "slopes": slopes,
        "p_Ha_variation": float(max(ha) / min(ha)),
        "members": [{"eps": r["eps"], "s": r["s"], "p": r["p"]} for r in res],
    }


def _mode_sweep_mesh(scene, config, out, report, workers):
    Ns = sorted(config.nodes or list(DEFAULT_SWEEP_NODES))
    require_valid(scene)
    theta = config.theta_order or scene.theta_order or select_theta_order(scene.geometry, build_mesh(scene, Ns[0]))
    res = _map(_member, [(scene.to_dict(), N, theta, False) for N in Ns], workers)
    report.defaults = defaults_ledger(scene, Ns[-1], theta)
    coarse = res[0]["s"]
    diffs = []
    for a, b in zip(res[:-1], res[1:]):
        idx = np.searchsorted(b["s"], a["s"])
        if not np.array_equal(b["s"][idx], a["s"]):
            raise AccuracyError("meshes are not nested")
        diffs.append(float(np.max(np.abs(b["p"][idx] - a["p"]))))
    orders = [float(np.log2(d1 / d2)) for d1, d2 in zip(diffs[:-1], diffs[1:]) if d2 > 0]
    pinf = [float(np.max(np.abs(r["p"]))) for r in res]
    table = {"N": Ns, "p_inf": pinf, "max_dp_to_next": diffs + [float("nan")]}
    report.files.append(out.csv("sweep_mesh.csv", table))
    converged = abs(pinf[-1] - pinf[-2]) < CONVERGENCE_RTOL * pinf[-1] if len(pinf) > 1 else False
    report.results = {"N": Ns, "diffs": diffs, "orders": orders, "converged": converged,
                      "coarse_s": coarse, "members": [{"N": r["N"], "s": r["s"], "p": r["p"]} for r in res]}
    if len(diffs) >= 2 and diffs[-1] > diffs[0]:
        raise AccuracyError(f"refinement does not converge: successive differences {diffs}")


def default_slice_plane(scene):
    """Plane parallel to the x-z plane, offset out of plane by twice the maximum radius."""
    X = scene.centerline.X * scene.length
    pad = 0.25 * scene.length
    y0 = float(np.mean(X[:, 1])) + 2.0 * scene.eps * scene.length
    extent = (X[:, 0].min() - pad, X[:, 0].max() + pad, 0.0, X[:, 2].max() + pad)
    return dict(origin=(0.0, y0, 0.0), u=(1.0, 0.0, 0.0), v=(0.0, 0.0, 1.0), extent=extent, resolution=(61, 61))


def _slice_columns(sl):
    rows = sl.rows()
    return {"x": rows[:, 0], "y": rows[:, 1], "z": rows[:, 2], "q": rows[:, 3], "masked": rows[:, 4].astype(int)}


def _mode_slice(scene, config, out, report, workers):
    sol, kmat = solve_scene(scene, workers=workers)
    plane = default_slice_plane(scene)
    sl = slice_grid(scene, sol, **plane)
    report.defaults = defaults_ledger(scene, sol.mesh.N, kmat.theta_order)
    report.files.append(out.csv(f"{scene.name}_slice.csv", _slice_columns(sl)))
    report.files.append(out.json(f"{scene.name}_slice.json", {"plane": plane, "clearance_factor": sl.clearance_factor}))
    report.results = {"s": sol.s, "p": sol.p, "q_max": float(np.nanmax(sl.q)), "q_min": float(np.nanmin(sl.q)),
                      "masked": int(sl.mask.sum())}


def figure_scenes():
    """Scene sets behind each figure data file."""
    hi, lo = FIGURE_PARAMS["hi"], FIGURE_PARAMS["lo"]
    sets = {
        "funstuff1": [builtin(n, eps=0.01, eta=hi[0], omega=hi[1]) for n in ("vessel_a", "vessel_b", "vessel_c")],
        "funstuff2_a": [builtin("planar", eps=0.01, eta=lo[0], omega=lo[1])],
        "funstuff2_b": [builtin("planar", eps=0.01, eta=hi[0], omega=hi[1])],
    }
    for tag, name, (eta, omega) in (("a", "straight", hi), ("b", "near_loop", hi),
                                    ("c", "straight", lo), ("d", "near_loop", lo)):
        sets[f"the_tests_{tag}"] = [builtin(name, eps=e, eta=eta, omega=omega) for e in FIGURE_EPS]
    return sets


def _mode_figures(scene, config, out, report, workers):
    sets = figure_scenes()
    if config.nodes or config.theta_order:
        sets = {k: [_apply_overrides(s, RunConfig(s.name, "solve", config.out, None, config.nodes, config.theta_order))
                    for s in v] for k, v in sets.items()}
    flat = [(k, s) for k, v in sets.items() for s in v]
    for _, s in flat:
        require_valid(s)
    res = _map(_member, [(s.to_dict(), None, config.theta_order, False) for _, s in flat], workers)
    by_key = {}
    for (k, s), r in zip(flat, res):
        by_key.setdefault(k, []).append((s, r))
    manifest = {}

    cols = {"vessel": [], "L": [], "s": [], "s_over_L": [], "p": []}
    for s, r in by_key["funstuff1"]:
        n = len(r["s"])
        cols["vessel"] += [s.name] * n
        cols["L"] += [s.length] * n
        cols["s"] += list(r["s"] * s.length)
        cols["s_over_L"] += list(r["s"])
        cols["p"] += list(r["p"])
    manifest["funstuff1.csv"] = "p along three 3D vessels (eps=0.01, eta=0.05, omega=10)"
    out.csv("funstuff1.csv", cols)

    for key in ("funstuff2_a", "funstuff2_b"):
        s, _ = by_key[key][0]
        sol, _ = solve_scene(s, config.nodes[0] if config.nodes else None, config.theta_order)
        sl = slice_grid(s, sol, **default_slice_plane(s))
        out.csv(f"{key}.csv", _slice_columns(sl))
        manifest[f"{key}.csv"] = f"q slice near planar vessel (eta={s.eta}, omega={s.omega})"

    geo = {"geometry": [], "s": [], "x": [], "y": [], "z": [], "p_eps_0.02": []}
    for key in ("the_tests_a", "the_tests_b"):
        s, r = next((s, r) for s, r in by_key[key] if s.eps == 0.02)
        X = s.centerline.position(r["s"]) * s.length
        n = len(r["s"])
        geo["geometry"] += [s.name] * n
        geo["s"] += list(r["s"] * s.length)
        for j, c in enumerate("xyz"):
            geo[c] += list(X[:, j])
        geo["p_eps_0.02"] += list(r["p"])
    out.csv("test_geoms.csv", geo)
    manifest["test_geoms.csv"] = "centerlines of the two test geometries coloured by p at eps=0.02"

    for tag in "abcd":
        key = f"the_tests_{tag}"
        cols = {"eps": [], "s": [], "p": []}
        for s, r in by_key[key]:
            cols["eps"] += [s.eps] * len(r["s"])
            cols["s"] += list(r["s"] * s.length)
            cols["p"] += list(r["p"])
        out.csv(f"{key}.csv", cols)
        s0 = by_key[key][0][0]
        manifest[f"{key}.csv"] = f"p versus s for five eps ({s0.name}, eta={s0.eta}, omega={s0.omega})"

    entries = {name: {"description": desc, "sha256": _sha256(os.path.join(out.root, name))}
               for name, desc in sorted(manifest.items())}
    out.json("manifest.json", {"files": entries, "eps_values": list(FIGURE_EPS)})
    report.files = sorted(manifest) + ["manifest.json"]
    report.defaults = defaults_ledger(flat[0][1], res[0]["N"], res[0]["theta_order"])
    report.results = {key: {s.name + f"@{s.eps}": {"s": r["s"], "p": r["p"]} for s, r in v}
                      for key, v in by_key.items()}


_DISPATCH = {
    "solve": _mode_solve,
    "sweep-eps": _mode_sweep_eps,
    "sweep-mesh": _mode_sweep_mesh,
    "slice": _mode_slice,
    "residuals": _mode_residuals,
    "figures": _mode_figures,
}


def run(config):
    """Execute one mode. Files written by a failed run are removed."""
    np.random.seed(config.seed)
    start = time.perf_counter()
    scene = _apply_overrides(resolve(config.scene), config) if config.mode != "figures" else builtin("straight")
    if config.mode == "sweep-eps":
        scene = scene if not config.eps else scene.with_(eps=config.eps[0])
    out = _Outputs(config.out)
    report = RunReport(config.mode, scene.physics_hash(), scene.to_dict(), {})
    workers = worker_count()
    try:
        _DISPATCH[config.mode](scene, config, out, report, workers)
        report.timing = {"seconds": time.perf_counter() - start}
        out.json("report.json", report.__dict__)
    except BaseException:
        out.cleanup()
        raise
    return report


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------


def _as_dict(report):
    return report.__dict__ if isinstance(report, RunReport) else report


def compare_runs(report_a, report_b):
    """Max differences of p, norms and residual summaries between two runs."""
    a, b = _as_dict(report_a), _as_dict(report_b)
    if a["scene_hash"] != b["scene_hash"]:
        raise ComparisonError("reports describe different scenes")
    ra, rb = a["results"], b["results"]
    sa, pa = np.asarray(ra["s"], float), np.asarray(ra["p"], float)
    sb, pb = np.asarray(rb["s"], float), np.asarray(rb["p"], float)
    common, ia, ib = np.intersect1d(sa, sb, return_indices=True)
    if len(common) < 2:
        pb_on_a = np.interp(sa, sb, pb)
        ia, pb_c = np.arange(len(sa)), pb_on_a
    else:
        pb_c = pb[ib]
    pa_c = pa[ia]
    dp = pb_c - pa_c
    nz = np.abs(pa_c) > 1e-300
    ratio = pb_c[nz] / pa_c[nz] if np.any(nz) else np.array([np.nan])
    out = {
        "compared_nodes": int(len(pa_c)),
        "max_abs_dp": float(np.max(np.abs(dp))),
        "max_rel_dp": float(np.max(np.abs(dp)) / max(np.max(np.abs(pa_c)), 1e-300)),
        "p_ratio_min": float(np.min(ratio)),
        "p_ratio_max": float(np.max(ratio)),
        "norms": {},
        "residuals": {},
    }
    for group in ("norms", "residuals"):
        ga, gb = ra.get(group) or {}, rb.get(group) or {}
        for k in sorted(set(ga) & set(gb)):
            x, y = float(ga[k]), float(gb[k])
            out[group][k] = abs(y - x) / max(abs(x), 1e-300) if x != y else 0.0
    return out
