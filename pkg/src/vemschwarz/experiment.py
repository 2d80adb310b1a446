"""Config-driven sweeps over the contrast, eigenvalue reports and self-checks."""

from __future__ import annotations

import copy
import hashlib
import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import decomposition as dc
from . import mesh as msh
from . import pu as pum
from . import schwarz, spectral, vem

COLUMNS = ("eta", "method", "k", "pu_mode", "coarse_mode", "dimV0", "iters", "cond_est",
           "cond_oracle", "delta", "H_over_h", "seconds", "status")
COARSE_MODES = ("none", "non-adaptive", "adaptive-kappa", "adaptive-multiscale",
                "adaptive-abstract", "gmsfem")
PU_MODES = ("harmonic", "polynomial-2", "polynomial-3")

DEFAULTS = {
    "mesh": {"family": "triangular", "n": 40},
    "coefficient": {"layout": "channels", "h": 1.0 / 80},
    "partition": {"kind": "structured", "m": 4},
    "overlap_layers": 2,
    "k": 1,
    "pu_mode": "harmonic",
    "coarse_modes": ["none", "non-adaptive", "adaptive-kappa"],
    "tau": 1.0,
    "l_max": spectral.DEFAULT_L_MAX,
    "n_eigs": spectral.DEFAULT_N_EIGS,
    "gmsfem_snapshots": 20,
    "etas": [1.0, 1e2, 1e4, 1e6],
    "pcg": {"tol": 1e-6, "max_iter": 1000},
    "seed": 0,
    "threads": 1,
    "record_timing": False,
    "cond_oracle": False,
    "validate": {"drop_generator": None, "symmetry_pairs": 5},
}


class ConfigError(ValueError):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    data: dict
    out: Path = field(default_factory=lambda: Path("results"))

    def __getitem__(self, key):
        return self.data[key]

    @property
    def sha256(self):
        text = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def header(self):
        return f"# vemschwarz {__version__} config_sha256={self.sha256}\n"


def load_config(source=None, overrides=None) -> ExperimentConfig:
    """Defaults merged with a JSON file path, JSON text or dict, then ``overrides``."""
    if source is None:
        user = {}
    elif isinstance(source, dict):
        user = source
    else:
        p = Path(source)
        try:
            user = json.loads(p.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    user = dict(user)
    out = user.pop("out", None)
    data = _merge(DEFAULTS, user)
    if overrides:
        out = overrides.pop("out", out)
        data = _merge(data, overrides)
    cfg = ExperimentConfig(data, Path(out) if out else Path("results"))
    check_config(cfg)
    return cfg


def check_config(cfg: ExperimentConfig):
    d = cfg.data
    unknown = set(d) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if d["k"] not in (1, 2):
        raise ConfigError("k must be 1 or 2")
    if d["pu_mode"] not in PU_MODES:
        raise ConfigError(f"pu_mode must be one of {PU_MODES}")
    modes = d["coarse_modes"]
    if isinstance(modes, str):
        modes = d["coarse_modes"] = [modes]
    bad = [m for m in modes if m not in COARSE_MODES]
    if bad:
        raise ConfigError(f"unknown coarse modes {bad}; choose from {COARSE_MODES}")
    if not isinstance(d["overlap_layers"], int) or d["overlap_layers"] < 1:
        raise ConfigError("overlap_layers must be a positive integer")
    if any(float(e) < 1.0 for e in d["etas"]):
        raise ConfigError("every eta must be >= 1")
    if not float(d["tau"]) > 0:
        raise ConfigError("tau must be positive")
    part = d["partition"]
    if part.get("kind") == "structured":
        if int(part.get("m", 0)) < 1:
            raise ConfigError("structured partition needs m >= 1")
    elif part.get("kind") == "graph":
        if int(part.get("n_parts", 0)) < 1:
            raise ConfigError("graph partition needs n_parts >= 1")
    else:
        raise ConfigError("partition kind must be 'structured' or 'graph'")
    if d["mesh"].get("family") not in ("triangular", "quadrilateral", "hexagonal", "voronoi"):
        raise ConfigError(f"unknown mesh family {d['mesh'].get('family')!r}")
    if int(d["threads"]) < 1:
        raise ConfigError("threads must be >= 1")


# -- building blocks ----------------------------------------------------------

@dataclass
class Setup:
    """Everything that does not depend on the contrast."""

    mesh: msh.PolygonalMesh
    space: vem.VEMSpace
    partition: dc.NonOverlappingPartition
    overlap: dc.OverlappingPartition
    skeleton: dc.CoarseSkeleton
    pu: pum.PUFamily
    xi: pum.OverlapPU
    inclusions: msh.InclusionSpec

    @property
    def H_over_h(self):
        return self.partition.H / self.mesh.h


def inclusion_spec(coef) -> msh.InclusionSpec:
    if coef is None:
        return msh.InclusionSpec()
    if "layout" in coef:
        return msh.channel_layout(coef["layout"], float(coef.get("h", 1.0 / 80)))
    return msh.InclusionSpec.from_dict(coef)


def build_setup(cfg: ExperimentConfig) -> Setup:
    d = cfg.data
    mp = dict(d["mesh"])
    family = mp.pop("family")
    mesh = msh.build_mesh(family, **mp)
    space = vem.vem_space(mesh, d["k"])
    part = d["partition"]
    if part["kind"] == "structured":
        P = dc.partition_structured(mesh, int(part["m"]))
    else:
        P = dc.partition_graph(mesh, int(part["n_parts"]), int(part.get("seed", d["seed"])))
    overlap = dc.extend_overlap(P, d["overlap_layers"], space)
    skel = dc.extract_skeleton(P)
    pu = pum.build_pu(space, skel, d["pu_mode"])
    xi = pum.overlap_pu(overlap, space)
    return Setup(mesh, space, P, overlap, skel, pu, xi, inclusion_spec(d["coefficient"]))


def _runner(threads):
    if threads <= 1:
        return map, None
    pool = ThreadPoolExecutor(max_workers=threads)
    return pool.map, pool


def coarse_space(setup: Setup, cfg: ExperimentConfig, mode, kappa, free, runner=map):
    d = cfg.data
    if mode == "non-adaptive":
        return spectral.non_adaptive_space(setup.pu, free)
    if mode == "gmsfem":
        return spectral.build_gmsfem_space(setup.space, kappa, setup.skeleton, setup.pu, free,
                                           d["gmsfem_snapshots"], d["seed"], d["tau"], d["l_max"],
                                           runner=runner)
    weight = mode.split("-", 1)[1]
    return spectral.build_coarse_space(setup.space, kappa, setup.skeleton, setup.pu, free,
                                       weight=weight, tau=d["tau"], l_max=d["l_max"],
                                       n_eigs=d["n_eigs"], xi=setup.xi, runner=runner)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if np.isnan(x) else f"{x:.6g}"
    return str(x)


def _row(cfg, eta, mode, **vals):
    d = cfg.data
    row = {"eta": float(eta), "method": "one-level" if mode == "none" else "two-level",
           "k": d["k"], "pu_mode": d["pu_mode"], "coarse_mode": mode}
    row.update(vals)
    return row


def run_eta(setup: Setup, cfg: ExperimentConfig, eta, runner=map):
    """Rows for one contrast value, one per configured coarse mode."""
    d = cfg.data
    rows = []
    common = {"delta": setup.overlap.delta, "H_over_h": setup.H_over_h}
    try:
        field_ = msh.paint_coefficient(setup.mesh, setup.inclusions, float(eta))
        system = vem.assemble_global(setup.mesh, field_, d["k"], f=lambda x, y: np.ones_like(x))
        M1 = schwarz.build_one_level(system, setup.overlap)
    except Exception as exc:  # noqa: BLE001 - reported in the table
        return [_row(cfg, eta, m, status=f"FAILED: {type(exc).__name__}: {exc}", **common)
                for m in d["coarse_modes"]], None
    for mode in d["coarse_modes"]:
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", spectral.SelectionCapWarning)
                if mode == "none":
                    M, dim = M1, 0
                else:
                    cs = coarse_space(setup, cfg, mode, field_.values, system.free, runner)
                    M = schwarz.build_two_level(M1, cs, system)
                    dim = M.coarse.dim
            _, rep = schwarz.pcg(system.A, system.b, M, d["pcg"]["tol"], d["pcg"]["max_iter"])
            oracle = None
            if d["cond_oracle"] and system.n <= schwarz.ORACLE_MAX_N:
                oracle = schwarz.dense_cond_oracle(system.A, M)
            secs = time.perf_counter() - t0
            rows.append(_row(cfg, eta, mode, dimV0=dim, iters=rep.iterations,
                             cond_est=rep.cond_estimate, cond_oracle=oracle,
                             seconds=secs if d["record_timing"] else None,
                             status="ok" if rep.converged else "max_iter", **common))
        except Exception as exc:  # noqa: BLE001 - reported in the table
            rows.append(_row(cfg, eta, mode, status=f"FAILED: {type(exc).__name__}: {exc}",
                             **common))
    return rows, system


def run_sweep(cfg: ExperimentConfig, setup: Setup | None = None):
    """One row per (eta, coarse mode), in config order."""
    rows = []
    if not cfg["etas"]:
        return rows
    setup = build_setup(cfg) if setup is None else setup
    runner, pool = _runner(int(cfg["threads"]))
    try:
        for eta in cfg["etas"]:
            rows += run_eta(setup, cfg, eta, runner)[0]
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


def rows_to_csv(cfg: ExperimentConfig, rows) -> str:
    lines = [cfg.header().rstrip("\n"), ",".join(COLUMNS)]
    for r in rows:
        vals = []
        for c in COLUMNS:
            v = r.get(c)
            v = v.replace(",", ";").replace("\n", " ") if isinstance(v, str) else _fmt(v)
            vals.append(v)
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def write_sweep(cfg: ExperimentConfig, rows, name="sweep.csv") -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / name
    path.write_text(rows_to_csv(cfg, rows))
    return path


# -- eigenvalue report --------------------------------------------------------

def local_eigenvalues(setup: Setup, cfg: ExperimentConfig, eta, weight="kappa"):
    """``[(omega_id, floating, eigenvalues)]`` for every neighbourhood at contrast ``eta``."""
    kappa = msh.paint_coefficient(setup.mesh, setup.inclusions, float(eta)).values
    out = []
    for i in range(setup.skeleton.n_coarse):
        prob = spectral.local_problem(setup.space, kappa, setup.skeleton, i, weight, setup.pu,
                                      setup.xi)
        w, _, _ = spectral.solve_local_eig(prob, cfg["n_eigs"])
        out.append((i, prob.floating, np.sort(w)))
    return out


def _eta_tag(eta):
    return f"{float(eta):g}".replace("+", "")


def emit_eigen_report(cfg: ExperimentConfig, setup: Setup | None = None, weight="kappa"):
    """Per-neighbourhood eigenvalue CSV and gnuplot blocks, one pair per eta."""
    setup = build_setup(cfg) if setup is None else setup
    cfg.out.mkdir(parents=True, exist_ok=True)
    head = cfg.header()
    written = []
    for eta in cfg["etas"]:
        tag = _eta_tag(eta)
        data = local_eigenvalues(setup, cfg, eta, weight)
        csv = [head + "omega_id,floating,ell,lambda,eta"]
        dat = [head.rstrip("\n")]
        for i, floating, w in data:
            csv += [f"{i},{int(floating)},{ell},{float(lam)!r},{float(eta)!r}"
                    for ell, lam in enumerate(w, start=1)]
            dat.append(f"# omega {i} below_tau={int(np.count_nonzero(w < cfg['tau']))}")
            dat += [f"{ell} {float(lam)!r}" for ell, lam in enumerate(w, start=1)]
            dat += ["", ""]
        p_csv = cfg.out / f"eigs_eta{tag}.csv"
        p_dat = cfg.out / f"eigs_eta{tag}.dat"
        p_csv.write_text("\n".join(csv) + "\n")
        p_dat.write_text("\n".join(dat) + "\n")
        written += [p_csv, p_dat]
    script = [head.rstrip("\n"), "set logscale y", "set xlabel 'ell'", "set ylabel 'lambda'",
              f"tau = {float(cfg['tau'])!r}", "plot \\"]
    parts = [f"  'eigs_eta{_eta_tag(e)}.dat' using 1:2 with points title 'eta={float(e):g}'"
             for e in cfg["etas"]]
    parts.append("  tau with lines title 'tau'")
    script.append(", \\\n".join(parts))
    p_gp = cfg.out / "eigs.gp"
    p_gp.write_text("\n".join(script) + "\n")
    written.append(p_gp)
    return written


# -- validation ---------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def patch_check(mesh, k, tol=1e-9) -> Check:
    """Discrete solution reproduces a polynomial of degree ``k`` at every dof."""
    if k == 1:
        u = lambda x, y: 1.0 + 2.0 * x - 3.0 * y  # noqa: E731
        f = lambda x, y: np.zeros_like(x)  # noqa: E731
    else:
        u = lambda x, y: x * x + x * y - 2.0 * y * y + x  # noqa: E731
        f = lambda x, y: np.full_like(x, 2.0)  # noqa: E731  (-lap u = -(2 - 4))
    system = vem.assemble_global(mesh, None, k, f=f, g=u)
    uh = system.solve_direct()
    exact = system.space.interpolate(u)
    err = float(np.abs(uh - exact).max() / max(1.0, np.abs(exact).max()))
    return Check(f"patch test k={k} ({mesh.family})", err <= tol, f"max error {err:.2e}")


def validate(cfg: ExperimentConfig, setup: Setup | None = None):
    setup = build_setup(cfg) if setup is None else setup
    d = cfg.data
    checks = []
    fam = setup.pu
    drop = d["validate"].get("drop_generator")
    if drop is not None:
        fam = fam.drop_generator(int(drop))
    err = fam.sum_error()
    checks.append(Check("partition of unity sum", err <= 1e-12, f"max |sum - 1| {err:.2e}"))
    checks.append(patch_check(setup.mesh, d["k"]))
    eta = max(d["etas"]) if d["etas"] else 1.0
    kappa = msh.paint_coefficient(setup.mesh, setup.inclusions, float(eta))
    system = vem.assemble_global(setup.mesh, kappa, d["k"], f=lambda x, y: np.ones_like(x))
    A = system.A
    asym = float(abs(A - A.T).max() / abs(A).max())
    checks.append(Check("stiffness symmetry", asym <= 1e-12, f"relative asymmetry {asym:.2e}"))
    M1 = schwarz.build_one_level(system, setup.overlap)
    M2 = schwarz.build_two_level(M1, spectral.non_adaptive_space(setup.pu, system.free), system)
    rng = np.random.default_rng(d["seed"])
    worst = 0.0
    for _ in range(int(d["validate"].get("symmetry_pairs", 5))):
        x, y = rng.standard_normal((2, system.n))
        for M in (M1, M2):
            lhs = x @ (A @ M(A @ y))
            rhs = y @ (A @ M(A @ x))
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    checks.append(Check("preconditioned operator A-symmetry", worst <= 1e-10,
                        f"worst relative gap {worst:.2e}"))
    return checks


# -- single solve --------------------------------------------------------------

def solve(cfg: ExperimentConfig, setup: Setup | None = None):
    """Rows for the first configured eta, plus the direct solution as ``solution.csv``."""
    setup = build_setup(cfg) if setup is None else setup
    eta = cfg["etas"][0] if cfg["etas"] else 1.0
    rows, system = run_eta(setup, cfg, eta)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_sweep(cfg, rows, "solve.csv")
    if system is not None:
        u = system.solve_direct()
        xy = setup.space.dof_coords
        lines = [cfg.header() + "dof,x,y,u"]
        rows = zip(xy.tolist(), u.tolist())
        lines += [f"{i},{x!r},{y!r},{v!r}" for i, ((x, y), v) in enumerate(rows)]
        (cfg.out / "solution.csv").write_text("\n".join(lines) + "\n")
    return rows

