"""Experiment runner: procedures, presets and the output manifest.

A configuration names a list of procedures. Each procedure writes CSV plot
data and JSON reports into its own sub-directory; the run ends with a
``manifest.json`` listing every output with its SHA-256. Errors are caught
per procedure so one failure does not stop the batch.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import platform
import traceback
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .game import GameSpec, compare_myopic, shape_report, solve_game
from .execution import ExecutionProblem, optimal_schedule, schedule_to_csv
from .implied_exec import (
    fit_nonparametric,
    fit_parametric,
    linear_condition_check,
    linear_implied_kernel,
    linear_slope_closed_form,
    solve_h,
)
from .implied_price import aggregate_drift, ac_flow_variant, implied_kernel_price, scale_to_unit
from .io import dumps, sha256_file, write_columns, write_json
from .kernels import ConstantKernel, TimeGrid, build_matrices, kernel_from_dict
from .multiasset import eigendecompose, multiasset_equilibrium, strategies_to_csv

log = logging.getLogger(__name__)


def load_schema():
    text = resources.files("implied_impact").joinpath("config.schema.json").read_text()
    return json.loads(text)


@dataclass
class ExperimentConfig:
    name: str
    procedures: list
    output_dir: str = "results"
    seed: int = 0
    tol: float = 1e-10

    @classmethod
    def from_dict(cls, data):
        jsonschema.validate(data, load_schema())
        labels = [p.get("label", p["type"]) for p in data["procedures"]]
        dupes = sorted({x for x in labels if labels.count(x) > 1})
        if dupes:
            raise ValueError(f"procedure labels must be unique, repeated: {dupes}")
        return cls(
            name=data["name"],
            procedures=copy.deepcopy(data["procedures"]),
            output_dir=data.get("output_dir", "results"),
            seed=int(data.get("seed", 0)),
            tol=float(data.get("tol", 1e-10)),
        )

    def to_dict(self):
        return {
            "name": self.name,
            "procedures": self.procedures,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "tol": self.tol,
        }


@dataclass
class ReportBundle:
    outputs: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)
    manifest: Path | None = None

    @property
    def ok(self):
        return not self.errors


# ---------------------------------------------------------------------------
# Parameter helpers
# ---------------------------------------------------------------------------


def _grid(params):
    if "grid" in params:
        return TimeGrid.from_dict(params["grid"])
    return TimeGrid.equispaced(int(params.get("n_steps", 25)), float(params.get("horizon", 1.0)))


def _kernel(params):
    if "kernel" in params:
        return kernel_from_dict(params["kernel"])
    return ConstantKernel(float(params.get("g1", 1.0)))


def _game(params):
    return GameSpec(
        grid=_grid(params),
        kernel=_kernel(params),
        theta=float(params.get("theta", 1.0)),
        inventories=params.get("inventories", [1.0, 0.0]),
    )


# ---------------------------------------------------------------------------
# Procedures: each returns the list of files it wrote
# ---------------------------------------------------------------------------


def proc_equilibrium(params, out, ctx):
    spec = _game(params)
    eq = solve_game(spec)
    files = [eq.to_csv(out / "strategies.csv")]
    shapes = {
        f"agent_{i + 1}": shape_report(row, ctx.tol).__dict__ for i, row in enumerate(eq.strategies)
    }
    report = {"game": spec.to_dict(), "equilibrium": eq.to_dict(), "shapes": shapes}
    files.append(write_json(out / "equilibrium.json", report))
    if eq.fundamental_v is not None:
        files.append(
            write_columns(
                out / "fundamental.csv",
                {"t": spec.grid.times, "v": eq.fundamental_v, "w": eq.fundamental_w},
            )
        )
    return files


def proc_myopic(params, out, ctx):
    res = compare_myopic(
        float(params.get("g1", 1.0)),
        float(params.get("theta", 1.0)),
        float(params.get("s0", 10.0)),
        float(params.get("inventory", 1.0)),
        int(params.get("n_steps", 25)),
    )
    outcome = res.pop("outcome")
    grid = TimeGrid.equispaced(int(params.get("n_steps", 25)))
    files = [
        write_columns(
            out / "trades.csv",
            {"t": grid.times, "myopic": res.pop("myopic_trades"), "equilibrium": res.pop("equilibrium_trades")},
        )
    ]
    res.update(
        alpha=outcome.alpha,
        n_rounds=outcome.n_rounds,
        residual_trade=outcome.residual,
        prices=outcome.prices,
        trades=outcome.trades,
    )
    files.append(write_json(out / "myopic.json", res))
    return files


def proc_tim(params, out, ctx):
    prob = ExecutionProblem(
        _grid(params), _kernel(params), float(params.get("theta", 1.0)), float(params.get("inventory", 1.0))
    )
    eta = optimal_schedule(prob)
    files = [schedule_to_csv(out / "schedule.csv", prob.grid, eta)]
    report = {"problem": prob.to_dict(), "shape": shape_report(eta, ctx.tol).__dict__ if eta.size >= 3 else None}
    files.append(write_json(out / "tim.json", report))
    return files


def proc_implied_price(params, out, ctx):
    spec = _game(params)
    eq = solve_game(spec)
    mats = build_matrices(spec.kernel, spec.grid, spec.theta)
    drift = aggregate_drift(mats, eq.strategies.sum(axis=0))
    if params.get("variant", "price") == "ac":
        kernel = ac_flow_variant(drift, float(np.sum(spec.inventories)), spec.grid.n_steps, spec.grid.horizon)
    else:
        kernel = implied_kernel_price(eq.strategies[int(params.get("agent", 0))], drift, spec.grid.horizon)
    scaled = scale_to_unit(kernel)
    files = [
        kernel.to_csv(out / "kernel.csv"),
        write_columns(out / "drift.csv", {"t": spec.grid.times, "drift": drift}),
    ]
    report = {"game": spec.to_dict(), "kernel": kernel.to_dict(), "scaled_diagnostics": scaled.diagnostics}
    files.append(write_json(out / "implied_price.json", report))
    return files


def proc_implied_exec(params, out, ctx):
    spec = _game(params)
    eq = solve_game(spec)
    agent = int(params.get("agent", 0))
    xi = eq.strategies[agent]
    inventory = float(spec.inventories[agent])
    system = solve_h(xi, rtol=float(params.get("rank_rtol", 1e-10)))
    report = {"game": spec.to_dict(), "h_system": system.to_dict(), "n_points": xi.size}
    if linear_condition_check(xi, inventory, max(ctx.tol, 1e-8)):
        lin = linear_implied_kernel(xi, spec.theta, spec.grid.n_steps, inventory, spec.grid.horizon)
        report["linear_kernel"] = lin.to_dict()
        if isinstance(spec.kernel, ConstantKernel):
            report["closed_form_slope"] = linear_slope_closed_form(
                spec.kernel.g1, spec.theta, spec.grid.n_steps
            ) / spec.grid.horizon
    files = [write_json(out / "implied_exec.json", report)]
    files.append(
        write_columns(out / "particular.csv", {"lag": spec.grid.lags, "g": system.particular})
    )
    return files


def _random_starts(grid, n_exp, n_pow, rng):
    t, horizon = grid.times, grid.horizon
    starts = []
    for _ in range(n_exp):
        rho, lam = rng.uniform(0.5, 5.0), rng.uniform(1.0, 20.0)
        starts.append(("exponential", lam * (np.exp(-rho * t) - np.exp(-rho * horizon))))
    for _ in range(n_pow):
        p, b = rng.uniform(0.0, 0.9), rng.uniform(1.0, 20.0)
        starts.append(("power_law", b * ((1.0 + t) ** (p - 1.0) - (1.0 + horizon) ** (p - 1.0))))
    return starts


def proc_fit(params, out, ctx):
    spec = _game(params)
    eq = solve_game(spec)
    target = eq.strategies[0]
    inventory = float(spec.inventories[0])
    families = params.get("families", ["polynomial", "exponential", "power_law"])
    inits = params.get("inits", {})
    fits = {
        fam: fit_parametric(target, fam, spec.grid, spec.theta, inventory, inits.get(fam))
        for fam in families
    }
    files = [write_json(out / "fits.json", {fam: r.to_dict() for fam, r in fits.items()})]

    n_exp = int(params.get("n_exponential_starts", 0))
    n_pow = int(params.get("n_power_law_starts", 0))
    if n_exp + n_pow:
        rng = np.random.default_rng(ctx.seed)
        smoothing = float(params.get("smoothing", 1e-3))
        columns = {"lag": spec.grid.lags}
        errors = []
        for i, (family, start) in enumerate(_random_starts(spec.grid, n_exp, n_pow, rng)):
            k = fit_nonparametric(target, start, spec.grid, spec.theta, inventory, smoothing=smoothing)
            columns[f"{family}_{i}"] = k.g
            errors.append(k.diagnostics["schedule_error"])
        files.append(write_columns(out / "nonparametric.csv", columns))
        files.append(
            write_json(
                out / "nonparametric.json",
                {"schedule_errors": errors, "mean_schedule_error": float(np.mean(errors))},
            )
        )
    return files


def proc_multiasset(params, out, ctx):
    q = np.asarray(params.get("q", [[2.0, 1.0], [1.0, 2.0]]), dtype=float)
    inventories = np.asarray(
        params.get("inventories", [[2**-0.5, 2**-0.5], [0.0, 0.0]]), dtype=float
    )
    grid = _grid(params)
    cross = eigendecompose(q)
    strategies = multiasset_equilibrium(
        cross, inventories, float(params.get("g1", 1.0)), float(params.get("theta", 1.0)), grid
    )
    files = [strategies_to_csv(out / "strategies.csv", grid, strategies)]
    report = {
        "q": q,
        "eigenvalues": cross.eigenvalues,
        "eigenvectors": cross.eigenvectors,
        "inventories": inventories,
    }
    files.append(write_json(out / "multiasset.json", report))
    return files


def proc_theta_sweep(params, out, ctx):
    thetas = params.get("thetas", [0.5, 1.0, 2.0, 5.0, 20.0])
    g1 = float(params.get("g1", 1.0))
    grid = _grid(params)
    x = float(params.get("inventory", 1.0))
    arbi_sup, direc_dev = [], []
    for theta in thetas:
        eq = solve_game(GameSpec(grid, ConstantKernel(g1), float(theta), [x, 0.0]))
        arbi_sup.append(np.max(np.abs(eq.strategies[1])))
        direc_dev.append(np.max(np.abs(eq.strategies[0] - x / grid.n_points)))
    return [
        write_columns(
            out / "theta_sweep.csv",
            {"theta": np.asarray(thetas, float), "arbitrageur_sup": arbi_sup, "directional_dev_from_uniform": direc_dev},
        )
    ]


PROCEDURES = {
    "equilibrium": proc_equilibrium,
    "myopic": proc_myopic,
    "tim": proc_tim,
    "implied-price": proc_implied_price,
    "implied-exec": proc_implied_exec,
    "fit": proc_fit,
    "multiasset": proc_multiasset,
    "theta-sweep": proc_theta_sweep,
}


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

_BASE = {"n_steps": 25, "g1": 1.0, "theta": 1.0}

PRESETS = {
    "fig-equilibrium": [{"type": "equilibrium", "params": dict(_BASE, inventories=[1.0, 0.0])}],
    "fig-multi-agent": [
        {"type": "equilibrium", "label": f"J{j}", "params": dict(_BASE, inventories=[1.0] + [0.0] * (j - 1))}
        for j in (3, 5)
    ],
    "fig-spike": [
        {"type": "equilibrium", "label": "theta_0.25", "params": dict(_BASE, theta=0.25)},
        {"type": "equilibrium", "label": "theta_0.26", "params": dict(_BASE, theta=0.26)},
    ],
    "fig-tim": [
        {"type": "tim", "label": "exponential", "params": dict(_BASE, kernel={"family": "exponential", "lambda_coef": 1.0, "rho": 1.0, "gamma_const": 0.0})},
        {"type": "tim", "label": "linear", "params": dict(_BASE, theta=0.0, kernel={"family": "linear", "alpha": 1.0, "beta": -0.5})},
    ],
    "fig-myopic": [{"type": "myopic", "params": {"g1": 1.0, "theta": 1.0, "s0": 10.0, "inventory": 1.0, "n_steps": 25}}],
    "fig-implied-price": [
        {"type": "implied-price", "label": f"J{j}", "params": dict(_BASE, inventories=[1.0] + [0.0] * (j - 1))}
        for j in (2, 3, 5)
    ]
    + [{"type": "implied-price", "label": "ac_flow", "params": dict(_BASE, variant="ac")}],
    "rank-law": [
        {"type": "implied-exec", "label": f"n{n + 1}", "params": dict(_BASE, n_steps=n)}
        for n in (3, 4, 9, 10, 24, 25)
    ],
    "theta-sweep": [{"type": "theta-sweep", "params": dict(_BASE, thetas=[0.5, 1.0, 2.0, 5.0, 20.0])}],
    "table-fits": [{"type": "fit", "params": dict(_BASE)}],
    "nonparametric-fits": [
        {"type": "fit", "params": dict(_BASE, families=[], n_exponential_starts=10, n_power_law_starts=10)}
    ],
    "fig-multiasset": [{"type": "multiasset", "params": dict(_BASE)}],
}


def preset_config(name, seed=0, output_dir="results"):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return ExperimentConfig.from_dict(
        {"name": name, "procedures": PRESETS[name], "seed": seed, "output_dir": output_dir}
    )


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


def _versions():
    return {
        "implied_impact": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def run(config, output_dir=None):
    """Execute every procedure of ``config`` and write the manifest."""
    root = Path(output_dir or config.output_dir) / config.name
    root.mkdir(parents=True, exist_ok=True)
    bundle = ReportBundle()
    for proc in config.procedures:
        label = proc.get("label", proc["type"])
        out = root / label
        out.mkdir(parents=True, exist_ok=True)
        try:
            files = PROCEDURES[proc["type"]](proc.get("params", {}), out, config)
            bundle.outputs.extend(Path(f) for f in files)
            log.info("%s: wrote %d files", label, len(files))
        except Exception as exc:  # noqa: BLE001 - captured per procedure by design
            bundle.errors[label] = f"{type(exc).__name__}: {exc}"
            log.error("%s failed: %s", label, exc)
            log.debug("%s", traceback.format_exc())
    config_text = dumps(config.to_dict())
    manifest = {
        "name": config.name,
        "seed": config.seed,
        "config": config.to_dict(),
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "versions": _versions(),
        "outputs": [
            {"path": str(p.relative_to(root)), "sha256": sha256_file(p)} for p in bundle.outputs
        ],
        "errors": bundle.errors,
    }
    bundle.manifest = write_json(root / "manifest.json", manifest)
    return bundle
