"""Experiment configuration and the generate / run / stability / report pipeline."""

from __future__ import annotations

import dataclasses
import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analysis, families, io, kernels
from .domain import box, euclidean_ball
from .kernels import BACKEND
from .optimizers import ALGORITHMS, default_tau
from .rng import GENERATOR_VERSION, derive_rng
from .sampling import OrderStream


REGRET_COLUMNS = (
    "round",
    "played_loss_mean",
    "regret_mean",
    "regret_se",
    "cumulative_mean",
    "cumulative_se",
    "theorem_bound",
)
STABILITY_COLUMNS = (
    "algorithm",
    "m",
    "i",
    "n_trials",
    "epsilon_hat",
    "se",
    "ref_8G_over_lambda_m",
    "ref_40G_over_lambda_m",
    "exact",
    "flags",
)


@dataclass
class ExperimentConfig:
    """Flat experiment description; see :func:`dumps_config` for the file format.

    ``lam = 0`` selects convex mode: the family average is linear and the
    algorithms run on the L2-regularised family with ``alpha`` from
    ``alpha_rule``.
    """

    dimension: int = 5
    T_grid: list = field(default_factory=lambda: [512, 1024, 2048, 4096, 8192])
    lam: float = 1.0
    nonconvexity: float = 1.0
    a_norm: float = 1.0
    mean_norm: float = 0.5
    domain: str = "ball"
    radius: float = 1.0
    interior_minimizer: bool = True
    algorithms: list = field(default_factory=lambda: ["reservoir", "wor"])
    tau_rule: str = "half_kappa"
    alpha_rule: str = "horizon_power"
    trials: int = 200
    family_seeds: list = field(default_factory=lambda: [0])
    master_seed: int = 0
    stability_T: int = 512
    stability_algorithms: list = field(default_factory=lambda: ["reservoir", "wor"])
    stability_m: str = "auto"
    stability_i: str = "grid"
    stability_trials: int = 2000
    stability_nonconvexity: float = 1.0
    wor_stability_nonconvexity: float = 0.1
    save_trajectories: str = "first"
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        grid = list(self.T_grid)
        if any(T < 2 for T in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("T_grid must be strictly increasing with all entries >= 2")
        for alg in list(self.algorithms) + list(self.stability_algorithms):
            if alg not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {alg!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0 (0 selects convex mode)")
        if self.domain not in ("ball", "box"):
            raise ValueError("domain must be 'ball' or 'box'")
        if self.save_trajectories not in ("none", "first", "all"):
            raise ValueError("save_trajectories must be none, first or all")
        for key, named in (("alpha_rule", "horizon_power"), ("tau_rule", "half_kappa")):
            value = getattr(self, key)
            if value != named:
                try:
                    ok = float(value) > 0
                except ValueError:
                    ok = False
                if not ok:
                    raise ValueError(f"{key} must be {named!r} or a positive number, got {value!r}")
        if self.stability_i not in ("grid", "full"):
            raise ValueError("stability_i must be 'grid' (1, ceil(m/2), m) or 'full'")
        if self.trials < 1 or self.stability_trials < 1:
            raise ValueError("trial counts must be positive")

    @property
    def convex(self) -> bool:
        return self.lam == 0

    def make_domain(self):
        if self.domain == "ball":
            return euclidean_ball(self.dimension, self.radius)
        return box(-self.radius * np.ones(self.dimension), self.radius * np.ones(self.dimension))


_KEY_ALIASES = {"lambda": "lam"}
_KEY_NAMES = {v: k for k, v in _KEY_ALIASES.items()}


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() not in ("true", "false"):
            raise ValueError(f"expected true/false, got {raw!r}")
        return raw.lower() == "true"
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


_LIST_ITEM = {
    "T_grid": int,
    "algorithms": str,
    "family_seeds": int,
    "stability_algorithms": str,
}


_KEY_HELP = {
    "T_grid": "horizons, strictly increasing",
    "lam": "cumulative strong convexity; 0 selects convex mode",
    "nonconvexity": "max|c_z| = nonconvexity * 1.1 * lambda (curvature in convex mode)",
    "a_norm": "norm of each linear term a_z",
    "mean_norm": "convex mode: norm of the mean linear term",
    "domain": "ball or box (half width = radius)",
    "interior_minimizer": "shift the linear terms so w* is interior",
    "tau_rule": "half_kappa (floor(T / 2 kappa)) or an integer",
    "alpha_rule": "convex mode: horizon_power (T^-1/2 reservoir, T^-1/3 wor) or a number",
    "trials": "random orders per regret cell",
    "stability_m": "auto (log-spaced) or a comma list",
    "stability_i": "grid (1, ceil(m/2), m) or full",
    "wor_stability_nonconvexity": "family used by the wor stability arm",
    "save_trajectories": "none, first or all",
}


def dumps_config(cfg: ExperimentConfig) -> str:
    lines = ["# rosgd experiment config: key = value, '#' starts a comment"]
    for f in fields(cfg):
        line = f"{_KEY_NAMES.get(f.name, f.name)} = {_format_value(getattr(cfg, f.name))}"
        if f.name in _KEY_HELP:
            line += f"  # {_KEY_HELP[f.name]}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    defaults = ExperimentConfig()
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        name = _KEY_ALIASES.get(key, key)
        if name not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if name in _LIST_ITEM:
            item = _LIST_ITEM[name]
            values[name] = [_parse_value(x, item) for x in raw.split(",") if x.strip()]
        else:
            values[name] = _parse_value(raw, type(getattr(defaults, name)))
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 prefix of the dumped config; the worker count does not affect results."""
    return hashlib.sha256(dumps_config(dataclasses.replace(cfg, workers=1)).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# families


def family_path(out: Path, T: int, seed: int, tag: str = "") -> Path:
    prefix = f"{tag}_" if tag else ""
    return Path(out) / "families" / f"{prefix}T{T}_s{seed}.json"


def build_family(cfg: ExperimentConfig, T: int, seed: int, nonconvexity: float | None = None):
    nc = cfg.nonconvexity if nonconvexity is None else nonconvexity
    if cfg.convex:
        return families.generate_convex_family(
            cfg.dimension,
            T,
            seed,
            curvature=nc,
            a_norm=cfg.a_norm,
            mean_norm=cfg.mean_norm,
            domain=cfg.make_domain(),
        )
    return families.generate_quadratic_family(
        cfg.dimension,
        T,
        cfg.lam,
        nc,
        seed,
        a_norm=cfg.a_norm,
        domain=cfg.make_domain(),
        interior_minimizer=cfg.interior_minimizer,
    )


def _stability_tag(alg: str) -> str:
    return f"stability_{alg}"


def _stability_nonconvexity(cfg: ExperimentConfig, alg: str) -> float:
    return cfg.wor_stability_nonconvexity if alg == "wor" else cfg.stability_nonconvexity


def cmd_generate(cfg: ExperimentConfig, out) -> list[Path]:
    """Write a certified family file per ``(T, seed)`` cell and per stability arm."""
    out = Path(out)
    written = []
    jobs = [(T, s, "", None) for T in cfg.T_grid for s in cfg.family_seeds]
    jobs += [
        (cfg.stability_T, s, _stability_tag(alg), _stability_nonconvexity(cfg, alg))
        for alg in cfg.stability_algorithms
        for s in cfg.family_seeds
    ]
    for T, seed, tag, nc in jobs:
        try:
            fam = build_family(cfg, T, seed, nc)
        except families.CertificationError as exc:
            raise families.CertificationError(f"family T={T} seed={seed}: {exc}") from exc
        path = family_path(out, T, seed, tag)
        path.parent.mkdir(parents=True, exist_ok=True)
        families.save(fam, path)
        written.append(path)
    (out / "config.txt").write_text(dumps_config(cfg), encoding="utf-8")
    return written


def _load_family(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"missing family file {path}; run 'generate' first")
    return families.load(path)


# --------------------------------------------------------------------------
# regret runs


def alpha_for(cfg: ExperimentConfig, algorithm: str, T: int) -> float:
    if cfg.alpha_rule == "horizon_power":
        return T ** (-1.0 / 3.0) if algorithm == "wor" else T ** (-0.5)
    return float(cfg.alpha_rule)


def _tau_for(cfg: ExperimentConfig, fam) -> int:
    if cfg.tau_rule == "half_kappa":
        return default_tau(fam)
    return int(cfg.tau_rule)


def _run_cell(args):
    cfg, out, alg, T, seed = args
    fam = _load_family(family_path(out, T, seed))
    w_star = analysis.population_minimizer(fam)
    if cfg.convex:
        alpha = alpha_for(cfg, alg, T)
        run_fam = families.regularize(fam, alpha, fam.domain.midpoint)
        base = analysis.family_bound(alg, run_fam)
        bound = None if base is None else base + alpha * fam.D**2 * T
    else:
        alpha = None
        run_fam = fam
        bound = analysis.family_bound(alg, fam)
    tau = _tau_for(cfg, run_fam) if alg == "wor" else None
    key = (ALGORITHMS.index(alg), T, seed)
    rep = analysis.regret_trials(
        alg, run_fam, cfg.trials, cfg.master_seed, key=key, loss_family=fam, w_star=w_star, tau=tau
    )
    rep.theorem_bound = bound
    name = f"{alg}_T{T}_s{seed}"
    cum_mean = np.cumsum(rep.per_round_regret)
    rows = [
        (t + 1, rep.played_loss_mean[t], rep.per_round_regret[t],
         None if rep.per_round_se is None else rep.per_round_se[t], cum_mean[t], None, None)
        for t in range(T)
    ]
    rows.append(("summary", float(np.mean(rep.played_loss_mean)), None, None,
                 rep.cumulative, rep.cumulative_se, bound))
    io.write_csv(Path(out) / "runs" / f"regret_{name}.csv", REGRET_COLUMNS, rows)

    if cfg.save_trajectories != "none":
        n_save = 1 if cfg.save_trajectories == "first" else cfg.trials
        for k in range(n_save):
            _save_trajectory(cfg, out, alg, run_fam, key, k, name, tau)

    passed = None if bound is None else bool(rep.within_bound(3.0))
    return {
        "algorithm": alg,
        "T": T,
        "family_seed": seed,
        "n_trials": rep.n_trials,
        "mean_regret": rep.cumulative,
        "se": rep.cumulative_se,
        "theorem_bound": bound,
        "alpha": alpha,
        "tau": tau,
        "regime_flags": rep.regime_flags,
        "bound_ok": passed,
    }


def _save_trajectory(cfg, out, alg, run_fam, key, k, name, tau):
    from .optimizers import run_ogd_baseline, run_reservoir_sgd, run_sgd_wor

    order_rng = derive_rng(cfg.master_seed, "regret/order", *key, k)
    order = OrderStream(kernels.fisher_yates(order_rng.random(run_fam.T - 1)))
    if alg == "reservoir":
        traj = run_reservoir_sgd(
            run_fam, order, seed=derive_rng(cfg.master_seed, "regret/sampler", *key, k)
        )
    elif alg == "wor":
        traj = run_sgd_wor(run_fam, order, tau=tau)
    else:
        traj = run_ogd_baseline(run_fam, order)
    traj.seeds = {"master_seed": cfg.master_seed, "key": list(key), "trial": k}
    io.write_trajectory(
        traj,
        Path(out) / "runs" / f"traj_{name}_trial{k}.csv",
        {"config_hash": config_hash(cfg), "generator": GENERATOR_VERSION, "backend": BACKEND},
    )


def _pool_map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def cmd_run(cfg: ExperimentConfig, out) -> list[dict]:
    """Run every ``(algorithm, T, seed)`` cell; writes regret CSVs and run_summary.json."""
    out = Path(out)
    jobs = [(cfg, out, alg, T, s) for alg in cfg.algorithms for T in cfg.T_grid for s in cfg.family_seeds]
    for _, _, _, T, s in jobs:
        if not family_path(out, T, s).exists():
            raise FileNotFoundError(f"missing family file {family_path(out, T, s)}; run 'generate' first")
    cells = _pool_map(_run_cell, jobs, cfg.workers)
    io.write_json(out / "runs" / "run_summary.json", {"cells": cells, "config_hash": config_hash(cfg)})
    return cells


# --------------------------------------------------------------------------
# stability


def stability_grid(cfg: ExperimentConfig, alg: str, fam) -> list[int]:
    T = fam.T
    if cfg.stability_m != "auto":
        return [int(x) for x in cfg.stability_m.split(",") if x.strip()]
    limit = default_tau(fam) if alg == "wor" else T - 1
    if T <= 8:
        return list(range(1, limit + 1))
    grid = [m for m in (2**k for k in range(3, 40)) if m <= limit]
    if alg != "wor" and grid and grid[-1] != T - 1:
        grid.append(T - 1)
    return grid


def _stability_arm(args):
    cfg, out, alg, seed, exhaustive = args
    fam = _load_family(family_path(out, cfg.stability_T, seed, _stability_tag(alg)))
    k = fam.constants
    rows, checks = [], []
    tau = default_tau(fam) if alg == "wor" else None
    for m in stability_grid(cfg, alg, fam):
        i_grid = range(1, m + 1) if cfg.stability_i == "full" else None
        best, reps = analysis.stability_max(
            alg, fam, m, cfg.stability_trials, cfg.master_seed, i_grid=i_grid
        )
        ref8 = 8 * k.G / (k.lam * m)
        ref40 = 40 * k.G / (k.lam * m)
        for r in reps:
            exact = analysis.stability_exhaustive(alg, fam, m, r.i) if exhaustive else None
            rows.append((alg, m, r.i, r.n_trials, r.epsilon_hat, r.se, ref8, ref40, exact, ";".join(r.flags)))
            if exact is not None:
                z = abs(r.epsilon_hat - exact) / max(r.se or 0.0, 1e-300)
                checks.append({
                    "name": f"exhaustive_match[{alg},m={m},i={r.i}]",
                    "passed": bool(abs(r.epsilon_hat - exact) <= 3 * (r.se or 0.0)),
                    "detail": {"mc": r.epsilon_hat, "exact": exact, "z": z},
                })
        rows.append((alg, m, "max", best.n_trials, best.epsilon_hat, best.se, ref8, ref40, None, ";".join(best.flags)))
        if alg == "wor" and m <= tau:
            ref = ref8
        elif alg == "reservoir":
            ref = ref40
        else:
            ref = None
        if ref is not None:
            checks.append({
                "name": f"stability_bound[{alg},m={m}]",
                "passed": bool(best.epsilon_hat <= ref + 3 * (best.se or 0.0)),
                "detail": {"epsilon_hat": best.epsilon_hat, "se": best.se, "bound": ref},
            })
    io.write_csv(Path(out) / "runs" / f"stability_{alg}_s{seed}.csv", STABILITY_COLUMNS, rows)
    return checks


def cmd_stability(cfg: ExperimentConfig, out, exhaustive: bool = False) -> list[dict]:
    out = Path(out)
    if exhaustive and cfg.stability_T > 8:
        raise ValueError("exhaustive mode enumerates permutations; use stability_T <= 8")
    jobs = [(cfg, out, alg, s, exhaustive) for alg in cfg.stability_algorithms for s in cfg.family_seeds]
    checks = [c for arm in _pool_map(_stability_arm, jobs, cfg.workers) for c in arm]
    io.write_json(out / "runs" / "stability_summary.json", {"checks": checks})
    return checks


# --------------------------------------------------------------------------
# report


def cmd_report(out) -> dict:
    """Fit regret against log T, collect every check and write summary.json."""
    out = Path(out)
    checks = []
    fits = {}
    run_file = out / "runs" / "run_summary.json"
    if run_file.exists():
        import json

        cells = json.loads(run_file.read_text())["cells"]
        for c in cells:
            if c["bound_ok"] is not None:
                checks.append({
                    "name": f"regret_bound[{c['algorithm']},T={c['T']},s={c['family_seed']}]",
                    "passed": c["bound_ok"],
                    "detail": {k: c[k] for k in ("mean_regret", "se", "theorem_bound")},
                })
        groups = {}
        for c in cells:
            groups.setdefault((c["algorithm"], c["family_seed"]), []).append(c)
        for (alg, seed), cs in sorted(groups.items()):
            cs = sorted(cs, key=lambda c: c["T"])
            Ts = [c["T"] for c in cs]
            ys = [c["mean_regret"] for c in cs]
            res = analysis.fit_log(Ts, ys)
            fits[f"{alg}_s{seed}"] = {"T": Ts, "mean_regret": ys, **res}
            checks.append({"name": f"sublinear[{alg},s={seed}]", "passed": res["sublinear"], "detail": {}})
    stab_file = out / "runs" / "stability_summary.json"
    if stab_file.exists():
        import json

        checks.extend(json.loads(stab_file.read_text())["checks"])
    failures = [c["name"] for c in checks if not c["passed"]]
    summary = {
        "passed": not failures,
        "failures": failures,
        "checks": checks,
        "fits": fits,
        "backend": BACKEND,
        "generator": GENERATOR_VERSION,
    }
    io.write_json(out / "summary.json", summary)
    return summary


def cmd_all(cfg: ExperimentConfig, out, exhaustive: bool = False) -> dict:
    cmd_generate(cfg, out)
    cmd_run(cfg, out)
    cmd_stability(cfg, out, exhaustive=exhaustive)
    return cmd_report(out)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    return dataclasses.replace(cfg, **kw)
