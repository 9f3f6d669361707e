"""Config-driven runs: equivalence, conservation, convergence and size tables.

The config is a flat ``key=value`` file (``#`` starts a comment).  Extra
``key=value`` arguments on the command line override file entries.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .assembly import broken_space
from .diagnostics import (
    divergence_norm,
    dof_table,
    error_norms,
    fit_rate,
)
from .problems import Setup, make_setup
from .solver import MixedStepper, SolverError, TimeGrid, integrate, prepare

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str = "wave"
    formulation: str = "primal"
    mode: str = "conserve"
    n: tuple = (2,)
    degree: int = 1
    dt: float = 0.01
    t_end: float = 1.0
    profile: str = "eigenmode"
    gamma1: str = "lower"
    c: float = 1.0
    eps: float = 1.0
    mu: float = 1.0
    out_dir: str = "out"
    tol: float = 1e-10
    threads: int = 1
    _given: set = field(default_factory=set, repr=False)

    @property
    def kinds(self) -> tuple:
        return ("primal", "dual") if self.formulation == "both" else (self.formulation,)

    def validate(self) -> "RunConfig":
        choices = {
            "problem": ("wave", "maxwell"),
            "formulation": ("primal", "dual", "both"),
            "mode": ("equivalence", "conserve", "converge", "sizes"),
            "profile": ("eigenmode", "quadratic", "homogeneous"),
            "gamma1": ("lower", "all", "none"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {', '.join(allowed)}")
        if self.degree != 1:
            raise ConfigError("degree must be 1: only the lowest-order Whitney family is implemented")
        reals = ("dt", "t_end", "c", "eps", "mu", "tol")
        if not all(math.isfinite(getattr(self, k)) for k in reals):
            raise ConfigError(f"{', '.join(reals)} must be finite")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.t_end < self.dt:
            raise ConfigError("t_end must be at least dt")
        if any(n < 1 for n in self.n):
            raise ConfigError("n must be >= 1")
        if min(self.c, self.eps, self.mu) <= 0:
            raise ConfigError("material coefficients must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        try:
            TimeGrid.until(self.dt, self.t_end)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self


_CASTS = {
    "n": lambda v: tuple(int(x) for x in v.replace(";", ",").split(",") if x.strip()),
    "degree": int,
    "threads": int,
    "dt": float,
    "t_end": float,
    "c": float,
    "eps": float,
    "mu": float,
    "tol": float,
}
KEYS = tuple(f.name for f in fields(RunConfig) if not f.name.startswith("_"))


def parse_config(text: str, overrides=()) -> RunConfig:
    cfg = RunConfig()
    lines = [(i + 1, raw) for i, raw in enumerate(text.splitlines())]
    lines += [(f"arg {j + 1}", raw) for j, raw in enumerate(overrides)]
    for where, raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {where}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {where}: unknown key {key!r}")
        try:
            setattr(cfg, key, _CASTS.get(key, str)(value))
        except ValueError:
            raise ConfigError(f"line {where}: bad value for {key}: {value!r}") from None
        cfg._given.add(key)
    if cfg.mode == "sizes" and "n" not in cfg._given:
        cfg.n = (1, 2, 4, 8, 16)
    if cfg.mode == "converge" and "n" not in cfg._given:
        cfg.n = (2, 4, 8)
    return cfg.validate()


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path: Path, columns, rows, name: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# phhybrid {name} v{SCHEMA_VERSION}: {','.join(columns)}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------- experiments


def setup_for(cfg: RunConfig, kind: str, n: int, profile: str | None = None) -> Setup:
    prof = profile or cfg.profile
    zero = prof == "homogeneous"
    return make_setup(
        cfg.problem, kind, n, "eigenmode" if zero else prof, cfg.gamma1, cfg.c, cfg.eps, cfg.mu, zero
    )


def _two_form(setup: Setup):
    """Name and space of the 2-form state variable, if any."""
    form = setup.form
    for name, k in (("alpha", form.ka), ("beta", form.kb)):
        if k == 2:
            return name, broken_space(setup.mesh, 2, form.orientation)
    return None, None


def run_conserve(setup: Setup, dt: float, t_end: float, threads: int = 1):
    """March the hybrid system and record energy, power and divergence per step."""
    blocks = setup.blocks
    grid = TimeGrid.until(dt, t_end)
    name, space = _two_form(setup) if setup.case.problem == "maxwell" else (None, None)
    divs = []

    def div_of(state):
        return divergence_norm(blocks.part(state.x_l, name), space, setup.mesh)

    state0 = setup.initial_state()
    if name:
        divs.append(div_of(state0))
    obs = [lambda s, r: divs.append(div_of(s))] if name else []
    result = integrate(blocks, state0, setup.inputs, grid, obs, prepare(blocks, dt, threads))
    return result, (np.array(divs) if name else None)


def _mass_norms(setup: Setup):
    from .assembly import assemble_broken

    form = setup.form
    ma = assemble_broken(form.ka, setup.mesh, 1.0, form.orientation, geo=setup.geo).mass.matrix
    mb = assemble_broken(form.kb, setup.mesh, 1.0, form.orientation, geo=setup.geo).mass.matrix
    return {"alpha": ma, "beta": mb}


def run_equivalence(setup: Setup, dt: float, t_end: float, threads: int = 1):
    """Hybrid and mixed trajectories from identical data.

    Returns ``(rows, result)`` where rows hold ``(t, rel diff alpha, rel diff beta)``
    in the broken L2 norm and ``result`` is the hybrid integration log.
    """
    blocks = setup.blocks
    grid = TimeGrid.until(dt, t_end)
    mixed = setup.mixed()
    stepper = MixedStepper(mixed, dt)
    states, c_free, u_l = setup.initial_states()
    form = setup.form
    if form.primal:
        y = np.concatenate([states["alpha"], c_free])
    else:
        y = np.concatenate([c_free, states["beta"]])
    e = u_l.copy()
    norms = _mass_norms(setup)
    rows = []
    mixed_state = {"y": y, "e": e}

    def mixed_fields(y, e):
        if form.primal:
            return y[mixed.index["alpha"]], mixed.G_free @ y[mixed.index["beta"]] + mixed.G_ess @ e
        return mixed.G_free @ y[mixed.index["alpha"]] + mixed.G_ess @ e, y[mixed.index["beta"]]

    def observer(state, rec):
        t_mid = state.t - 0.5 * dt
        inp = setup.inputs(t_mid)
        load = None
        if inp.f is not None:
            fa = inp.f[blocks.index["alpha"]]
            load = np.zeros(mixed.E.shape[0])
            load[mixed.index["alpha"]] = fa if form.primal else mixed.G_free.T @ fa
        mixed_state["y"], mixed_state["e"] = stepper.step(mixed_state["y"], mixed_state["e"], inp, load)
        ref = dict(zip(("alpha", "beta"), mixed_fields(mixed_state["y"], mixed_state["e"])))
        diffs = []
        for name in ("alpha", "beta"):
            d = blocks.part(state.x_l, name) - ref[name]
            m = norms[name]
            den = math.sqrt(max(float(ref[name] @ (m @ ref[name])), 0.0))
            num = math.sqrt(max(float(d @ (m @ d)), 0.0))
            diffs.append(num / den if den > 0 else num)
        rows.append((state.t, *diffs))

    result = integrate(blocks, setup.initial_state(), setup.inputs, grid, [observer], prepare(blocks, dt, threads))
    return rows, result


def run_converge(cfg: RunConfig, kind: str):
    """Error reports at ``t_end`` for every ``n`` and fitted rates per (variable, norm)."""
    reports = []
    for n in cfg.n:
        setup = setup_for(cfg, kind, n)
        grid = TimeGrid.until(cfg.dt, cfg.t_end)
        res = integrate(setup.blocks, setup.initial_state(), setup.inputs, grid, (), prepare(setup.blocks, cfg.dt, cfg.threads))
        reports.append((n, error_norms(setup, res.state, grid.t_end)))
    rates = {}
    if len(reports) >= 2:
        hs = [r.h for _, r in reports]
        for key in reports[0][1].errors:
            errs = [r.errors[key] for _, r in reports]
            rates[key] = fit_rate(hs, errs) if min(errs) > 0 else float("nan")
    return reports, rates


# ---------------------------------------------------------------- modes


def _mode_sizes(cfg: RunConfig, out: Path) -> None:
    for kind in cfg.kinds:
        rows = dof_table(cfg.problem, kind, cfg.n)
        name = "sizes.csv" if len(cfg.kinds) == 1 else f"sizes_{kind}.csv"
        write_csv(out / name, ["n", "mixed_dofs", "hybrid_dofs", "ratio"], [(r.n, r.mixed, r.hybrid, r.ratio) for r in rows], "sizes")
        for r in rows:
            note = f"  (reference table lists {r.reference_ratio}%)" if r.flagged else ""
            print(f"{cfg.problem} {kind} n={r.n}: mixed {r.mixed}, hybrid {r.hybrid}, {r.ratio}%{note}")


def _mode_conserve(cfg: RunConfig, out: Path) -> None:
    rows = []
    has_div = False
    for kind in cfg.kinds:
        setup = setup_for(cfg, kind, cfg.n[0])
        result, divs = run_conserve(setup, cfg.dt, cfg.t_end, cfg.threads)
        has_div = has_div or divs is not None
        H = result.energies
        for i, rec in enumerate(result.log):
            row = [kind, rec.t, rec.H, rec.power, rec.residual]
            if divs is not None:
                row.append(divs[i])
            rows.append(row)
        drift = np.max(np.abs(H - H[0])) / max(abs(H[0]), 1e-300)
        worst = max(abs(r.residual) / max(abs(r.H), 1.0) for r in result.log)
        print(f"{kind}: max |H(t)-H(0)|/H(0) = {drift:.3e}, max power residual = {worst:.3e}")
        if divs is not None:
            print(f"{kind}: max |div(t)-div(0)| = {np.max(np.abs(divs - divs[0])):.3e}")
    cols = ["formulation", "t", "H", "boundary_power", "residual"] + (["div_norm"] if has_div else [])
    if has_div:
        rows = [r + [""] * (len(cols) - len(r)) for r in rows]
    write_csv(out / "steps.csv", cols, rows, "steps")


def _mode_equivalence(cfg: RunConfig, out: Path) -> None:
    rows = []
    for kind in cfg.kinds:
        setup = setup_for(cfg, kind, cfg.n[0])
        diffs, _ = run_equivalence(setup, cfg.dt, cfg.t_end, cfg.threads)
        rows += [(kind, *r) for r in diffs]
        worst = max(max(r[1], r[2]) for r in diffs) if diffs else 0.0
        status = "ok" if worst <= cfg.tol else "above tol"
        print(f"{kind}: max relative mixed/hybrid difference = {worst:.3e} ({status})")
    write_csv(out / "equivalence.csv", ["formulation", "t", "alpha_l2_diff", "beta_l2_diff"], rows, "equivalence")


def _mode_converge(cfg: RunConfig, out: Path) -> None:
    rows, rate_rows = [], []
    for kind in cfg.kinds:
        reports, rates = run_converge(cfg, kind)
        for n, rep in reports:
            for (var, norm), err in rep.errors.items():
                rows.append((kind, n, rep.h, var, norm, err))
        for (var, norm), rate in rates.items():
            rate_rows.append((kind, var, norm, rate))
            print(f"{kind} {var} {norm}: rate {rate:.3f}")
    write_csv(out / "convergence.csv", ["formulation", "n", "h", "variable", "norm", "error"], rows, "convergence")
    write_csv(out / "rates.csv", ["formulation", "variable", "norm", "rate"], rate_rows, "rates")


MODES = {
    "sizes": _mode_sizes,
    "conserve": _mode_conserve,
    "equivalence": _mode_equivalence,
    "converge": _mode_converge,
}


def run(config_path, overrides=()) -> int:
    try:
        text = Path(config_path).read_text()
        cfg = parse_config(text, overrides)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: cannot create {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            MODES[cfg.mode](cfg, out)
    except SolverError as exc:
        where = f" (step {exc.step})" if exc.step is not None else ""
        print(f"numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="phhybrid", description=__doc__)
    parser.add_argument("config", help="flat key=value config file")
    parser.add_argument("overrides", nargs="*", help="key=value overrides")
    args = parser.parse_args(argv)
    return run(args.config, args.overrides)


if __name__ == "__main__":
    raise SystemExit(main())
