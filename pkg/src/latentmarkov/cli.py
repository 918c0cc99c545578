"""Command-line interface.

Input data
    ``--format wide`` (default): columns ``y{j}_t{t}`` for responses and
    ``x{m}_t{t}`` for covariates, optional ``id`` and ``freq``.
    ``--format long``: one row per unit and occasion; name the columns with
    ``--id-col``, ``--time-col``, ``--resp-cols`` and ``--cov-cols``.
    Response codes start at ``--code-base`` (default 0).

Outputs (in ``--output-dir``)
    ``fit``: params.json, trace.csv, summary.txt, optional se.json/se.csv.
    ``decode``: Ul.csv and Ug.csv (one row per unit, 1-based states).
    ``select``: selection.csv and selection.json.
    ``bootstrap``: se.json and se.csv.
    ``simulate``: simulated.csv (wide format, one row per unit).
    Every command also writes manifest.json.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
The default thread count comes from ``LMEST_THREADS`` (else all cores);
it never changes the results.
"""

import csv
import json
import platform
import sys
import time
from pathlib import Path

import click
import numpy as np
import scipy

from . import __version__
from .data import LongSchema, expand, long2wide, read_long_csv, read_wide_csv, write_wide_csv
from .decoding import decode
from .errors import ConfigError, DataError, NumericalError
from .fitting import FitConfig
from .inference import (
    FITTERS,
    bootstrap_se,
    default_threads,
    multistart,
    numerical_information,
    select_states,
    simulate,
)
from .serialize import fit_to_json, load_fit, params_to_dict

VARIANTS = tuple(FITTERS)


class Run:
    """Collects artifact paths and writes the run manifest."""

    def __init__(self, command, output_dir, options):
        self.command = command
        self.out = Path(output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.options = options
        self.t0 = time.perf_counter()
        self.paths = []
        self.diagnostics = {}

    def path(self, name):
        p = self.out / name
        self.paths.append(p)
        return p

    def write_text(self, name, text):
        self.path(name).write_text(text)

    def finish(self):
        manifest = {
            "command": self.command,
            "config": self.options,
            "seed": self.options.get("seed"),
            "versions": {
                "latentmarkov": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "wall_time_s": round(time.perf_counter() - self.t0, 6),
            "diagnostics": self.diagnostics,
            "artifacts": [p.name for p in self.paths],
        }
        mp = self.out / "manifest.json"
        mp.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
        for p in self.paths + [mp]:
            click.echo(str(p))


def _split(text):
    return [s.strip() for s in text.split(",") if s.strip()] if text else []


def _ints(text):
    try:
        return [int(s) for s in _split(text)]
    except ValueError:
        raise click.UsageError(f"expected comma-separated integers, got {text!r}") from None


def data_options(f):
    opts = [
        click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False),
                     help="CSV data file."),
        click.option("--format", "fmt", type=click.Choice(["wide", "long"]), default="wide", show_default=True),
        click.option("--id-col", default="id", show_default=True, help="Unit id column (long format)."),
        click.option("--time-col", default="time", show_default=True, help="Occasion column, 1..T (long format)."),
        click.option("--resp-cols", default=None, help="Comma-separated response columns (long format)."),
        click.option("--cov-cols", default=None, help="Comma-separated covariate columns (long format)."),
        click.option("--categories", default=None, help="Comma-separated category counts per response."),
        click.option("--code-base", default=0, show_default=True, type=int, help="Smallest response code."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def load_data(input_path, fmt, id_col, time_col, resp_cols, cov_cols, categories, code_base):
    """Return ``(dataset, unit_ids, unit_to_config)``."""
    cats = _ints(categories) or None
    if fmt == "wide":
        return read_wide_csv(input_path, categories=cats, code_base=code_base, return_index=True)
    resp = _split(resp_cols)
    if not resp:
        raise click.UsageError("--resp-cols is required with --format long")
    schema = LongSchema(id_col, time_col, resp, _split(cov_cols), cats, code_base)
    return long2wide(read_long_csv(input_path, schema), categories=cats, return_index=True)


def model_options(f):
    opts = [
        click.option("--k", type=int, default=None, help="Number of latent states."),
        click.option("--k1", type=int, default=None, help="Latent classes (mixed)."),
        click.option("--k2", type=int, default=None, help="Latent states (mixed)."),
        click.option("--tol", type=float, default=1e-8, show_default=True, help="Relative log-likelihood tolerance."),
        click.option("--maxit", type=int, default=1000, show_default=True),
        click.option("--start", type=click.Choice(["det", "random", "input"]), default="det", show_default=True),
        click.option("--n-starts", type=int, default=None, help="Random starts (default: none with det, 2+k with random)."),
        click.option("--init", "init_path", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="params.json supplying the start for --start input."),
        click.option("--param", type=click.Choice(["multilogit", "difflogit"]), default=None,
                     help="Transition parameterization (cov-latent only)."),
        click.option("--fix-psi", is_flag=True, help="Keep emission probabilities at their start (cov-latent)."),
        click.option("--homogeneous", is_flag=True, help="One transition matrix for all occasions (basic)."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--threads", type=int, default=None, help="Worker threads (env LMEST_THREADS)."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def build_config(variant, k, k1, k2, tol, maxit, start, n_starts, init_path, param, fix_psi, homogeneous, seed,
                 need_size=True):
    if param is not None and variant != "cov-latent":
        raise click.UsageError("--param applies to the cov-latent variant only")
    if fix_psi and variant != "cov-latent":
        raise click.UsageError("--fix-psi applies to the cov-latent variant only")
    if homogeneous and variant != "basic":
        raise click.UsageError("--homogeneous applies to the basic variant only")
    if need_size:
        if variant == "mixed" and (k1 is None or k2 is None):
            raise click.UsageError("the mixed variant needs --k1 and --k2")
        if variant != "mixed" and k is None:
            raise click.UsageError("--k is required")
    if variant == "mixed" and k is not None:
        raise click.UsageError("use --k1/--k2 with the mixed variant")
    if variant != "mixed" and (k1 is not None or k2 is not None):
        raise click.UsageError("--k1/--k2 apply to the mixed variant only")
    init = None
    if start == "input":
        if init_path is None:
            raise click.UsageError("--start input needs --init params.json")
        prev = load_fit(init_path)
        if prev.variant != variant:
            raise click.UsageError(f"--init holds a {prev.variant} fit, not {variant}")
        init = prev.params
    elif init_path is not None:
        raise click.UsageError("--init is only used with --start input")
    if fix_psi and start != "input":
        raise click.UsageError("--fix-psi needs --start input")
    try:
        return FitConfig(k=k, k1=k1, k2=k2, tol=tol, maxit=maxit, start=start, n_starts=n_starts, seed=seed,
                         param=param or "multilogit", homogeneous=homogeneous, fix_psi=fix_psi, init=init)
    except ConfigError as e:
        raise click.UsageError(str(e)) from None


def _fmt(x, width=10):
    return f"{x:>{width}.4f}"


def _matrix(lines, M, rows, cols):
    lines.append("        " + "".join(f"{c:>10}" for c in cols))
    for name, row in zip(rows, np.atleast_2d(M)):
        lines.append(f"{name:>8}" + "".join(_fmt(v) for v in row))


def summary_text(fit, command):
    """Human-readable summary: convergence block, then parameter blocks."""
    p = fit.params
    lines = [f"Call: {command}", "", "Convergence info:",
             f"{'LogLik':>14}{'np':>6}{'AIC':>14}{'BIC':>14}",
             f"{fit.loglik:>14.3f}{fit.n_params:>6d}{fit.aic:>14.3f}{fit.bic:>14.3f}",
             f"iterations: {fit.iterations}  converged: {fit.converged}", ""]
    d = params_to_dict(p)
    if fit.variant == "basic":
        k = p.k
        st = [f"u={u + 1}" for u in range(k)]
        lines.append("Initial probabilities:")
        _matrix(lines, p.piv[None], [""], st)
        mats = [p.PI] if p.homogeneous else list(p.PI)
        for t, P in enumerate(mats):
            lines += ["", "Transition probabilities" + ("" if p.homogeneous else f" (into t={t + 2})") + ":"]
            _matrix(lines, P, st, st)
    elif fit.variant == "cov-latent":
        k = p.k
        lines.append("Initial logits Be (rows: intercept, covariates; cols: states 2..k):")
        _matrix(lines, p.Be, ["(Int)"] + [f"x{i}" for i in range(1, p.Be.shape[0])], [f"u={u}" for u in range(2, k + 1)])
        lines += ["", f"Transition logits Ga ({p.param}):"]
        if p.param == "difflogit":
            _matrix(lines, p.Ga.G0, [f"u={u + 1}" for u in range(k)], [f"u={u + 1}" for u in range(k)])
            if p.Ga.p:
                lines.append("")
                _matrix(lines, p.Ga.G1, [f"u={u + 1}" for u in range(k)], [f"x{i + 1}" for i in range(p.Ga.p)])
        else:
            for a in range(k):
                lines.append(f"  from u={a + 1}:")
                _matrix(lines, p.Ga[a], ["(Int)"] + [f"x{i}" for i in range(1, p.Ga.shape[1])],
                        [f"u={b + 1}" for b in range(k) if b != a])
    elif fit.variant == "cov-manifest":
        disp = p.display()
        k = p.k
        lines.append("Cut-points mu (centred):")
        _matrix(lines, disp["mu"][None], [""], [f"y>={y}" for y in range(1, p.c)])
        lines += ["", "Support points al:"]
        _matrix(lines, disp["al"][None], [""], [f"u={u + 1}" for u in range(k)])
        if len(p.be):
            lines += ["", "Regression coefficients be:"]
            _matrix(lines, p.be[None], [""], [f"x{i + 1}" for i in range(len(p.be))])
        st = [f"u={u + 1}" for u in range(k)]
        lines += ["", "Stationary initial probabilities:"]
        _matrix(lines, p.piv[None], [""], st)
        lines += ["", "Transition probabilities:"]
        _matrix(lines, p.PI, st, st)
    else:
        st = [f"v={v + 1}" for v in range(p.k2)]
        lines.append("Class weights la:")
        _matrix(lines, p.la[None], [""], [f"U={u + 1}" for u in range(p.k1)])
        lines += ["", "Initial probabilities Piv (rows: states, cols: classes):"]
        _matrix(lines, p.Piv, st, [f"U={u + 1}" for u in range(p.k1)])
        for u in range(p.k1):
            lines += ["", f"Transition probabilities, class U={u + 1}:"]
            _matrix(lines, p.PI[:, :, u], st, st)
    if "Psi" in d:
        Psi = p.Psi
        kk = Psi.shape[2]
        for j, c in enumerate(p.categories):
            lines += ["", f"Conditional response probabilities, item {j + 1}:"]
            _matrix(lines, Psi[j, :c], [f"y={y}" for y in range(c)], [f"u={u + 1}" for u in range(kk)])
    if fit.warnings:
        lines += ["", "Warnings:"] + [f"  {w}" for w in fit.warnings]
    return "\n".join(lines) + "\n"


def _write_se(run, report):
    run.write_text("se.json", report.to_json() + "\n")
    run.write_text("se.csv", report.to_csv())


def _command_line():
    return "latentmarkov " + " ".join(sys.argv[1:])


@click.group()
@click.version_option(__version__)
def main():
    """Latent Markov models for categorical panel data."""


@main.command("fit")
@click.argument("variant", type=click.Choice(VARIANTS))
@data_options
@model_options
@click.option("--out-se", type=click.Choice(["none", "numerical", "bootstrap"]), default="none", show_default=True)
@click.option("--B", "n_boot", type=int, default=200, show_default=True, help="Bootstrap replicates.")
@click.option("--output-dir", type=click.Path(file_okay=False), default="out", show_default=True)
def fit_cmd(variant, input_path, fmt, id_col, time_col, resp_cols, cov_cols, categories, code_base,
            k, k1, k2, tol, maxit, start, n_starts, init_path, param, fix_psi, homogeneous, seed, threads,
            out_se, n_boot, output_dir):
    """Fit a model by EM and write params.json, trace.csv and summary.txt."""
    cfg = build_config(variant, k, k1, k2, tol, maxit, start, n_starts, init_path, param, fix_psi, homogeneous, seed)
    threads = threads or default_threads()
    ds, _, _ = load_data(input_path, fmt, id_col, time_col, resp_cols, cov_cols, categories, code_base)
    run = Run("fit", output_dir, {"variant": variant, **cfg.echo(), "input": str(input_path), "out_se": out_se})
    fit = multistart(variant, ds, cfg, threads=threads)
    run.write_text("params.json", fit_to_json(fit))
    with run.path("trace.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loglik"])
        for i, ll in enumerate(fit.trace):
            w.writerow([i, repr(float(ll))])
    run.write_text("summary.txt", summary_text(fit, _command_line()))
    if out_se == "numerical":
        _write_se(run, numerical_information(fit, ds))
    elif out_se == "bootstrap":
        _write_se(run, bootstrap_se(fit, ds, B=n_boot, seed=seed, threads=threads))
    run.diagnostics = {"converged": fit.converged, "iterations": fit.iterations, "loglik": fit.loglik,
                       "warnings": fit.warnings, "best_start": fit.diagnostics.get("best_start"),
                       "monotone_violations": fit.diagnostics.get("monotone_violations", [])}
    run.finish()


def _check_decode_inputs(fit, ds):
    p = fit.params
    if fit.variant == "cov-latent":
        p1 = p.Be.shape[0] - 1
        p2 = p.Ga.p if p.param == "difflogit" else p.Ga.shape[1] - 1
        if ds.p1 != p1 or ds.p2 != p2:
            raise click.UsageError(f"the fit expects {p1} initial and {p2} transition covariates; "
                                   f"the data has {ds.p1} and {ds.p2}")
    if fit.variant == "cov-manifest" and (ds.p1 != len(p.be) or ds.p2 != len(p.be)):
        raise click.UsageError(f"the fit expects {len(p.be)} covariates at every occasion")


@main.command("decode")
@click.option("--fit", "fit_path", required=True, type=click.Path(exists=True, dir_okay=False), help="params.json")
@data_options
@click.option("--output-dir", type=click.Path(file_okay=False), default="out", show_default=True)
def decode_cmd(fit_path, input_path, fmt, id_col, time_col, resp_cols, cov_cols, categories, code_base, output_dir):
    """Local (Ul.csv) and global (Ug.csv) decoding, one row per unit."""
    fit = load_fit(fit_path)
    ds, ids, index = load_data(input_path, fmt, id_col, time_col, resp_cols, cov_cols, categories, code_base)
    _check_decode_inputs(fit, ds)
    run = Run("decode", output_dir, {"fit": str(fit_path), "input": str(input_path)})
    res = decode(fit, ds)
    for name, M in (("Ul.csv", res.Ul), ("Ug.csv", res.Ug)):
        with run.path(name).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id"] + [f"t{t + 1}" for t in range(ds.T)])
            for uid, row in zip(ids, index):
                w.writerow([uid] + [int(v) for v in M[row]])
    run.diagnostics = {"units": len(ids), "configurations": ds.n_config}
    run.finish()


@main.command("select")
@click.argument("variant", type=click.Choice(VARIANTS))
@data_options
@model_options
@click.option("--k-min", type=int, default=1, show_default=True)
@click.option("--k-max", type=int, default=None, help="Largest k (non-mixed variants).")
@click.option("--k1-values", default=None, help="Comma-separated class counts (mixed).")
@click.option("--k2-values", default=None, help="Comma-separated state counts (mixed).")
@click.option("--output-dir", type=click.Path(file_okay=False), default="out", show_default=True)
def select_cmd(variant, input_path, fmt, id_col, time_col, resp_cols, cov_cols, categories, code_base,
               k, k1, k2, tol, maxit, start, n_starts, init_path, param, fix_psi, homogeneous, seed, threads,
               k_min, k_max, k1_values, k2_values, output_dir):
    """Fit a range of sizes and tabulate loglik, np, AIC and BIC."""
    if start == "input":
        raise click.UsageError("select does not accept --start input")
    cfg = build_config(variant, k, k1, k2, tol, maxit, start, n_starts, init_path, param, fix_psi, homogeneous,
                       seed, need_size=False)
    if variant == "mixed":
        g1, g2 = _ints(k1_values), _ints(k2_values)
        if not g1 or not g2:
            raise click.UsageError("the mixed variant needs --k1-values and --k2-values")
        sizes = [(a, b) for a in g1 for b in g2]
    else:
        if k_max is None:
            raise click.UsageError("--k-max is required")
        if k_min < 1 or k_max < k_min:
            raise click.UsageError("need 1 <= k-min <= k-max")
        sizes = list(range(k_min, k_max + 1))
    threads = threads or default_threads()
    ds, _, _ = load_data(input_path, fmt, id_col, time_col, resp_cols, cov_cols, categories, code_base)
    run = Run("select", output_dir, {"variant": variant, **cfg.echo(), "input": str(input_path),
                                     "sizes": [list(s) if isinstance(s, tuple) else s for s in sizes]})
    table = select_states(ds, variant, sizes, cfg, threads=threads)
    run.write_text("selection.csv", table.to_csv())
    run.write_text("selection.json", table.to_json() + "\n")
    run.diagnostics = {"best_AIC": table.best_aic, "best_BIC": table.best_bic,
                       "errors": [r["error"] for r in table.rows if r["error"]]}
    run.finish()


@main.command("bootstrap")
@click.option("--fit", "fit_path", required=True, type=click.Path(exists=True, dir_okay=False), help="params.json")
@data_options
@click.option("--B", "n_boot", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=None)
@click.option("--output-dir", type=click.Path(file_okay=False), default="out", show_default=True)
def bootstrap_cmd(fit_path, input_path, fmt, id_col, time_col, resp_cols, cov_cols, categories, code_base,
                  n_boot, seed, threads, output_dir):
    """Parametric bootstrap standard errors of a saved fit."""
    if n_boot <= 0:
        raise click.UsageError("B must be positive")
    fit = load_fit(fit_path)
    if fit.variant not in ("basic", "cov-latent"):
        raise click.UsageError("bootstrap supports the basic and cov-latent variants only")
    ds, _, _ = load_data(input_path, fmt, id_col, time_col, resp_cols, cov_cols, categories, code_base)
    _check_decode_inputs(fit, ds)
    run = Run("bootstrap", output_dir, {"fit": str(fit_path), "input": str(input_path), "B": n_boot, "seed": seed})
    rep = bootstrap_se(fit, ds, B=n_boot, seed=seed, threads=threads or default_threads())
    _write_se(run, rep)
    run.diagnostics = {"n_failed": rep.n_failed, "warnings": rep.warnings}
    run.finish()


@main.command("simulate")
@click.option("--fit", "fit_path", required=True, type=click.Path(exists=True, dir_okay=False), help="params.json")
@click.option("--n", type=int, default=None, help="Number of units (models without covariates).")
@click.option("--T", "n_occ", type=int, default=None, help="Number of occasions.")
@click.option("--covariates", "cov_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Wide CSV whose covariates (one row per unit) are held fixed.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output-dir", type=click.Path(file_okay=False), default="out", show_default=True)
def simulate_cmd(fit_path, n, n_occ, cov_path, seed, output_dir):
    """Simulate unit-level data from a saved fit (wide CSV)."""
    fit = load_fit(fit_path)
    X1 = X2 = None
    if cov_path is not None:
        units = expand(read_wide_csv(cov_path))
        X1, X2 = units.X1, units.X2
    elif fit.variant in ("cov-latent", "cov-manifest"):
        p = fit.params
        npar = p.Be.shape[0] - 1 if fit.variant == "cov-latent" else len(p.be)
        if npar:
            raise click.UsageError("this fit has covariates; pass --covariates")
    run = Run("simulate", output_dir, {"fit": str(fit_path), "n": n, "T": n_occ, "seed": seed,
                                       "covariates": cov_path})
    try:
        ds = simulate(fit.params, n=n, seed=seed, T=n_occ, X1=X1, X2=X2, collapse_units=False)
    except ConfigError as e:
        raise click.UsageError(str(e)) from None
    write_wide_csv(ds, run.path("simulated.csv"))
    run.diagnostics = {"units": ds.n_total}
    run.finish()


def run_cli(argv=None):
    """Entry point with the documented exit codes."""
    try:
        main.main(args=argv, prog_name="latentmarkov", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 2 if isinstance(e, click.UsageError) else 1
    except ConfigError as e:
        click.echo(f"Error: {e}", err=True)
        return 2
    except DataError as e:
        click.echo(f"Data error: {e}", err=True)
        return 3
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as e:
        click.echo(f"Numerical error: {e}", err=True)
        return 4
    return 0


def entry():
    sys.exit(run_cli())


if __name__ == "__main__":
    entry()
