"""Command-line interface."""

import csv
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import click
import numpy as np

from . import __version__
from .errors import ApmError, IdentificationWarning
from .estimate import EstimatorConfig, estimate_all
from .factors import second_moment
from .graph import build_overlap_graph, connected_components, equivalence_graphs, reach_profile
from .inference import bootstrap as run_bootstrap
from .panel import Panel, cohortize, load_long_csv, write_long_csv
from .perturb import check_bound, window_gap
from .sim import generate, mask_eval as run_mask_eval, truth_from_config
from .targets import AttributionShares, CellTarget, DynamicEffects

EXIT_OK, EXIT_ERROR, EXIT_WARN, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("apmpanel")


def _setup_logging():
    level = os.environ.get("APM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialize {type(x)}")


def _header(ctx: click.Context) -> dict:
    params = {k: v for k, v in ctx.params.items() if k != "threads"}
    return {"command": ctx.info_name, "config": params, "version": __version__}


def _float(x) -> str:
    return "" if x is None or not np.isfinite(x) else repr(float(x))


class _Outcome:
    """Collect identification warnings so --strict can escalate them."""

    def __init__(self):
        self.warnings = []

    def __enter__(self):
        self._ctx = warnings.catch_warnings(record=True)
        self.records = self._ctx.__enter__()
        warnings.simplefilter("always")
        return self

    def __exit__(self, *exc):
        self._ctx.__exit__(*exc)
        for w in self.records:
            log.warning("%s", w.message)
            if issubclass(w.category, IdentificationWarning):
                self.warnings.append(str(w.message))
        return False


def _finish(outcome: _Outcome, strict: bool):
    if strict and outcome.warnings:
        click.echo(f"identification warnings: {len(outcome.warnings)}", err=True)
        sys.exit(EXIT_WARN)


def _out_dir(out) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


common_input = [
    click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Long-format panel CSV."),
    click.option("--r", "r", required=True, type=click.IntRange(min=1), help="Number of factors."),
    click.option("--min-cohort-size", default=2, show_default=True, type=click.IntRange(min=1), help="Drop smaller cohorts."),
]


def _apply(options):
    def deco(f):
        for opt in reversed(options):
            f = opt(f)
        return f

    return deco


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="apmpanel")
def cli():
    """Estimate counterfactual cohort outcome means under a factor model."""
    _setup_logging()


@cli.command()
@_apply(common_input)
@click.option("--out", type=click.Path(file_okay=False), help="Directory for diagnose.json (default: stdout).")
@click.option("--rank-tol", default=1e-8, show_default=True, type=float, help="Relative rank threshold for the basis-aware edge check.")
@click.option("--strict", is_flag=True, help="Exit 2 when identification warnings occur.")
@click.pass_context
def diagnose(ctx, input_path, r, min_cohort_size, out, rank_tol, strict):
    """Report overlap-graph connectivity, reach profiles and spectra."""
    panel = load_long_csv(input_path)
    with _Outcome() as outcome:
        index = cohortize(panel, min_cohort_size)
        graph = build_overlap_graph(index, r)
        comps = connected_components(graph)
        if len(comps) > 1:
            warnings.warn(f"overlap graph has {len(comps)} components", IdentificationWarning)
        bip, check = equivalence_graphs(index)
        spectra = {}
        for k, c in enumerate(index.cohorts):
            if len(c.t_set) >= r:
                m = second_moment(panel, index, k)
                ev = np.linalg.eigvalsh(m.matrix[np.ix_(c.t_set, c.t_set)])
                ratios = (ev[1:] / np.where(ev[:-1] == 0, np.nan, ev[:-1])).tolist()
                spectra[k] = {"eigenvalues": ev.tolist(), "consecutive_ratios": [None if not np.isfinite(x) else x for x in ratios]}
        report = {
            **_header(ctx),
            "n_units": panel.n_units,
            "outcome_ids": list(panel.outcome_ids),
            "cohorts": [
                {"cohort_id": k, "size": c.size, "observed": [panel.outcome_ids[t] for t in c.t_set]}
                for k, c in enumerate(index.cohorts)
            ],
            "dropped_units": int(index.dropped_units.size),
            "edge_rule": "overlap count >= r (sufficient under general position of the factors)",
            "edges": [{"c1": a, "c2": b, "overlap": n} for a, b, n in graph.edges()],
            "components": comps,
            "reach_profiles": {
                k: [[panel.outcome_ids[t] for t in level] for level in reach_profile(graph, index, k)]
                for k in range(index.n_cohorts)
            },
            "bipartite_connected": bip,
            "check_graph_connected": check,
            "cohort_spectra": spectra,
        }
        try:
            est = estimate_all(panel, r, EstimatorConfig(min_cohort_size=min_cohort_size), index=index)
            report["apm_spectrum"] = est.apm.spectrum.tolist()
            report["eigengap"] = est.basis.eigengap
            refined = build_overlap_graph(index, r, est.basis.gamma_tilde, rank_tol)
            report["basis_edges"] = [{"c1": a, "c2": b, "overlap": n} for a, b, n in refined.edges()]
            report["rank_tol"] = rank_tol
        except ApmError as exc:
            report["apm_error"] = str(exc)
            warnings.warn(str(exc), IdentificationWarning)
    report["warnings"] = outcome.warnings
    if out:
        _write_json(_out_dir(out) / "diagnose.json", report)
    else:
        click.echo(json.dumps(report, indent=2, sort_keys=True, default=_jsonable))
    _finish(outcome, strict)


def _config(min_cohort_size, factor_method, gap_floor, target_cohort=None):
    return EstimatorConfig(factor_method, min_cohort_size, gap_floor, target_cohort)


estimator_options = [
    click.option("--factor-method", type=click.Choice(["pc", "split"]), default="pc", show_default=True, help="Cohort factor estimator."),
    click.option("--gap-floor", type=float, default=None, help="Weak-identification threshold for the APM eigengap."),
]


@cli.command()
@_apply(common_input + estimator_options)
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--target-cohort", type=int, default=None, help="Estimate this cohort's component.")
@click.option("--strict", is_flag=True, help="Exit 2 when identification warnings occur.")
@click.pass_context
def estimate(ctx, input_path, r, min_cohort_size, factor_method, gap_floor, out, target_cohort, strict):
    """Write mu_hat.csv and diagnostics.json."""
    panel = load_long_csv(input_path)
    with _Outcome() as outcome:
        est = estimate_all(panel, r, _config(min_cohort_size, factor_method, gap_floor, target_cohort))
    out = _out_dir(out)
    with open(out / "mu_hat.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("cohort_id", "outcome_id", "mu_hat", "observed"))
        for k in range(est.means.n_cohorts):
            for t, label in enumerate(panel.outcome_ids):
                writer.writerow((k, label, _float(est.means.mu_hat[k, t]), int(est.means.observed_flag[k, t])))
    index = est.index
    _write_json(
        out / "diagnostics.json",
        {
            **_header(ctx),
            "cohorts": [
                {
                    "cohort_id": k,
                    "size": c.size,
                    "probability": float(est.means.cohort_probs[k]),
                    "observed": [panel.outcome_ids[t] for t in c.t_set],
                    "zero_residual_dof": len(c.t_set) == r,
                }
                for k, c in enumerate(index.cohorts)
            ],
            "component": list(est.component),
            "excluded_cohorts": list(est.excluded_cohorts),
            "apm_spectrum": est.apm.spectrum.tolist(),
            "eigengap": est.basis.eigengap,
            "null_residual": est.basis.null_residual,
            "weak_identification": est.basis.weak,
            "factor_basis": est.basis.gamma_tilde.tolist(),
            "warnings": outcome.warnings,
        },
    )
    _finish(outcome, strict)


def _read_treated(path, n_cohorts, outcome_ids):
    m = np.full((n_cohorts, len(outcome_ids)), np.nan)
    col = {o: j for j, o in enumerate(outcome_ids)}
    with open(path, newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            m[int(row["cohort_id"]), col[row["outcome_id"].strip()]] = float(row["treated_mean"])
    return m


@cli.command()
@_apply(common_input + estimator_options)
@click.option("--target", "target_kind", type=click.Choice(["cell", "dynamic", "shares"]), required=True, help="Target parameter.")
@click.option("--cohort", "cohorts", type=int, multiple=True, help="Cohort id for --target cell (repeatable).")
@click.option("--outcome", "outcomes", type=str, multiple=True, help="Outcome id for --target cell (repeatable, paired with --cohort).")
@click.option("--pre", type=int, default=0, show_default=True, help="Pre-treatment coordinates for --target dynamic.")
@click.option("--len", "length", type=int, default=1, show_default=True, help="Path length for --target dynamic.")
@click.option("--treated-means", type=click.Path(exists=True, dir_okay=False), help="CSV cohort_id,outcome_id,treated_mean.")
@click.option("--normalize-relative-time", is_flag=True, help="Divide each dynamic coordinate by its total cohort share.")
@click.option("--t1", type=str, help="First outcome for --target shares.")
@click.option("--t2", type=str, help="Second outcome for --target shares.")
@click.option("--M", "M", type=click.IntRange(min=2), default=500, show_default=True, help="Bootstrap replicates.")
@click.option("--alpha", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=0.05, show_default=True)
@click.option("--seed", type=int, required=True, help="Random seed.")
@click.option("--uncentered", is_flag=True, help="Use the uncentered sup statistic.")
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True, help="Worker threads; results do not depend on it.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--strict", is_flag=True, help="Exit 2 when identification warnings occur.")
@click.pass_context
def bootstrap(
    ctx, input_path, r, min_cohort_size, factor_method, gap_floor, target_kind, cohorts, outcomes, pre, length,
    treated_means, normalize_relative_time, t1, t2, M, alpha, seed, uncentered, threads, out, strict,
):
    """Simultaneous confidence intervals by Bayesian bootstrap."""
    panel = load_long_csv(input_path)
    config = _config(min_cohort_size, factor_method, gap_floor)
    if target_kind == "cell":
        if not cohorts or len(cohorts) != len(outcomes):
            raise click.UsageError("--target cell needs matching --cohort and --outcome options")
        cells = tuple((c, panel.outcome_index(o)) for c, o in zip(cohorts, outcomes))
        target = CellTarget(cells)
        if len(set(c for c, _ in cells)) == 1:
            config = _config(min_cohort_size, factor_method, gap_floor, cells[0][0])
    elif target_kind == "dynamic":
        if not treated_means:
            raise click.UsageError("--target dynamic needs --treated-means")
        n_c = cohortize(panel, min_cohort_size).n_cohorts
        target = DynamicEffects(pre, length, _read_treated(treated_means, n_c, panel.outcome_ids), normalize=normalize_relative_time)
    else:
        if t1 is None or t2 is None:
            raise click.UsageError("--target shares needs --t1 and --t2")
        target = AttributionShares(panel.outcome_index(t1), panel.outcome_index(t2))
    with _Outcome() as outcome:
        res = run_bootstrap(panel, r, target, M, alpha, seed, config, centered=not uncentered, threads=threads)
    out = _out_dir(out)
    with open(out / "intervals.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("param", "estimate", "se", "ci_lo", "ci_hi"))
        for name, est, se, (lo, hi) in zip(res.names, res.theta_hat, res.sigma_hat, res.intervals):
            writer.writerow((name, _float(est), _float(se), _float(lo), _float(hi)))
    _write_json(
        out / "bootstrap.json",
        {
            **_header(ctx),
            "M": res.M,
            "alpha": res.alpha,
            "q_crit": res.q_crit,
            "seed": res.seed,
            "failed_replicates": res.failed_replicates,
            "centered": res.centered,
            "degenerate": res.degenerate.tolist(),
            "warnings": outcome.warnings,
        },
    )
    _finish(outcome, strict)


@cli.command()
@click.option("--dgp", required=True, type=click.Path(exists=True, dir_okay=False), help="DGP JSON document.")
@click.option("--n", "n", required=True, type=click.IntRange(min=1), help="Number of units.")
@click.option("--seed", type=int, default=None, help="Overrides the seed in the DGP file.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.pass_context
def simulate(ctx, dgp, n, seed, out):
    """Draw a synthetic panel from a DGP file."""
    config = json.loads(Path(dgp).read_text(encoding="utf-8"))
    if seed is None:
        if "seed" not in config:
            raise click.UsageError("a seed is required (--seed or 'seed' in the DGP file)")
        seed = int(config["seed"])
    truth = truth_from_config(config)
    panel = generate(truth, n, seed, outcome_ids=config.get("outcome_ids"))
    out = _out_dir(out)
    write_long_csv(panel, out / "panel.csv")
    _write_json(
        out / "truth.json",
        {
            **_header(ctx),
            "seed": seed,
            "gamma": truth.gamma,
            "mu_true": truth.mu_true,
            "t_sets": [list(s) for s in truth.t_sets],
            "outcome_ids": list(panel.outcome_ids),
        },
    )


def _parse_cell(cell_text: str, panel: Panel):
    cohort, _, outcome = cell_text.partition(":")
    if not outcome or not cohort.strip().lstrip("-").isdigit():
        raise click.UsageError(f"target cell {cell_text!r} must look like COHORT:OUTCOME")
    return int(cohort), panel.outcome_index(outcome)


@cli.command("mask-eval")
@_apply(common_input + estimator_options)
@click.option("--target-cell", "cells", multiple=True, required=True, help="COHORT:OUTCOME to mask (repeatable).")
@click.option("--B", "B", type=click.IntRange(min=2), default=100, show_default=True, help="Resamples per target.")
@click.option("--seed", type=int, required=True, help="Random seed.")
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.pass_context
def mask_eval(ctx, input_path, r, min_cohort_size, factor_method, gap_floor, cells, B, seed, threads, out):
    """Compare APM and two-way fixed effects on masked observed cells."""
    panel = load_long_csv(input_path)
    targets = [_parse_cell(s, panel) for s in cells]
    with _Outcome():
        rows = run_mask_eval(panel, targets, B, seed, ("apm", "twfe"), r, _config(min_cohort_size, factor_method, gap_floor), threads)
    out = _out_dir(out)
    with open(out / "mask_eval.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("target_cohort", "target_outcome", "estimator", "abs_bias", "se", "rmse"))
        for m in rows:
            writer.writerow((m.target_cohort, panel.outcome_ids[m.target_outcome], m.estimator, _float(m.abs_bias), _float(m.se), _float(m.rmse)))
    _write_json(out / "mask_eval.json", {**_header(ctx), "truths": {f"{m.target_cohort}:{panel.outcome_ids[m.target_outcome]}": m.truth for m in rows}})


@cli.command("perturb-check", hidden=True)
@click.option("--n", "n", type=click.IntRange(min=1), default=1000, show_default=True, help="Random instances.")
@click.option("--d", "d", type=click.IntRange(min=2), default=8, show_default=True, help="Matrix dimension.")
@click.option("--seed", type=int, default=0, show_default=True)
def perturb_check(n, d, seed):
    """Audit the eigenspace error bound on random symmetric pairs."""
    rng = np.random.default_rng(seed)
    held = 0
    for _ in range(n):
        a = rng.normal(size=(d, d))
        m = (a + a.T) / 2
        r = int(rng.integers(1, d))
        s = int(rng.integers(0, d - r + 1))
        gap = window_gap(np.linalg.eigvalsh(m), s, r)
        b = rng.normal(size=(d, d))
        delta = (b + b.T) / 2
        delta *= rng.uniform(0.01, 1.0) * gap / np.max(np.abs(np.linalg.eigvalsh(delta)))
        held += check_bound(m, m + delta, s, r).holds
    click.echo(json.dumps({"instances": n, "held": held, "version": __version__}))
    if held != n:
        sys.exit(EXIT_ERROR)


def main(argv=None) -> int:
    """Entry point returning the process exit status."""
    try:
        cli.main(args=argv, prog_name="apmpanel", standalone_mode=False)
    except click.exceptions.NoArgsIsHelpError as exc:
        click.echo(exc.ctx.get_help() if exc.ctx else str(exc), err=True)
        return EXIT_USAGE
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_ERROR
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ApmError, OSError, ValueError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
