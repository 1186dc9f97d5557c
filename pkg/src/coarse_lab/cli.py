"""Command line runner: one subcommand per experiment, JSON or CSV reports, fixed exit codes.

Exit codes: 0 when every asserted bound holds, 2 when violations were found
(the report lists witnesses), 1 for usage or configuration errors.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import sys

import click
import numpy as np
from click.core import ParameterSource

from . import boundary as bd
from . import coarse_maps as cm
from . import heintze as hz
from . import hyperbolicity as hy
from . import sqm
from . import sublinear as sl
from .spaces import make_rng, make_space

EXIT_OK, EXIT_USAGE, EXIT_VIOLATIONS = 0, 1, 2


class ConfigError(click.UsageError):
    pass


# -- config plumbing ---------------------------------------------------------------

def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _effective(ctx, kwargs):
    """Defaults, then the config file, then explicit flags."""
    cfg = _load_config(kwargs.get("config"))
    sub = cfg.pop("subcommand", None)
    if sub is not None and sub != ctx.info_name:
        raise ConfigError(f"config is for {sub!r}, not {ctx.info_name!r}")
    names = {p.name for p in ctx.command.params}
    unknown = set(cfg) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for name, value in kwargs.items():
        if name in ("config", "out", "fmt"):
            continue
        src = ctx.get_parameter_source(name)
        out[name] = cfg[name] if name in cfg and src != ParameterSource.COMMANDLINE else value
    return out


def config_hash(eff):
    return hashlib.sha256(json.dumps(eff, sort_keys=True).encode("utf-8")).hexdigest()


def _emit(ctx, kwargs, eff, ok, result, table):
    payload = {"subcommand": ctx.info_name, "config": eff, "config_hash": config_hash(eff),
               "ok": bool(ok), "result": cm._jsonable(result)}
    if kwargs.get("fmt") == "csv":
        buf = io.StringIO()
        buf.write(f"# subcommand={ctx.info_name} config_hash={payload['config_hash']} ok={bool(ok)}\n")
        buf.write(f"# config={json.dumps(eff, sort_keys=True)}\n")
        rows = [cm._jsonable(r) for r in table] or [{"ok": bool(ok)}]
        cols = list(rows[0].keys())
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: json.dumps(r.get(c)) if isinstance(r.get(c), (dict, list)) else r.get(c)
                        for c in cols})
        text = buf.getvalue()
    else:
        text = json.dumps(payload, sort_keys=True, indent=1) + "\n"
    out = kwargs.get("out")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)
    return EXIT_OK if ok else EXIT_VIOLATIONS


def common(f):
    f = click.option("--config", type=click.Path(dir_okay=False), default=None,
                     help="JSON file of option values; flags win.")(f)
    f = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Report path (default stdout).")(f)
    f = click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json")(f)
    f = click.option("--seed", type=int, default=0, show_default=True)(f)
    return f


def parse_admissible(text):
    """sqrt | log | const:A | powerlog:a,b,theta,k | a JSON object as produced by to_dict."""
    t = str(text).strip()
    if t == "sqrt":
        return sl.PowerLog(0.0, 1.0, 0.5, 0.0)
    if t == "log":
        return sl.PowerLog(0.0, 1.0, 0.0, 1.0)
    try:
        if t.startswith("const:"):
            return sl.Constant(float(t[6:]))
        if t.startswith("powerlog:"):
            a, b, th, k = (float(x) for x in t[9:].split(","))
            return sl.PowerLog(a, b, th, k)
        if t.startswith("{"):
            return sl.from_dict(json.loads(t))
    except (ValueError, sl.InvalidAdmissible) as exc:
        raise ConfigError(f"bad admissible function {t!r}: {exc}") from exc
    raise ConfigError(f"bad admissible function {t!r}")


def _floats(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _space(name):
    try:
        return make_space(name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


@click.group()
@click.option("--threads", type=int, default=None, help="Worker threads; COARSE_LAB_THREADS overrides.")
def cli(threads):
    """Experiments on sublinearly biLipschitz geometry of hyperbolic model spaces."""
    hy.set_threads(os.environ.get("COARSE_LAB_THREADS") or threads)


# -- subcommands -----------------------------------------------------------------------

@cli.command()
@common
@click.option("--model", default="halfplane", show_default=True)
@click.option("--n", type=int, default=200, show_default=True)
@click.option("--radius", type=float, default=8.0, show_default=True)
@click.pass_context
def delta(ctx, **kw):
    """Four-point delta of a sampled configuration."""
    e = _effective(ctx, kw)
    config = _space(e["model"]).sample_configuration({"radius": e["radius"]}, e["n"], e["seed"])
    est = hy.delta_four_point(config, seed=e["seed"])
    return _emit(ctx, kw, e, True, est.to_dict(), [est.to_dict()])


@cli.command()
@common
@click.option("--n", type=int, default=64, show_default=True)
@click.option("--count", type=int, default=1000, show_default=True)
@click.pass_context
def frink(ctx, **kw):
    """Chain metric versus kernel on random kernels with K <= 2."""
    e = _effective(ctx, kw)
    rng = make_rng(e["seed"])
    rows, viol = [], []
    for i in range(e["count"]):
        km = bd.random_kernel(e["n"], rng)
        C = bd.chain_metric(km)
        ok = bd.frink_sandwich_holds(km, C)
        off = ~np.eye(km.n, dtype=bool)
        ratio = km.values[off] / C[off]
        row = {"kernel": i, "K": km.quasi_ultrametric_K, "min_ratio": float(ratio.min()),
               "max_ratio": float(ratio.max()), "holds": ok}
        rows.append(row)
        if not ok:
            viol.append(row)
    res = {"count": e["count"], "violations": viol,
           "max_ratio": max(r["max_ratio"] for r in rows), "min_ratio": min(r["min_ratio"] for r in rows)}
    return _emit(ctx, kw, e, not viol, res, rows)


@cli.command()
@common
@click.option("--r-values", default="10,100,1000", show_default=True)
@click.option("--per-r", type=int, default=500, show_default=True)
@click.option("--n-random", type=int, default=10000, show_default=True)
@click.option("--slope-max", type=float, default=0.02, show_default=True)
@click.pass_context
def xratio(ctx, **kw):
    """Gap between log+ cross-ratios and distances of geodesics in the half-plane."""
    e = _effective(ctx, kw)
    sw = bd.prop13_sweep(None, _floats(e["r_values"]), e["per_r"], e["n_random"], e["seed"])
    rows = [{"R": r, "max_gap": g} for r, g in zip(sw.R_values, sw.max_gaps)]
    return _emit(ctx, kw, e, sw.slope < e["slope_max"], sw.to_dict(), rows)


@cli.command()
@common
@click.option("--lemma", default="all", show_default=True,
              type=click.Choice(("all",) + hy.LEMMA_IDS))
@click.option("--model", default="halfplane", show_default=True)
@click.option("--delta", type=float, default=math.log(2.0), show_default=True)
@click.option("--trials", type=int, default=10000, show_default=True)
@click.option("--corrupt", is_flag=True, help="Negative control: evaluate with a corrupted metric.")
@click.pass_context
def audit(ctx, **kw):
    """Hypothesis-satisfying trials of the thin-triangle lemmas."""
    e = _effective(ctx, kw)
    space = _space(e["model"])
    ids = hy.LEMMA_IDS if e["lemma"] == "all" else (e["lemma"],)
    reps = []
    for lid in ids:
        bad = hy.corrupted_for(space, lid, e["delta"], e["seed"]) if e["corrupt"] else None
        reps.append(hy.audit_lemma(space, e["delta"], lid, e["trials"], e["seed"], corrupt=bad))
    rows = [{k: v for k, v in r.to_dict().items() if k not in ("violations", "params")}
            | {"n_violations": len(r.violations)} for r in reps]
    res = {r.lemma_id: r.to_dict() for r in reps}
    return _emit(ctx, kw, e, all(r.ok for r in reps), res, rows)


@cli.command()
@common
@click.option("--model", default="halfplane", show_default=True)
@click.option("--lambda", "lam", type=float, default=1.0, show_default=True)
@click.option("--c", type=float, default=None, help="Additive constant (default 6 lambda^2 delta).")
@click.option("--delta", type=float, default=math.log(2.0), show_default=True)
@click.option("--trials", type=int, default=1000, show_default=True)
@click.option("--radius", type=float, default=8.0, show_default=True)
@click.option("--corrupt", is_flag=True, help="Negative control: evaluate with a corrupted metric.")
@click.pass_context
def morse(ctx, **kw):
    """Deviation of random (lambda, c)-quasigeodesics from geodesics."""
    e = _effective(ctx, kw)
    c = 6.0 * e["lam"] ** 2 * e["delta"] if e["c"] is None else e["c"]
    rep = cm.morse_sweep(_space(e["model"]), e["lam"], c, e["delta"], e["trials"], e["seed"],
                         e["radius"], e["corrupt"])
    return _emit(ctx, kw, e, rep.ok, rep.to_dict(), rep.violations or [
        {"max_observed": rep.max_observed, "bound": rep.bound, **rep.extra}])


@cli.command()
@common
@click.option("--model", default="comb", show_default=True)
@click.option("--lambda", "lam", type=float, default=1.0, show_default=True)
@click.option("--v", "v", default="sqrt", show_default=True)
@click.option("--delta", type=float, default=0.0, show_default=True)
@click.option("--rays", type=int, default=100, show_default=True)
@click.option("--t-max", type=float, default=None)
@click.pass_context
def track(ctx, **kw):
    """Sublinear tracking of perturbed rays."""
    e = _effective(ctx, kw)
    rep = cm.ray_tracking_sweep(_space(e["model"]), e["lam"], parse_admissible(e["v"]), e["delta"],
                                e["rays"], e["seed"], e["t_max"])
    return _emit(ctx, kw, e, rep.ok, rep.to_dict(), rep.violations or [
        {"max_observed": rep.max_observed, "bound": rep.bound, **rep.extra}])


def _sbe_map(e):
    kind = e["map"]
    if kind == "heintze":
        X, Y, f = cm.make_heintze_logmodel_pair(hz.HeintzeSpec.abelian(_floats(e["eigs"])),
                                                hz.HeintzeSpec.abelian(_floats(e["eigs"]),
                                                                       jordan=[int(j) for j in _floats(e["jordan"])]))
        return f
    space = _space(e["model"])
    if kind == "radial":
        return cm.make_radial_sbe(space, parse_admissible(e["u"]), e["sign"])
    if kind == "stretch":
        return cm.make_tree_stretch(space)
    if kind == "identity":
        return cm.identity_map(space)
    raise ConfigError(f"unknown map {kind!r}")


def _map_options(f):
    f = click.option("--map", "map", default="radial", show_default=True,
                     type=click.Choice(["radial", "heintze", "stretch", "identity"]))(f)
    f = click.option("--model", default="tree", show_default=True)(f)
    f = click.option("--u", default="sqrt", show_default=True)(f)
    f = click.option("--sign", type=click.Choice(["1", "-1"]), default="1")(f)
    f = click.option("--eigs", default="1,1", show_default=True)(f)
    f = click.option("--jordan", default="2", show_default=True)(f)
    f = click.option("--family", default="auto", show_default=True,
                     type=click.Choice(["auto", "constant", "log", "power"]))(f)
    return f


@cli.command("sbe-fit")
@common
@_map_options
@click.option("--n-pairs", type=int, default=3000, show_default=True)
@click.option("--r-max", type=float, default=None)
@click.pass_context
def sbe_fit(ctx, **kw):
    """Fit (lambda_lower, lambda_upper, v) of a model coarse map."""
    e = _effective(ctx, kw)
    e["sign"] = int(e["sign"])
    try:
        est = cm.estimate_sbe_constants(_sbe_map(e), e["n_pairs"], e["r_max"], e["seed"], e["family"])
    except cm.FitFailure as exc:
        return _emit(ctx, kw, e, False, {"error": str(exc)}, [{"error": str(exc)}])
    d = est.to_dict()
    rows = [{"radius": r, "up": a, "low": b} for r, (a, b) in est.shell_residuals.items()]
    return _emit(ctx, kw, e, True, d, rows)


@cli.command("sqm-check")
@common
@_map_options
@click.option("--n", type=int, default=2000, show_default=True)
@click.option("--s-max", type=float, default=100.0, show_default=True)
@click.option("--expect-lower", type=float, default=None, help="lambda_lower to hold alpha_lower against.")
@click.option("--expect-upper", type=float, default=None, help="lambda_upper to hold alpha_upper against.")
@click.option("--tolerance", type=float, default=0.1, show_default=True)
@click.pass_context
def sqm_check(ctx, **kw):
    """Cross-ratio distortion of a boundary map."""
    e = _effective(ctx, kw)
    e["sign"] = int(e["sign"])
    if e["map"] == "heintze":
        f = _sbe_map(e)
        X, Y = f.source, f.target
        phi = lambda p: Y.ideal(p.coords)
        rho, theta = sqm.heintze_quasimetric(X.spec), sqm.heintze_quasimetric(Y.spec)
        sampler = sqm.heintze_quadruple_sampler(X, e["s_max"])
    else:
        if e["model"] not in ("halfplane", "h2"):
            raise ConfigError("sqm-check runs on the half-plane or the Heintze pair")
        space = _space(e["model"])
        phi = sqm.boundary_extension(_sbe_map(e)) if e["map"] != "identity" else (lambda x: x)
        rho = theta = sqm.visual_metric(space)
        sampler = sqm.halfplane_quadruple_sampler(space, e["s_max"])
    try:
        est = sqm.sqm_check(phi, rho, theta, sampler, e["n"], e["seed"], e["family"])
    except cm.FitFailure as exc:
        return _emit(ctx, kw, e, False, {"error": str(exc)}, [{"error": str(exc)}])
    ok = True
    if e["expect_lower"] is not None:
        ok &= est.alpha_lower >= e["expect_lower"] * (1 - e["tolerance"])
    if e["expect_upper"] is not None:
        ok &= est.alpha_upper <= e["expect_upper"] * (1 + e["tolerance"])
    rows = [{"proxy": r, "up": a, "low": b} for r, (a, b) in est.residual_table.items()]
    return _emit(ctx, kw, e, ok, est.to_dict(), rows)


def _spec(kind, eigs):
    if kind == "euclidean":
        return hz.EUCLIDEAN_PLANE
    if kind == "heisenberg":
        return hz.HeintzeSpec.heisenberg(1)
    return hz.HeintzeSpec.abelian(_floats(eigs))


@cli.command("dim-box")
@common
@click.option("--target", default="euclidean", show_default=True,
              type=click.Choice(["euclidean", "heisenberg", "abelian"]))
@click.option("--eigs", default="1,2", show_default=True)
@click.option("--region", default=None, type=click.Choice(["unit_cube", "unit_ball"]))
@click.option("--n-points", type=int, default=10 ** 6, show_default=True)
@click.option("--expect", type=float, default=None)
@click.option("--tol", type=float, default=0.1, show_default=True)
@click.pass_context
def dim_box(ctx, **kw):
    """Box-counting dimension of a quasimetric region."""
    e = _effective(ctx, kw)
    region = e["region"] or ("unit_ball" if e["target"] == "heisenberg" else "unit_cube")
    est, err = hz.box_counting_dimension(_spec(e["target"], e["eigs"]), region, None, e["seed"], e["n_points"])
    ok = e["expect"] is None or abs(est - e["expect"]) <= e["tol"]
    res = {"estimate": est, "stderr": err, "region": region}
    return _emit(ctx, kw, e, ok, res, [res])


@cli.command()
@common
@click.option("--eigs", default="1,1", show_default=True)
@click.option("--direction", default=None, help="Eigenvector of eigenvalue 1 (default first axis).")
@click.option("--radii", default="0.05,0.1,0.2,0.4,0.8", show_default=True)
@click.option("--n-samples", type=int, default=2 ** 18, show_default=True)
@click.option("--tol", type=float, default=0.02, show_default=True)
@click.pass_context
def lines(ctx, **kw):
    """Scaling of the measure of parallel lines meeting small quasiballs."""
    e = _effective(ctx, kw)
    spec = hz.HeintzeSpec.abelian(_floats(e["eigs"]))
    d = [1.0] + [0.0] * (spec.dim - 1) if e["direction"] is None else _floats(e["direction"])
    try:
        fit, expected, trans = hz.line_count_scaling(spec, d, _floats(e["radii"]), e["n_samples"], e["seed"])
    except hz.HeintzeError as exc:
        raise ConfigError(str(exc)) from exc
    res = {"exponent": fit, "expected": expected, "transversal": list(map(float, trans))}
    return _emit(ctx, kw, e, abs(fit - expected) <= e["tol"], res,
                 [{"radius": r, "transversal": t} for r, t in zip(_floats(e["radii"]), trans)])


@cli.command()
@common
@click.option("--max-dim", type=int, default=32, show_default=True)
@click.pass_context
def classify(ctx, **kw):
    """SBE invariants of rank-one symmetric spaces and pairwise verdicts."""
    e = _effective(ctx, kw)
    records, verdicts = hz.classification_table(e["max_dim"])
    ids = hz.all_ids(e["max_dim"])
    diag_ok = all(str(hz.sbe_distinguishable(i, i)) == "Homothetic" for i in ids)
    off_ok = all(v != "Homothetic" for _, _, v in verdicts)
    rows = [{"id": k, "dim_X": r.dim_X, "dim_boundary": r.dim_boundary, "p": r.p, "dim_Im_K": r.dim_Im_K}
            for k, r in records.items()]
    res = {"records": {k: list(r.as_tuple()) for k, r in records.items()},
           "verdicts": [list(v) for v in verdicts]}
    return _emit(ctx, kw, e, diag_ok and off_ok, res, rows)


def main(argv=None):
    try:
        rv = cli.main(args=argv, prog_name="coarse-lab", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
