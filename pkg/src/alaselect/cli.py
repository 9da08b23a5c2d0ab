"""Command-line front end: data ingestion, selection runs, basis expansion,
simulation studies, and reference oracles.

Outputs are CSV tables plus a meta.json recording the seed, a hash of the
configuration, and the library version, so runs can be reproduced and
diffed byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import families as fam
from . import marginal_engines as engines
from . import simdesigns
from .data_model import ConstraintSet, DesignMatrix, build_cache
from .errors import (
    DegenerateResponse,
    InvalidModel,
    NoConvergence,
    NotConcave,
    NotConcaveAtExpansion,
    NotInvertible,
    RefuseEnumeration,
    SelectionError,
    ToleranceNotMet,
)
from .priors import ModelPriorSpec, ParamPriorSpec
from .search import (
    enumerate_posterior,
    gibbs_models,
    screen_then_refine,
)

_EXIT_CODES = [
    (InvalidModel, 3),
    (NotInvertible, 4),
    (RefuseEnumeration, 5),
    (NotConcaveAtExpansion, 6),
    (NotConcave, 6),
    (NoConvergence, 7),
    (DegenerateResponse, 8),
    (ToleranceNotMet, 9),
]


class ParseError(ValueError):
    pass


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _read_table(path: str) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """CSV rows with their 1-based line numbers; the header is row one."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if row]
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: empty file")
    header_line, header = rows[0]
    width = len(header)
    for line, row in rows[1:]:
        if len(row) != width:
            raise ParseError(
                f"{path}:{line}: expected {width} cells, found {len(row)}"
            )
    return [h.strip() for h in header], rows[1:]


def _cell_float(cell: str, path: str, line: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError as exc:
        raise ParseError(
            f"{path}:{line}: column {column!r} has non-numeric value {cell!r}"
        ) from exc


def ingest(
    data_path: str,
    groups_path: str,
    response: str,
    status: Optional[str] = None,
    constraints_path: Optional[str] = None,
    intercept_group: Optional[int] = None,
    max_groups: Optional[int] = None,
    standardize: bool = False,
):
    """Read data, group map, and constraints into the engine types.

    Covariate columns are reordered by group id.  Returns the design, the
    response (a survival pair when ``status`` is given), and the constraint
    set (None when no file and no cap was supplied).
    """
    header, rows = _read_table(data_path)
    if response not in header:
        raise ParseError(f"{data_path}: response column {response!r} not found")
    if status is not None and status not in header:
        raise ParseError(f"{data_path}: status column {status!r} not found")
    g_header, g_rows = _read_table(groups_path)
    if [h.lower() for h in g_header[:2]] != ["column", "group"]:
        raise ParseError(f"{groups_path}: header must be 'column,group'")
    group_of: dict[str, int] = {}
    for line, row in g_rows:
        name = row[0].strip()
        if name in group_of:
            raise ParseError(f"{groups_path}:{line}: column {name!r} listed twice")
        if name not in header:
            raise ParseError(
                f"{groups_path}:{line}: column {name!r} not present in the data"
            )
        if name in (response, status):
            raise ParseError(
                f"{groups_path}:{line}: column {name!r} is the response/status"
            )
        try:
            group_of[name] = int(row[1])
        except ValueError as exc:
            raise ParseError(
                f"{groups_path}:{line}: group id {row[1]!r} is not an integer"
            ) from exc
    missing = [
        c for c in header if c not in (response, status) and c not in group_of
    ]
    if missing:
        raise ParseError(
            f"{groups_path}: data columns without a group: {', '.join(missing)}"
        )
    group_ids = sorted(set(group_of.values()))
    id_to_pos = {gid: k for k, gid in enumerate(group_ids)}
    ordered = sorted(
        group_of, key=lambda name: (id_to_pos[group_of[name]], header.index(name))
    )
    col_idx = {name: header.index(name) for name in header}
    n = len(rows)
    values = np.empty((n, len(ordered)))
    y = np.empty(n)
    ev = np.empty(n, dtype=bool) if status is not None else None
    for r, (line, row) in enumerate(rows):
        y[r] = _cell_float(row[col_idx[response]], data_path, line, response)
        if ev is not None:
            ev[r] = bool(
                _cell_float(row[col_idx[status]], data_path, line, status)
            )
        for c, name in enumerate(ordered):
            values[r, c] = _cell_float(row[col_idx[name]], data_path, line, name)
    if standardize:
        sd = values.std(axis=0, ddof=0)
        mean = values.mean(axis=0)
        keep = sd > 0
        values[:, keep] = (values[:, keep] - mean[keep]) / sd[keep]
    groups = []
    start = 0
    for gid in group_ids:
        size = sum(1 for name in ordered if group_of[name] == gid)
        groups.append((start, start + size))
        start += size
    ig_pos = None
    if intercept_group is not None:
        if intercept_group not in id_to_pos:
            raise ParseError(f"intercept group {intercept_group} not in the group map")
        ig_pos = id_to_pos[intercept_group]
    design = DesignMatrix(values, tuple(groups), intercept_group=ig_pos)
    constraints = None
    if constraints_path is not None or max_groups is not None:
        requires = []
        if constraints_path is not None:
            c_header, c_rows = _read_table(constraints_path)
            if [h.lower() for h in c_header[:2]] != ["child", "parent"]:
                raise ParseError(f"{constraints_path}: header must be 'child,parent'")
            for line, row in c_rows:
                try:
                    child, parent = int(row[0]), int(row[1])
                except ValueError as exc:
                    raise ParseError(
                        f"{constraints_path}:{line}: group ids must be integers"
                    ) from exc
                for gid in (child, parent):
                    if gid not in id_to_pos:
                        raise ParseError(
                            f"{constraints_path}:{line}: unknown group id {gid}"
                        )
                requires.append((id_to_pos[child], id_to_pos[parent]))
        try:
            constraints = ConstraintSet(
                max_groups=max_groups if max_groups is not None else len(groups),
                requires=tuple(requires),
            )
        except ValueError as exc:
            raise ParseError(f"{constraints_path}: {exc}") from exc
    if ev is not None:
        return design, fam.SurvivalData(log_time=y, observed=ev), constraints
    return design, y, constraints


def _make_family(args) -> fam.FamilySpec:
    if args.family == "logistic":
        return fam.logistic()
    if args.family == "poisson":
        return fam.poisson()
    if args.family == "gaussian":
        return fam.gaussian(args.phi)
    if args.family == "gaussian-unknown":
        return fam.gaussian_unknown()
    raise ParseError(f"unknown family {args.family!r}")


def _make_prior(args) -> ParamPriorSpec:
    return ParamPriorSpec(
        kind=args.prior, g=args.g, phi_prior=(args.phi_prior[0], args.phi_prior[1])
    )


def _config_hash(args) -> str:
    payload = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_rows(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_summary_files(out: Path, summary, meta: dict) -> None:
    model_header = ["model", "log_score", "probability"]
    model_rows = [
        ["".join(map(str, bits)), _fmt(score), _fmt(prob)]
        for bits, score, prob in zip(
            summary.models, summary.log_scores, summary.probabilities
        )
    ]
    _write_rows(out / "models.csv", model_header, model_rows)
    inc_header = ["group", "inclusion"]
    raw = summary.inclusion_raw
    if raw is not None:
        inc_header.append("inclusion_raw")
    inc_rows = []
    for j, value in enumerate(summary.inclusion):
        row = [str(j), _fmt(value)]
        if raw is not None:
            row.append(_fmt(raw[j]))
        inc_rows.append(row)
    _write_rows(out / "inclusion.csv", inc_header, inc_rows)
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_select(args) -> int:
    t_start = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    design, response, constraints = ingest(
        args.data,
        args.groups,
        args.response,
        status=args.status,
        constraints_path=args.constraints,
        intercept_group=args.intercept_group,
        max_groups=args.max_groups,
        standardize=args.standardize,
    )
    t_ingest = time.perf_counter()
    prior = _make_prior(args)
    model_prior = ModelPriorSpec(
        n_groups=design.n_groups,
        p_total=design.p,
        c_exponent=args.model_prior_c,
        constraints=constraints,
        intercept_group=design.intercept_group,
    )
    meta = {
        "version": __version__,
        "config_hash": _config_hash(args),
        "seed": args.seed,
        "method": args.method,
        "search": args.search,
        "family": args.family,
        "prior": args.prior,
        "g": args.g,
        "n": design.n,
        "p": design.p,
        "n_groups": design.n_groups,
    }
    if args.family == "aft":
        if not isinstance(response, fam.SurvivalData):
            raise ParseError("family aft needs --status")
        ctx = engines.build_aft_context(design, response)
        scorer = engines.AftScorer(ctx, prior, model_prior, method=args.method)
        meta["tau0"] = ctx.tau0
    else:
        family = _make_family(args)
        center = args.center
        method = args.method
        if args.curvature_adjust:
            if method != "ala":
                raise ParseError("--curvature-adjust applies to method ala")
            method = "ala-curvadj"
            center = "intercept-mle"
        if isinstance(response, fam.SurvivalData):
            raise ParseError("a status column was given for a non-survival family")
        cache = build_cache(design, response, family, center=center)
        scorer = engines.ModelScorer(
            cache,
            family,
            prior,
            model_prior,
            method=method,
            refine_steps=args.refine_steps,
        )
        if scorer.curvature is not None:
            meta["rho_hat"] = scorer.curvature.rho_hat
        if not family.phi_known:
            meta["phi0"] = fam.phi0_mle(family, cache.y)
    if args.screen_threshold is not None:
        if args.search != "enumerate":
            raise ParseError("screening requires --search enumerate")
        refine = _clone_scorer_for_refine(scorer)
        summary = screen_then_refine(
            scorer, refine, threshold=args.screen_threshold, constraints=constraints
        )
    elif args.search == "enumerate":
        summary = enumerate_posterior(scorer, constraints)
    elif args.search == "gibbs":
        summary = gibbs_models(
            scorer, n_scans=args.n_scans, seed=args.seed, constraints=constraints
        )
    else:
        raise ParseError(f"unknown search {args.search!r}")
    t_score = time.perf_counter()
    meta["timings"] = {
        "ingest_s": round(t_ingest - t_start, 6),
        "search_s": round(t_score - t_ingest, 6),
        "total_s": round(t_score - t_start, 6),
    }
    meta["n_models_scored"] = len(summary.models)
    _write_summary_files(out, summary, meta)
    return 0


def _clone_scorer_for_refine(scorer):
    """Mode-expansion scorer on the same cached statistics, for screening."""
    if isinstance(scorer, engines.AftScorer):
        return engines.AftScorer(
            scorer.ctx, scorer.prior, scorer.model_prior, method="la"
        )
    return engines.ModelScorer(
        scorer.cache,
        scorer.family,
        scorer.prior,
        scorer.model_prior,
        method="la" if scorer.prior.kind == "gzellner" else "ala",
    )


def run_expand(args) -> int:
    header, rows = _read_table(args.data)
    skip = {args.response}
    if args.status is not None:
        skip.add(args.status)
    for name in skip:
        if name not in header:
            raise ParseError(f"{args.data}: column {name!r} not found")
    covariates = [h for h in header if h not in skip]
    n = len(rows)
    raw = np.empty((n, len(covariates)))
    passthrough = np.empty((n, len(skip)))
    skip_list = [args.response] + ([args.status] if args.status else [])
    for r, (line, row) in enumerate(rows):
        for c, name in enumerate(covariates):
            raw[r, c] = _cell_float(row[header.index(name)], args.data, line, name)
        for c, name in enumerate(skip_list):
            passthrough[r, c] = _cell_float(
                row[header.index(name)], args.data, line, name
            )
    design, constraints = simdesigns.expand_spline_design(
        raw, dim=args.spline_dim, max_groups=args.max_groups
    )
    p = len(covariates)
    names = list(covariates)
    for j, name in enumerate(covariates):
        names += [f"{name}__dev{k + 1}" for k in range(args.spline_dim)]
    out_header = skip_list + names
    out_rows = []
    for r in range(n):
        cells = [_fmt(v) for v in passthrough[r]]
        cells += [_fmt(v) for v in design.values[r]]
        out_rows.append(cells)
    _write_rows(Path(args.out_data), out_header, out_rows)
    group_rows = [[name, str(j)] for j, name in enumerate(covariates)]
    for j, name in enumerate(covariates):
        group_rows += [
            [f"{name}__dev{k + 1}", str(p + j)] for k in range(args.spline_dim)
        ]
    _write_rows(Path(args.out_groups), ["column", "group"], group_rows)
    constraint_rows = [[str(c), str(par)] for c, par in constraints.requires]
    _write_rows(Path(args.out_constraints), ["child", "parent"], constraint_rows)
    return 0


def _aggregate(rows: list[dict], keys: list[str]) -> dict:
    if not rows:
        return {}
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}


def run_simstudy(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    design = args.design
    rows: list[dict] = []
    if design == "logistic-trend" or design == "poisson-trend":
        adjusted_too = design == "poisson-trend"
        header = [
            "replicate",
            "incl_active",
            "incl_inactive",
            "correct_top",
            "seconds_per_model",
        ]
        if adjusted_too:
            header += ["incl_active_adj", "incl_inactive_adj"]
        for rep in range(args.replicates):
            rng = np.random.default_rng(args.seed + rep)
            maker = (
                simdesigns.poisson_trend if adjusted_too else simdesigns.logistic_trend
            )
            sim = maker(rng, args.n)
            family = fam.poisson() if adjusted_too else fam.logistic()
            cache = build_cache(sim.design, sim.response, family, center="zero")
            scorer = engines.ModelScorer(
                cache,
                family,
                ParamPriorSpec(),
                ModelPriorSpec(n_groups=10, p_total=10),
            )
            t0 = time.perf_counter()
            summary = enumerate_posterior(scorer)
            per_model = (time.perf_counter() - t0) / len(summary.models)
            active = np.array(sim.active_groups)
            inactive = np.setdiff1d(np.arange(10), active)
            truth = tuple(int(j in sim.active_groups) for j in range(10))
            row = {
                "replicate": rep,
                "incl_active": float(np.mean(summary.inclusion[active])),
                "incl_inactive": float(np.mean(summary.inclusion[inactive])),
                "correct_top": float(summary.top(1)[0][0] == truth),
                "seconds_per_model": per_model,
            }
            if adjusted_too:
                cache_adj = build_cache(
                    sim.design,
                    sim.response,
                    family,
                    center="intercept-mle",
                    gram=cache.gram,
                )
                adj = engines.ModelScorer(
                    cache_adj,
                    family,
                    ParamPriorSpec(),
                    ModelPriorSpec(n_groups=10, p_total=10),
                    method="ala-curvadj",
                )
                s_adj = enumerate_posterior(adj)
                row["incl_active_adj"] = float(np.mean(s_adj.inclusion[active]))
                row["incl_inactive_adj"] = float(np.mean(s_adj.inclusion[inactive]))
            rows.append(row)
        agg_keys = header[1:]
    elif design == "gmom-accuracy":
        header = ["replicate", "model_size", "err_ala", "err_la", "seconds_per_model"]
        family = fam.gaussian(1.0)
        for rep in range(args.replicates):
            rng = np.random.default_rng(args.seed + rep)
            sim = simdesigns.gmom_accuracy(rng, args.n)
            cache = build_cache(sim.design, sim.response, family, center="zero")
            prior = ParamPriorSpec(kind="gmom")
            scorer = engines.ModelScorer(cache, family, prior)
            la_scorer = engines.ModelScorer(cache, family, prior, method="la")
            for bits in simdesigns.nested_models(10):
                t0 = time.perf_counter()
                approx = scorer.log_ml(bits)
                elapsed = time.perf_counter() - t0
                la_val = la_scorer.log_ml(bits)
                model = sim.design.model(bits)
                exact = engines.exact_gmom_mc(
                    model,
                    cache,
                    family,
                    prior,
                    n_draws=args.mc_draws,
                    rng=np.random.default_rng(10_000 + rep),
                ).log_ml
                rows.append(
                    {
                        "replicate": rep,
                        "model_size": model.p_gamma,
                        "err_ala": approx - exact,
                        "err_la": la_val - exact,
                        "seconds_per_model": elapsed,
                    }
                )
        agg_keys = ["err_ala", "err_la", "seconds_per_model"]
    elif design in ("aft-scenario1", "aft-scenario2"):
        scenario = 1 if design.endswith("1") else 2
        header = [
            "replicate",
            "censoring_rate",
            "incl_linear_x1",
            "incl_spline_x2",
            "max_inactive_incl",
            "seconds_per_model",
        ]
        for rep in range(args.replicates):
            rng = np.random.default_rng(args.seed + rep)
            x, data, meta_r = simdesigns.aft_scenario(rng, args.n, scenario)
            design_m, constraints = simdesigns.expand_spline_design(x)
            ctx = engines.build_aft_context(design_m, data)
            scorer = engines.AftScorer(
                ctx,
                ParamPriorSpec(),
                ModelPriorSpec(
                    n_groups=design_m.n_groups,
                    p_total=design_m.p,
                    constraints=constraints,
                ),
            )
            t0 = time.perf_counter()
            summary = gibbs_models(
                scorer, n_scans=args.n_scans, seed=args.seed + rep,
                constraints=constraints,
            )
            elapsed = time.perf_counter() - t0
            p_cov = x.shape[1]
            active = {0, p_cov + 1}
            inactive = [j for j in range(design_m.n_groups) if j not in active | {1}]
            rows.append(
                {
                    "replicate": rep,
                    "censoring_rate": meta_r["censoring_rate"],
                    "incl_linear_x1": float(summary.inclusion[0]),
                    "incl_spline_x2": float(summary.inclusion[p_cov + 1]),
                    "max_inactive_incl": float(np.max(summary.inclusion[inactive])),
                    "seconds_per_model": elapsed / max(len(summary.models), 1),
                }
            )
        agg_keys = header[1:]
    else:
        raise ParseError(f"unknown design {design!r}")
    table = [[_fmt(r[k]) if isinstance(r[k], float) else str(r[k]) for k in header] for r in rows]
    _write_rows(out / "replicates.csv", header, table)
    agg = _aggregate(rows, agg_keys)
    _write_rows(
        out / "summary.csv",
        ["metric", "mean"],
        [[k, _fmt(v)] for k, v in agg.items()],
    )
    meta = {
        "version": __version__,
        "config_hash": _config_hash(args),
        "design": design,
        "replicates": args.replicates,
        "n": args.n,
        "seed": args.seed,
    }
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def run_oracle(args) -> int:
    design, response, _ = ingest(
        args.data,
        args.groups,
        args.response,
        status=args.status,
        standardize=args.standardize,
    )
    bits = tuple(int(b) for b in args.model)
    model = design.model(bits)
    prior = _make_prior(args)
    family = _make_family(args)
    cache = build_cache(design, response, family, center="zero")
    if args.oracle == "exact-gaussian":
        score = engines.exact_gaussian_marginal(model, cache, family, prior)
    elif args.oracle == "gmom-quadrature":
        score = engines.exact_gmom_blockdiag(model, cache, family, prior)
    elif args.oracle == "gmom-mc":
        score = engines.exact_gmom_mc(
            model,
            cache,
            family,
            prior,
            n_draws=args.mc_draws,
            rng=np.random.default_rng(args.seed),
        )
    elif args.oracle == "quadrature":
        if model.p_gamma != 1:
            raise ParseError("the quadrature oracle handles single-column models")
        cols = design.columns_for(bits)
        z = design.values[:, cols[0]]
        phi = float(family.phi) if family.phi_known else None
        if phi is None:
            raise ParseError("the quadrature oracle needs a known dispersion")
        a_j = float(z @ z)
        scale = phi * prior.g * design.n / a_j

        def log_integrand(betas):
            vals = np.empty(betas.shape[0])
            for i, b in enumerate(betas):
                vals[i] = fam.loglik(family, z * b, cache.y, phi) - 0.5 * (
                    np.log(2.0 * np.pi * scale) + b * b / scale
                )
            return vals

        log_ml = engines.quadrature_oracle(log_integrand)
        score = engines.MarginalScore(log_ml, "quadrature", np.empty(0), {})
    else:
        raise ParseError(f"unknown oracle {args.oracle!r}")
    payload = {
        "model": "".join(map(str, bits)),
        "oracle": args.oracle,
        "log_ml": score.log_ml,
        "version": __version__,
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out is not None:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _add_common_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV with a header row")
    p.add_argument("--groups", required=True, help="CSV mapping column,group")
    p.add_argument("--response", required=True, help="response column name")
    p.add_argument("--status", default=None, help="event indicator column (survival)")
    p.add_argument(
        "--family",
        default="gaussian",
        choices=["logistic", "poisson", "gaussian", "gaussian-unknown", "aft"],
        help="likelihood family",
    )
    p.add_argument("--phi", type=float, default=1.0, help="known gaussian dispersion")
    p.add_argument(
        "--prior", default="gzellner", choices=["gzellner", "gmom"],
        help="coefficient prior",
    )
    p.add_argument("--g", type=float, default=1.0, help="prior scale multiplier")
    p.add_argument(
        "--phi-prior", type=float, nargs=2, default=(0.01, 0.01),
        metavar=("A", "B"), help="inverse-gamma dispersion prior",
    )
    p.add_argument("--standardize", action="store_true", help="scale columns to unit sd")
    p.add_argument("--seed", type=int, default=0, help="random seed")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alaselect",
        description="Bayesian model selection with fast approximate marginals",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sel = sub.add_parser("select", help="score and rank models for a dataset")
    _add_common_model_flags(p_sel)
    p_sel.add_argument("--constraints", default=None, help="CSV of child,parent pairs")
    p_sel.add_argument(
        "--intercept-group", type=int, default=None,
        help="group id forced into every model",
    )
    p_sel.add_argument(
        "--max-groups", type=int, default=None, help="cap on active groups"
    )
    p_sel.add_argument(
        "--model-prior-c", type=float, default=0.0,
        help="complexity exponent of the model prior",
    )
    p_sel.add_argument(
        "--center", default="zero", choices=["zero", "intercept-mle"],
        help="expansion center",
    )
    p_sel.add_argument(
        "--curvature-adjust", action="store_true",
        help="inflate the expansion Hessian by the response variance ratio",
    )
    p_sel.add_argument(
        "--method",
        default="ala",
        choices=["ala", "ala-refined", "la", "exact-gaussian"],
        help="marginal engine",
    )
    p_sel.add_argument(
        "--refine-steps", type=int, default=1,
        help="likelihood Newton steps before the expansion (ala-refined)",
    )
    p_sel.add_argument(
        "--search", default="enumerate", choices=["enumerate", "gibbs"]
    )
    p_sel.add_argument("--n-scans", type=int, default=1000, help="Gibbs scans")
    p_sel.add_argument(
        "--screen-threshold", type=float, default=None,
        help="drop groups below this inclusion, then rescore survivors",
    )
    p_sel.add_argument("--out", required=True, help="output directory")
    p_sel.set_defaults(func=run_select)

    p_exp = sub.add_parser(
        "expand", help="add spline deviation groups for each covariate"
    )
    p_exp.add_argument("--data", required=True)
    p_exp.add_argument("--response", required=True)
    p_exp.add_argument("--status", default=None)
    p_exp.add_argument("--spline-dim", type=int, default=5)
    p_exp.add_argument("--max-groups", type=int, default=None)
    p_exp.add_argument("--out-data", required=True)
    p_exp.add_argument("--out-groups", required=True)
    p_exp.add_argument("--out-constraints", required=True)
    p_exp.set_defaults(func=run_expand)

    p_sim = sub.add_parser("simstudy", help="run a canned simulation design")
    p_sim.add_argument(
        "--design",
        required=True,
        choices=[
            "logistic-trend",
            "poisson-trend",
            "gmom-accuracy",
            "aft-scenario1",
            "aft-scenario2",
        ],
    )
    p_sim.add_argument("--replicates", type=int, default=10)
    p_sim.add_argument("--n", type=int, default=1000)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--n-scans", type=int, default=500, help="Gibbs scans (survival)")
    p_sim.add_argument(
        "--mc-draws", type=int, default=100_000, help="draws for the Monte Carlo oracle"
    )
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=run_simstudy)

    p_or = sub.add_parser("oracle", help="reference scores for one model")
    _add_common_model_flags(p_or)
    p_or.add_argument("--model", required=True, help="bit string, one bit per group")
    p_or.add_argument(
        "--oracle",
        default="exact-gaussian",
        choices=["exact-gaussian", "gmom-quadrature", "gmom-mc", "quadrature"],
    )
    p_or.add_argument("--mc-draws", type=int, default=200_000)
    p_or.add_argument("--out", default=None, help="optional JSON output path")
    p_or.set_defaults(func=run_oracle)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SelectionError as exc:
        for klass, code in _EXIT_CODES:
            if isinstance(exc, klass):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 10
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
