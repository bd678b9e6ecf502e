"""Command-line front end: simulate, fit, graph, query, report.

Exit codes: 0 success, 2 validation error, 3 convergence/fit failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np
import scipy

from . import __version__
from .core import RESPONSES, SURVIVAL_RESPONSE, CohortError, cohort_rows, CSV_COLUMNS, load_cohort, stratify
from .ggm import (EXHAUSTIVE_MAX_VERTICES, GgmError, GgmFit, IpsConvergenceError, PredictedEffectsMatrix,
                  select_graph)
from .graphs import (GraphError, UndirectedGraph, build_extended_graph, dot_extended, dot_undirected,
                     extended_find_path, find_path, fixture_graph, FIXTURES, resolve_label)
from .dtcox import expand_risk_sets
from .pipeline import diagnostics, fit_stratum
from .sim import ScenarioError, censoring_fraction, load_scenarios, preset, simulate_strata, PRESETS
from .numerics import derive_seed

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE = 0, 2, 3

CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "AnalysisConfig",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "data": {"type": ["string", "null"], "description": "cohort CSV path"},
        "stratify_by": {"enum": ["bonus", "none"], "default": "bonus"},
        "responses": {"type": "array", "items": {"enum": list(RESPONSES)}, "minItems": 8, "maxItems": 8,
                      "uniqueItems": True, "default": list(RESPONSES)},
        "survival_response": {"const": SURVIVAL_RESPONSE, "default": SURVIVAL_RESPONSE},
        "selection_method": {"enum": ["stepwise", "exhaustive"], "default": "stepwise"},
        "residual_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1, "default": 0.95},
        "seed": {"type": "integer", "default": 0},
        "output_dir": {"type": ["string", "null"], "default": None},
        "survival_covariates": {"type": "boolean", "default": True},
        "survival_frailty": {"type": "boolean", "default": True},
    },
}


class ValidationError(Exception):
    pass


class ConvergenceFailure(Exception):
    pass


@dataclass
class AnalysisConfig:
    data: str | None = None
    stratify_by: str = "bonus"
    responses: list[str] = field(default_factory=lambda: list(RESPONSES))
    survival_response: str = SURVIVAL_RESPONSE
    selection_method: str = "stepwise"
    residual_fraction: float = 0.95
    seed: int = 0
    output_dir: str | None = None
    survival_covariates: bool = True
    survival_frailty: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisConfig":
        try:
            jsonschema.validate(d, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ValidationError(f"config {where}: {exc.message}") from None
        cfg = cls(**d)
        if cfg.responses.count(cfg.survival_response) != 1:
            raise ValidationError("config responses: survival_response must appear exactly once")
        if cfg.output_dir is not None and not os.access(Path(cfg.output_dir), os.W_OK):
            raise ValidationError(f"config output_dir: {cfg.output_dir!r} is not writable")
        return cfg

    def echo(self) -> dict:
        d = asdict(self)
        # paths are reduced to names so reruns from other directories stay byte-identical
        d["data"] = Path(self.data).name if self.data else None
        d.pop("output_dir")
        return d


# ---- io helpers ---------------------------------------------------------------

def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def atomic_write(files: dict[Path, str]) -> None:
    """Write every file via temp + rename; nothing is written if any content is missing."""
    staged = []
    try:
        for path, text in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, path))
        for tmp, path in staged:
            os.replace(tmp, path)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def versions() -> dict:
    return {"mvglmm": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def _csv_text(cohort) -> str:
    lines = [",".join(CSV_COLUMNS)]
    lines += [",".join(row) for row in cohort_rows(cohort)]
    return "\n".join(lines) + "\n"


# ---- commands -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.config and args.preset:
        raise ValidationError("give either --config or --preset, not both")
    if args.config:
        scenarios = load_scenarios(args.config)
        if args.seed is not None:
            for k, name in enumerate(sorted(scenarios)):
                scenarios[name].seed = derive_seed(args.seed, k)
    else:
        scenarios = preset(args.preset or "paper-like", args.n, args.seed or 0)
    cohort, truths = simulate_strata(scenarios)
    out = Path(args.out)
    truth_path = Path(args.truth) if args.truth else out.with_suffix(".truth.json")
    bonus, no_bonus = stratify(cohort)
    summary = {
        "n": cohort.n,
        "censoring_fraction": censoring_fraction(cohort),
        "strata": {name: {"n": sub.n, "censoring_fraction": censoring_fraction(sub)}
                   for name, sub in (("bonus", bonus), ("no_bonus", no_bonus)) if sub.n},
    }
    truth = {
        "format": "mvglmm-truth/1",
        "seed": args.seed,
        "summary": summary,
        "scenarios": {k: v.to_dict() for k, v in scenarios.items()},
        "truth_graphs": {k: [list(e) for e in v.graph().sorted_edges()] for k, v in scenarios.items()},
        "truth": {k: v.to_dict() for k, v in truths.items()},
    }
    atomic_write({out: _csv_text(cohort), truth_path: dumps(truth)})
    print(f"wrote {out} ({cohort.n} students, censoring {summary['censoring_fraction']:.2%}) and {truth_path}")
    return EXIT_OK


def _load_config(args) -> AnalysisConfig:
    d = read_json(Path(args.config)) if getattr(args, "config", None) else {}
    if getattr(args, "data", None):
        d["data"] = str(args.data)
    if getattr(args, "stratify", None):
        d["stratify_by"] = args.stratify
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "method", None):
        d["selection_method"] = args.method
    cfg = AnalysisConfig.from_dict(d)
    if not cfg.data:
        raise ValidationError("no data file given (--data or config 'data')")
    return cfg


def _fit_json(cfg: AnalysisConfig, data_path: Path, pp_dir: Path | None) -> tuple[dict, dict[Path, str]]:
    try:
        cohort = load_cohort(data_path)
    except FileNotFoundError:
        raise ValidationError(f"{data_path}: file not found") from None
    if cfg.stratify_by == "bonus":
        parts = [(name, sub) for name, sub in zip(("bonus", "no_bonus"), stratify(cohort))]
    else:
        parts = [("all", cohort)]
    strata = {}
    extra: dict[Path, str] = {}
    for name, sub in parts:
        if sub.n == 0:
            raise ValidationError(f"stratum {name!r} is empty")
        fit = fit_stratum(sub, cfg.residual_fraction, name, cfg.survival_covariates, cfg.survival_frailty)
        if not fit.usable:
            raise ConvergenceFailure(f"stratum {name!r}: no usable predicted effects matrix: {fit.errors}")
        models = {label: g.summary() for label, g in fit.gaussian.items()}
        models[SURVIVAL_RESPONSE] = fit.survival.summary()
        V = fit.effects()
        strata[name] = {
            "n": sub.n,
            "student_ids": sub.student_ids,
            "models": models,
            "converged": {k: bool(m["converged"]) for k, m in models.items()},
            "errors": fit.errors,
            "predicted_effects": {"labels": list(V.labels), "values": V.values.tolist()},
            "diagnostics": diagnostics(fit),
        }
        if pp_dir is not None:
            extra[pp_dir / f"person_period_{name}.csv"] = expand_risk_sets(sub).csv_text()
    doc = {
        "format": "mvglmm-fit/1",
        "config": cfg.echo(),
        "data_sha256": sha256_file(data_path),
        "versions": versions(),
        "strata": strata,
    }
    return doc, extra


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out or Path(cfg.output_dir or ".") / "fit.json")
    pp_dir = Path(args.person_period) if args.person_period else None
    doc, extra = _fit_json(cfg, Path(cfg.data), pp_dir)
    atomic_write({out: dumps(doc), **extra})
    for name, s in doc["strata"].items():
        flags = [k for k, ok in s["converged"].items() if not ok]
        note = f"; not converged: {', '.join(flags)}" if flags else ""
        print(f"stratum {name}: n={s['n']}, 8 models fitted{note}")
    print(f"wrote {out}")
    return EXIT_OK


def effects_from_fit(doc: dict, stratum: str) -> PredictedEffectsMatrix:
    try:
        pe = doc["strata"][stratum]["predicted_effects"]
        return PredictedEffectsMatrix(np.asarray(pe["values"], dtype=float), tuple(pe["labels"]), stratum)
    except KeyError as exc:
        raise ValidationError(f"fit JSON missing field {exc}") from None


def graph_doc(fit: GgmFit, stratum: str) -> dict:
    return fit.to_dict(stratum)


def graph_from_doc(d: dict) -> tuple[UndirectedGraph, dict]:
    try:
        g = UndirectedGraph(d["vertices"], [(e["a"], e["b"]) for e in d["edges"]])
        labels = {frozenset((e["a"], e["b"])): float(e["partial_correlation"]) for e in d["edges"]}
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed graph JSON: {exc}") from None
    return g, labels


def cmd_graph(args) -> int:
    method = args.method or "stepwise"
    if method == "exhaustive" and len(RESPONSES) > EXHAUSTIVE_MAX_VERTICES:
        raise ValidationError(
            f"exhaustive search is limited to <= {EXHAUSTIVE_MAX_VERTICES} vertices; "
            f"the latent graph has {len(RESPONSES)}. Use --method stepwise."
        )
    fit_path = Path(args.data)
    doc = read_json(fit_path)
    if doc.get("format") != "mvglmm-fit/1":
        raise ValidationError(f"{fit_path}: not a fit file")
    out = Path(args.out or fit_path.with_name("graph.json"))
    files: dict[Path, str] = {}
    graphs = {}
    for stratum in doc["strata"]:
        fit = select_graph(effects_from_fit(doc, stratum), method)
        graphs[stratum] = graph_doc(fit, stratum)
        stem = out.with_suffix("")
        files[Path(f"{stem}.{stratum}.dot")] = dot_undirected(fit.graph, fit.partial_correlations,
                                                              name=f"{stratum}")
        if args.extended:
            files[Path(f"{stem}.{stratum}.extended.dot")] = dot_extended(build_extended_graph(fit.graph),
                                                                         name=f"{stratum}_extended")
    gdoc = {"format": "mvglmm-graph/1", "method": method, "fit_sha256": sha256_file(fit_path),
            "versions": versions(), "graphs": graphs}
    files[out] = dumps(gdoc)
    atomic_write(files)
    for stratum, g in graphs.items():
        print(f"stratum {stratum}: {len(g['edges'])} edges, BIC {g['bic']:.3f}")
    print(f"wrote {out}")
    return EXIT_OK


def _select_graph_entry(doc: dict, stratum: str | None) -> dict:
    if "graphs" not in doc:
        return doc
    graphs = doc["graphs"]
    if stratum is None:
        if len(graphs) != 1:
            raise ValidationError(f"graph file holds strata {sorted(graphs)}; choose one with --stratum")
        return next(iter(graphs.values()))
    if stratum not in graphs:
        raise ValidationError(f"stratum {stratum!r} not in graph file (have {sorted(graphs)})")
    return graphs[stratum]


def _split(value: str | None) -> list[str]:
    return [v for v in (value or "").split(",") if v.strip()]


def cmd_query(args) -> int:
    if args.fixture:
        graph = fixture_graph(args.fixture)
    elif args.data:
        graph, _ = graph_from_doc(_select_graph_entry(read_json(Path(args.data)), args.stratum))
    else:
        raise ValidationError("give --data GRAPH_JSON or --fixture NAME")
    ext = bool(args.extended)
    A = [resolve_label(x, ext) for x in _split(args.a)]
    S = [resolve_label(x, ext) for x in _split(args.given)]
    if ext:
        eg = build_extended_graph(graph)
        observables = [v for v in eg.vertices if v not in eg.latent_vertices]
        B = ([v for v in observables if v not in A] if args.b == "rest"
             else [resolve_label(x, ext) for x in _split(args.b)])
        path = extended_find_path(eg, A, B, S)
    else:
        B = ([v for v in graph.vertices if v not in A and v not in S] if args.b == "rest"
             else [resolve_label(x, ext) for x in _split(args.b)])
        path = find_path(graph, A, B, S)
    print(json.dumps({"A": A, "B": B, "given": S, "extended": ext, "separated": path is None,
                      "path": path}))
    if path is not None:
        print("path: " + " -- ".join(path))
    return EXIT_OK


def _variance_ratios(fit_doc: dict) -> dict | None:
    strata = fit_doc["strata"]
    if not ("bonus" in strata and "no_bonus" in strata):
        return None
    out = {}
    vb = np.asarray(strata["bonus"]["predicted_effects"]["values"])
    vn = np.asarray(strata["no_bonus"]["predicted_effects"]["values"])
    labels = strata["bonus"]["predicted_effects"]["labels"]
    for k, label in enumerate(labels):
        den = float(np.var(vn[:, k]))
        out[label] = {"var_bonus": float(np.var(vb[:, k])), "var_no_bonus": den,
                      "ratio": float(np.var(vb[:, k]) / den) if den > 0 else None}
    return out


def cmd_report(args) -> int:
    fit_path = Path(args.data)
    fit_doc = read_json(fit_path)
    if fit_doc.get("format") != "mvglmm-fit/1":
        raise ValidationError(f"{fit_path}: not a fit file")
    graph_doc_ = None
    fit_sha = sha256_file(fit_path)
    if args.graph:
        graph_doc_ = read_json(Path(args.graph))
        if graph_doc_.get("fit_sha256") != fit_sha:
            raise ValidationError("checksum mismatch: graph file was not produced from this fit file")
    strata = {}
    for name, s in fit_doc["strata"].items():
        entry = {
            "n": s["n"],
            "models": s["models"],
            "diagnostics": s["diagnostics"],
        }
        if graph_doc_ is not None:
            entry["graph"] = graph_doc_["graphs"].get(name)
        strata[name] = entry
    report = {
        "format": "mvglmm-report/1",
        "config": fit_doc["config"],
        "seed": fit_doc["config"].get("seed"),
        "versions": versions(),
        "checksums": {"data_sha256": fit_doc["data_sha256"], "fit_sha256": fit_sha,
                      "graph_sha256": sha256_file(Path(args.graph)) if args.graph else None},
        "graph_method": graph_doc_.get("method") if graph_doc_ else None,
        "strata": strata,
        "variance_ratios": _variance_ratios(fit_doc),
    }
    out = Path(args.out or fit_path.with_name("report.json"))
    atomic_write({out: dumps(report)})
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvglmm", description=__doc__.splitlines()[0])
    parser.add_argument("--print-config-schema", action="store_true", help="print the AnalysisConfig JSON schema")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="simulate a cohort CSV plus a truth JSON")
    p.add_argument("--config", help="scenario JSON")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--n", type=int, help="cohort size for presets")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="truth JSON path (default: <out>.truth.json)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the eight marginal models per stratum")
    p.add_argument("--data")
    p.add_argument("--config")
    p.add_argument("--stratify", choices=["bonus", "none"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--person-period", help="directory for person-period CSV exports")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("graph", help="select the BIC graph per stratum")
    p.add_argument("--data", required=True, help="fit JSON")
    p.add_argument("--method", choices=["stepwise", "exhaustive"])
    p.add_argument("--out")
    p.add_argument("--extended", action="store_true", help="also write the latent/observable DOT graph")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("query", help="separation query on a graph")
    p.add_argument("--data", help="graph JSON")
    p.add_argument("--fixture", choices=sorted(FIXTURES))
    p.add_argument("--stratum")
    p.add_argument("--a", required=True, help="comma-separated labels")
    p.add_argument("--b", required=True, help="comma-separated labels, or 'rest'")
    p.add_argument("--given", default="", help="comma-separated conditioning labels")
    p.add_argument("--extended", action="store_true")
    p.set_defaults(func=cmd_query)

    for name in ("report", "diagnose"):
        p = sub.add_parser(name, help="assemble the analysis report")
        p.add_argument("--data", required=True, help="fit JSON")
        p.add_argument("--graph", help="graph JSON from the same fit")
        p.add_argument("--out")
        p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config_schema:
        print(dumps(CONFIG_SCHEMA), end="")
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except (ValidationError, CohortError, ScenarioError, GraphError, GgmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceFailure, IpsConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
