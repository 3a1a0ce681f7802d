"""Command-line interface: learn, certify, repair, report, toy.

Exit codes: 0 certified (or success), 2 discrimination found, 1 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .audit import AuditConfig, AuditReport, alpha_certify, certify
from .tabular_data import Dataset, load_csv, load_schema, save_schema, write_csv
from .errors import FairlensError
from .causal_graph import Dag, load_graph, save_graph
from .structure_learning import TierSpec, load_tiers, pc_learn
from .repair import RepairResult, repair
from .synthetic import toy_dataset, toy_graph, toy_schema

log = logging.getLogger("fairlens")

EXIT_OK, EXIT_ERROR, EXIT_DISCRIMINATION = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # usage errors must not collide with the "discrimination found" code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunConfig:
    data: Path | None
    schema: Path | None
    graph: Path | None
    tiers: Path | None
    tau: float
    alpha: float | None
    ci_alpha: float
    method: str
    seed: int
    out: Path
    min_support: int
    pc_max_depth: int | None
    strict_arc: bool
    ci_test: str
    sampler: str
    roles: dict

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> RunConfig:
        return cls(
            data=Path(ns.data) if getattr(ns, "data", None) else None,
            schema=Path(ns.schema) if getattr(ns, "schema", None) else None,
            graph=Path(ns.graph) if getattr(ns, "graph", None) else None,
            tiers=Path(ns.tiers) if getattr(ns, "tiers", None) else None,
            tau=getattr(ns, "tau", 0.05),
            alpha=getattr(ns, "alpha", None),
            ci_alpha=getattr(ns, "ci_alpha", 0.01),
            method=getattr(ns, "method", "mdata"),
            seed=getattr(ns, "seed", 0),
            out=Path(ns.out),
            min_support=getattr(ns, "min_support", 1),
            pc_max_depth=getattr(ns, "pc_max_depth", None),
            strict_arc=getattr(ns, "strict_arc", False),
            ci_test=getattr(ns, "ci_test", "g2"),
            sampler=getattr(ns, "sampler", "stratified"),
            roles={k: getattr(ns, k, None) for k in ("protected", "decision", "positive_label", "protected_label")},
        )

    def audit_config(self) -> AuditConfig:
        if not 0 < self.tau < 1:
            raise FairlensError(f"--tau must lie in (0, 1), got {self.tau}")
        return AuditConfig(self.tau, self.alpha, self.min_support, self.strict_arc)


def dump_json(obj, path: Path) -> None:
    """Sorted keys and shortest round-trip floats, so equal inputs give equal bytes."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _load_data(cfg: RunConfig) -> Dataset:
    if cfg.data is None:
        raise FairlensError("--data is required")
    if cfg.schema is not None:
        if not cfg.schema.exists():
            raise FairlensError(f"schema file not found: {cfg.schema}")
        return load_csv(cfg.data, load_schema(cfg.schema))
    missing = [k for k, v in cfg.roles.items() if v is None]
    if missing:
        flags = ", ".join("--" + m.replace("_", "-") for m in missing)
        raise FairlensError(f"without --schema these flags are required: {flags}")
    return load_csv(cfg.data, **cfg.roles)


def _tiers(cfg: RunConfig) -> TierSpec | None:
    if cfg.tiers is None:
        return None
    if not cfg.tiers.exists():
        raise FairlensError(f"tier file not found: {cfg.tiers}")
    return load_tiers(cfg.tiers)


def _learn(cfg: RunConfig, data: Dataset):
    if not 0 < cfg.ci_alpha < 1:
        raise FairlensError("--ci-alpha must lie in (0, 1)")
    return pc_learn(data, _tiers(cfg), cfg.ci_alpha, cfg.pc_max_depth, cfg.ci_test, return_log=True)


def _resolve_graph(cfg: RunConfig, data: Dataset) -> Dag:
    if cfg.graph is not None:
        return load_graph(cfg.graph)
    log.info("no --graph given; learning one with PC")
    g, learn_log = _learn(cfg, data)
    save_graph(g, cfg.out / "graph.json")
    dump_json(learn_log.to_json(), cfg.out / "learn_log.json")
    return g


def _summarize(report: AuditReport) -> str:
    lines = [f"Q = {{{', '.join(report.q_set)}}}, tau = {report.tau}"]
    for f in report.findings:
        mark = "VIOLATION" if f.violating else "ok"
        q = ", ".join(f"{k}={v}" for k, v in f.q.items()) or "(all)"
        lines.append(f"  {q:40s} dP = {f.delta_p:+.4f}  {mark}")
    if report.skipped:
        lines.append(f"  {report.skipped} subpopulation(s) skipped for lack of support")
    if report.relaxed is not None:
        r = report.relaxed
        lines.append(f"  mean {r.mean:+.4f}, variance {r.variance:.4f}, bound Pr(|dP|<tau) >= {r.chebyshev_bound:.4f}")
    for w in report.warnings:
        lines.append(f"  warning: {w}")
    verdict = "CERTIFIED: no direct discrimination" if report.certified else \
        f"NOT CERTIFIED: {len(report.violations)} violating subpopulation(s)"
    return "\n".join(lines + [verdict])


def cmd_learn(cfg: RunConfig) -> int:
    data = _load_data(cfg)
    g, learn_log = _learn(cfg, data)
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_graph(g, cfg.out / "graph.json")
    dump_json(learn_log.to_json(), cfg.out / "learn_log.json")
    print(f"learned {len(g.arcs)} arcs with {learn_log.ci_tests} CI tests -> {cfg.out / 'graph.json'}")
    return EXIT_OK


def cmd_certify(cfg: RunConfig) -> int:
    config = cfg.audit_config()
    data = _load_data(cfg)
    g = _resolve_graph(cfg, data)
    report = certify(data, g, config)
    out = report.to_json()
    if cfg.alpha is not None:
        out["alpha_verdict"] = alpha_certify(report, cfg.alpha)
    dump_json(out, cfg.out / "report.json")
    print(_summarize(report))
    if cfg.alpha is not None:
        print(f"alpha = {cfg.alpha}: {out['alpha_verdict']}")
    return EXIT_OK if report.certified else EXIT_DISCRIMINATION


def _repair_outputs(result: RepairResult, original: Dataset, out: Path, stem: str = "repaired") -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_csv(result.dataset if result.changed else original, out / f"{stem}.csv")
    dump_json(result.to_manifest(), out / f"{stem}_manifest.json")


def cmd_repair(cfg: RunConfig) -> int:
    if cfg.method not in ("mgraph", "mdata", "naive"):
        raise FairlensError(f"--method must be mgraph, mdata or naive, got {cfg.method!r}")
    config = cfg.audit_config()
    data = _load_data(cfg)
    g = _resolve_graph(cfg, data)
    kwargs = {"sampler": cfg.sampler} if cfg.method == "mgraph" else {}
    result = repair(cfg.method, data, g, config, cfg.seed, **kwargs)
    _repair_outputs(result, data, cfg.out)
    u = result.utility
    print(f"{cfg.method}: d = {u.euclidean_d:.6g}, n_T = {u.n_modified}, chi2 = {u.chi_squared:.6g}")
    print("recertification:", "passed" if result.certified else "FAILED")
    return EXIT_OK if result.certified else EXIT_DISCRIMINATION


def cmd_report(cfg: RunConfig) -> int:
    """Audit plus all three repairs side by side."""
    config = cfg.audit_config()
    data = _load_data(cfg)
    g = _resolve_graph(cfg, data)
    report = certify(data, g, config)
    rows = {}
    for method in ("mgraph", "mdata", "naive"):
        kwargs = {"sampler": cfg.sampler} if method == "mgraph" else {}
        res = repair(method, data, g, config, cfg.seed, **kwargs)
        rows[method] = {"utility": res.utility.to_json(), "recertified": res.certified}
    dump_json({"audit": report.to_json(), "repairs": rows, "graph": g.to_json()}, cfg.out / "summary.json")
    print(_summarize(report))
    print(f"{'method':8s} {'d':>12s} {'n_T':>8s} {'chi2':>12s}  recertified")
    for m, r in rows.items():
        u = r["utility"]
        print(f"{m:8s} {u['euclidean_d']:12.6g} {u['n_modified']:8d} {u['chi_squared']:12.6g}  {r['recertified']}")
    return EXIT_OK if report.certified else EXIT_DISCRIMINATION


def cmd_toy(cfg: RunConfig) -> int:
    """Write both toy admission examples with their schema and graph."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    for k in (1, 2):
        write_csv(toy_dataset(k), cfg.out / f"toy{k}.csv")
    save_schema(toy_schema(), cfg.out / "toy_schema.json")
    save_graph(toy_graph(), cfg.out / "toy_graph.json")
    dump_json({"tiers": [["gender"], ["major"], ["test_score"], ["admission"]]}, cfg.out / "toy_tiers.json")
    print(f"wrote toy examples to {cfg.out}")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fairlens", description="Audit and repair direct discrimination with a causal graph.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp, graph=True):
        sp.add_argument("--data", required=True, help="CSV file with a header row")
        sp.add_argument("--schema", help="schema JSON (domains and roles)")
        sp.add_argument("--protected", help="protected attribute (when no schema)")
        sp.add_argument("--decision", help="decision attribute (when no schema)")
        sp.add_argument("--positive-label", dest="positive_label", help="favourable decision value")
        sp.add_argument("--protected-label", dest="protected_label", help="protected group value")
        sp.add_argument("--tiers", help="tier JSON for structure learning")
        sp.add_argument("--ci-alpha", dest="ci_alpha", type=float, default=0.01)
        sp.add_argument("--ci-test", dest="ci_test", choices=("g2", "pearson"), default="g2")
        sp.add_argument("--pc-max-depth", dest="pc_max_depth", type=int, default=None)
        sp.add_argument("--out", default=".", help="output directory")
        if graph:
            sp.add_argument("--graph", help="graph file (.json or .dot); learned with PC when omitted")
            sp.add_argument("--tau", type=float, default=0.05)
            sp.add_argument("--alpha", type=float, default=None)
            sp.add_argument("--min-support", dest="min_support", type=int, default=1)
            sp.add_argument("--strict-arc", dest="strict_arc", action="store_true",
                            help="refuse to audit when the protected->decision arc is absent")

    data_args(sub.add_parser("learn", help="learn a causal graph with PC"), graph=False)
    data_args(sub.add_parser("certify", help="audit a dataset"))
    for name in ("repair", "report"):
        sp = sub.add_parser(name, help="repair a dataset" if name == "repair" else "audit and compare repairs")
        data_args(sp)
        if name == "repair":
            sp.add_argument("--method", choices=("mgraph", "mdata", "naive"), default="mdata")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--sampler", choices=("stratified", "ancestral"), default="stratified")
    sp = sub.add_parser("toy", help="write the toy admission examples")
    sp.add_argument("--out", default=".")
    return p


_COMMANDS = {"learn": cmd_learn, "certify": cmd_certify, "repair": cmd_repair,
             "report": cmd_report, "toy": cmd_toy}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        ns = _parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[ns.command](RunConfig.from_args(ns))
    except (FairlensError, OSError, ValueError, KeyError) as exc:
        print(f"fairlens: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
