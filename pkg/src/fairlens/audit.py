"""Risk differences, the Q-set certification and the relaxed alpha criterion."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Literal, Mapping, Sequence

import numpy as np

from .bayes_net import BayesNet, marginal
from .tabular_data import Assignment, ContingencyTable, Dataset, contingency, group_contingency
from .errors import FairlensError, GraphError, SchemaError, UndefinedProbabilityError
from .causal_graph import Dag, enumerate_block_sets
from .structure_learning import find_q


def exact_tau(tau: float) -> Fraction:
    """The decimal value the user typed: 0.05 becomes exactly 1/20."""
    return Fraction(repr(float(tau)))


@dataclass(frozen=True)
class AuditConfig:
    tau: float
    alpha: float | None = None
    min_support: int = 1
    strict_arc: bool = False

    def __post_init__(self):
        if not (self.tau > 0 and self.tau <= 1):
            raise FairlensError(f"tau must lie in (0, 1], got {self.tau}")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise FairlensError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.min_support < 1:
            raise FairlensError("min_support must be at least 1")


@dataclass(frozen=True)
class SubpopulationFinding:
    q: dict
    codes: tuple[int, ...]
    delta_p: float
    weight: float
    violating: bool
    support: ContingencyTable | None = None
    exact_delta: Fraction | None = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        out = {"q": dict(self.q), "delta_p": self.delta_p, "weight": self.weight,
               "violating": self.violating}
        if self.support is not None:
            out["n"] = self.support.to_json()
        return out


@dataclass(frozen=True)
class RelaxedResult:
    mean: float
    variance: float
    chebyshev_bound: float
    alpha: float | None = None
    claimed: bool | None = None

    def to_json(self) -> dict:
        return {"mean": self.mean, "variance": self.variance, "bound": self.chebyshev_bound,
                "alpha": self.alpha, "claimed": self.claimed}


@dataclass(frozen=True)
class AuditReport:
    q_set: tuple[str, ...]
    tau: float
    findings: tuple[SubpopulationFinding, ...]
    certified: bool
    skipped: int
    mode: Literal["empirical", "model"] = "empirical"
    relaxed: RelaxedResult | None = None
    n_subpopulations: int = 0
    warnings: tuple[str, ...] = ()

    @property
    def violations(self) -> tuple[SubpopulationFinding, ...]:
        return tuple(f for f in self.findings if f.violating)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "q_set": list(self.q_set),
            "tau": self.tau,
            "certified": self.certified,
            "findings": [f.to_json() for f in self.findings],
            "relaxed": self.relaxed.to_json() if self.relaxed else None,
            "skipped": self.skipped,
            "n_subpopulations": self.n_subpopulations,
            "n_violations": len(self.violations),
            "warnings": list(self.warnings),
        }


def _exact_delta(table: ContingencyTable) -> Fraction:
    return table.rate("cplus") - table.rate("cminus")


def risk_difference(dataset: Dataset, conditioning: Assignment | None = None) -> float:
    """Pr(e+ | c+, s) - Pr(e+ | c-, s) from exact counts."""
    table = contingency(dataset, conditioning)
    for group, n in (("c+", table.n_cplus), ("c-", table.n_cminus)):
        if n == 0:
            raise UndefinedProbabilityError(f"undefined delta P: cell {group} is empty in {table.conditioning}")
    return float(_exact_delta(table))


def weighted_moments(findings: Sequence[SubpopulationFinding]) -> tuple[float, float]:
    """Weighted mean and variance of the risk differences, weights renormalized."""
    if not findings:
        raise FairlensError("no findings to summarize")
    total = math.fsum(f.weight for f in findings)
    if total <= 0:
        raise FairlensError("findings carry no weight")
    w = [f.weight / total for f in findings]
    mean = math.fsum(wi * f.delta_p for wi, f in zip(w, findings))
    var = math.fsum(wi * (f.delta_p - mean) ** 2 for wi, f in zip(w, findings))
    return mean, var


def chebyshev_bound(mean: float, variance: float, tau: float) -> float:
    """Lower bound on Pr(|dP| < tau): max(0, 1 - (variance + mean^2) / tau^2)."""
    if tau <= 0:
        raise FairlensError("tau must be positive")
    return max(0.0, 1.0 - (variance + mean * mean) / (tau * tau))


def alpha_certify(report: AuditReport, alpha: float) -> Literal["claimed", "inconclusive"]:
    """The bound is only sufficient, so failing it never proves discrimination."""
    if report.relaxed is None:
        return "inconclusive"
    return "claimed" if report.relaxed.chebyshev_bound >= alpha else "inconclusive"


def _relaxed(findings, config: AuditConfig) -> RelaxedResult | None:
    if not findings:
        return None
    mean, var = weighted_moments(findings)
    bound = chebyshev_bound(mean, var, config.tau)
    claimed = None if config.alpha is None else bound >= config.alpha
    return RelaxedResult(mean, var, bound, config.alpha, claimed)


def _q_and_warnings(g: Dag, schema, config: AuditConfig) -> tuple[tuple[str, ...], tuple[str, ...]]:
    if set(g.nodes) != set(schema.names):
        raise SchemaError("graph nodes and dataset attributes differ")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        q = find_q(g, schema, strict=config.strict_arc)
    return q, tuple(str(w.message) for w in caught)


def certify(dataset: Dataset, g: Dag, config: AuditConfig) -> AuditReport:
    """Check |dP_q| < tau for every supported subpopulation q of Q = Par(E) minus C.

    All findings are returned, not just the first violation.  Subpopulations
    where either group has fewer than ``min_support`` rows are skipped.
    """
    q_set, warns = _q_and_warnings(g, dataset.schema, config)
    tau = exact_tau(config.tau)
    schema = dataset.schema
    tables = group_contingency(dataset, q_set)
    n_sub = math.prod(schema.attribute(n).cardinality for n in q_set)
    evaluated = []
    for codes, table in tables.items():
        if table.n_cplus < config.min_support or table.n_cminus < config.min_support:
            continue
        delta = _exact_delta(table)
        evaluated.append((codes, table, delta))
    total = sum(t.n for _, t, _ in evaluated)
    findings = tuple(
        SubpopulationFinding(q=dict(t.conditioning), codes=codes, delta_p=float(d),
                             weight=t.n / total, violating=abs(d) >= tau, support=t, exact_delta=d)
        for codes, t, d in evaluated)
    if not findings:
        warns += ("no subpopulation met the support requirement",)
    return AuditReport(q_set=q_set, tau=config.tau, findings=findings,
                       certified=not any(f.violating for f in findings),
                       skipped=n_sub - len(findings), mode="empirical",
                       relaxed=_relaxed(findings, config), n_subpopulations=n_sub,
                       warnings=warns)


def model_risk_differences(bn: BayesNet, subset: Sequence[str]) -> dict[tuple[int, ...], tuple[float, float]]:
    """Exact (dP_b, Pr(b)) for every assignment b of ``subset`` with Pr(c+, b), Pr(c-, b) > 0."""
    s = bn.schema
    subset = list(subset)
    m = marginal(bn, [s.protected, *subset, s.decision])
    cp, cm, ep = s.c_plus, s.c_minus, s.e_plus
    out = {}
    for codes in product(*(range(s.attribute(n).cardinality) for n in subset)):
        plus = m[(cp, *codes)]
        minus = m[(cm, *codes)]
        np_, nm = plus.sum(), minus.sum()
        if np_ <= 0 or nm <= 0:
            continue
        out[codes] = (float(plus[ep] / np_ - minus[ep] / nm), float(np_ + nm))
    return out


def certify_model(bn: BayesNet, config: AuditConfig) -> AuditReport:
    """certify() on the Q set using exact model probabilities instead of counts."""
    q_set, warns = _q_and_warnings(bn.dag, bn.schema, config)
    diffs = model_risk_differences(bn, q_set)
    return _model_report(bn, q_set, diffs, config, warns)


def _model_report(bn, q_set, diffs, config, warns=()) -> AuditReport:
    s = bn.schema
    total = math.fsum(w for _, w in diffs.values())
    findings = tuple(
        SubpopulationFinding(q=s.labels(dict(zip(q_set, codes))), codes=codes, delta_p=d,
                             weight=w / total, violating=abs(d) >= config.tau)
        for codes, (d, w) in sorted(diffs.items()))
    n_sub = math.prod(s.attribute(n).cardinality for n in q_set)
    return AuditReport(q_set=tuple(q_set), tau=config.tau, findings=findings,
                       certified=not any(f.violating for f in findings),
                       skipped=n_sub - len(findings), mode="model",
                       relaxed=_relaxed(findings, config), n_subpopulations=n_sub,
                       warnings=tuple(warns))


@dataclass(frozen=True)
class BlockSetAudit:
    """Exhaustive audit over every block set, the reference for the Q-set shortcut."""

    block_sets: tuple[tuple[str, ...], ...]
    reports: Mapping[tuple[str, ...], AuditReport]
    certified: bool


def certify_all_blocksets(bn: BayesNet, config: AuditConfig, max_nodes: int = 15) -> BlockSetAudit:
    s = bn.schema
    if not bn.dag.has_arc(s.protected, s.decision):
        raise GraphError(f"arc {s.protected}->{s.decision} is not in the graph")
    order = {n: i for i, n in enumerate(bn.dag.nodes)}
    blocks = [tuple(sorted(b, key=order.get))
              for b in enumerate_block_sets(bn.dag, s.protected, s.decision, max_nodes)]
    reports = {b: _model_report(bn, b, model_risk_differences(bn, b), config) for b in blocks}
    return BlockSetAudit(tuple(blocks), reports, all(r.certified for r in reports.values()))


def findings_array(report: AuditReport) -> np.ndarray:
    return np.array([f.delta_p for f in report.findings])
