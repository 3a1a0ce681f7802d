"""Discrimination removal (CPT projection, label flips, protected reshuffle) and utility metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Literal

import numpy as np

from .audit import AuditConfig, AuditReport, certify, certify_model, exact_tau
from .bayes_net import (DEFAULT_JOINT_CAP, BayesNet, Cpt, JointDistribution, _einsum, fit_cpts, joint,
                       replace_cpt, sample, stratified_sample)
from .tabular_data import Dataset
from .errors import FairlensError, SchemaError
from .causal_graph import Dag, TopoSplit
from .structure_learning import find_q

log = logging.getLogger(__name__)

EPS_SLACK = 1e-9
EPS_INTERIOR = 1e-9

Method = Literal["mgraph", "mdata", "naive"]


@dataclass(frozen=True)
class UtilityReport:
    euclidean_d: float
    n_modified: int
    chi_squared: float

    def to_json(self) -> dict:
        return {"euclidean_d": self.euclidean_d, "n_modified": self.n_modified,
                "chi_squared": self.chi_squared}


ZERO_UTILITY = UtilityReport(0.0, 0, 0.0)


@dataclass(frozen=True)
class RepairWeights:
    """beta[c, *q, e] = sum of squared non-decision factor products over cells with (c, q, e)."""

    q_names: tuple[str, ...]
    beta: np.ndarray

    def weight(self, c: int, q: tuple[int, ...]) -> float:
        """w_q^c = beta_q^{c,e+} + beta_q^{c,e-}."""
        return float(self.beta[(c, *q)].sum())


@dataclass(frozen=True)
class RepairResult:
    method: Method
    dataset: Dataset
    seed: int
    tau: float | None
    utility: UtilityReport
    recertified: AuditReport | None
    modified_cpt: Cpt | None = None
    original_cpt: Cpt | None = None
    changed: bool = True
    subpopulations: tuple[dict, ...] = ()
    empirical_recertified: AuditReport | None = None
    sampler: str | None = None

    @property
    def certified(self) -> bool:
        return bool(self.recertified is not None and self.recertified.certified)

    def to_manifest(self) -> dict:
        out = {
            "method": self.method,
            "tau": self.tau,
            "seed": self.seed,
            "changed": self.changed,
            "n_rows": self.dataset.total,
            "utility": self.utility.to_json(),
            "recertified": self.recertified.to_json() if self.recertified else None,
            "subpopulations": list(self.subpopulations),
        }
        if self.method == "mgraph":
            out["sampler"] = self.sampler
            out["empirical_recertified"] = (self.empirical_recertified.to_json()
                                            if self.empirical_recertified else None)
        return out


# ----------------------------------------------------------------------------- weights

def compute_beta(bn: BayesNet, split: TopoSplit | None = None) -> RepairWeights:
    """beta_q^{c,e} by variable elimination over squared CPT factors.

    For every cell v, Pr(v) = R(v) * Pr(e | c, q) where R multiplies the other
    CPTs, so d(P*, P)^2 = sum over (c, q, e) of beta * (Pr*(e|c,q) - Pr(e|c,q))^2.
    ``split`` is only checked for agreement; no ordering of the nodes is needed.
    """
    s = bn.schema
    c, e = s.protected, s.decision
    q_names = find_q(bn.dag, s)
    if split is not None and (split.c, split.e, set(split.q)) != (c, e, set(q_names)):
        raise FairlensError("topological split does not match the network roles")
    out = [c, *q_names, e]
    factors = list(bn.factors(squared=True, exclude=(e,)))
    factors += [(np.ones(s.attribute(n).cardinality), (n,)) for n in out]
    beta = np.asarray(_einsum(factors, out), dtype=float)
    return RepairWeights(tuple(q_names), beta)


# ----------------------------------------------------------------------------- QP

def solve_pair(x0: float, y0: float, wp: float, wm: float, tau_prime: float,
               lo: float = EPS_INTERIOR, hi: float = 1.0 - EPS_INTERIOR) -> tuple[float, float, float]:
    """min wp(x-x0)^2 + wm(y-y0)^2  s.t.  |x-y| <= tau_prime, lo <= x, y <= hi.

    Exact active-set enumeration: the minimizer lies on a face cut out by at
    most two active constraints, and every such face has a closed-form
    minimizer.  A start that already meets the band is returned unchanged.
    Returns (x, y, objective).
    """
    if wp < 0 or wm < 0:
        raise FairlensError("weights must be non-negative")
    if abs(x0 - y0) <= tau_prime:
        return x0, y0, 0.0
    if wp + wm == 0:
        raise FairlensError("both weights are zero; the subpopulation has no mass")
    cands = [(x0, y0)]
    for s in (tau_prime, -tau_prime):
        y = (wp * (x0 - s) + wm * y0) / (wp + wm)
        cands.append((y + s, y))
        for a in (lo, hi):
            cands += [(a, a - s), (a + s, a)]
    for a in (lo, hi):
        cands += [(a, y0), (x0, a)]
        for b in (lo, hi):
            cands.append((a, b))
    tol = 1e-12
    best = None
    for x, y in cands:
        if not (lo - tol <= x <= hi + tol and lo - tol <= y <= hi + tol and abs(x - y) <= tau_prime + tol):
            continue
        obj = wp * (x - x0) ** 2 + wm * (y - y0) ** 2
        if best is None or obj < best[2]:
            best = (x, y, obj)
    if best is None:
        raise FairlensError("QP infeasible: tau is too small for the interior margin")
    x, y = _snap(best[0], best[1], tau_prime, lo, hi)
    return x, y, wp * (x - x0) ** 2 + wm * (y - y0) ** 2


def _snap(x: float, y: float, tau_prime: float, lo: float, hi: float) -> tuple[float, float]:
    # remove the last ulps of rounding so the constraints hold exactly in floating point
    x, y = min(max(x, lo), hi), min(max(y, lo), hi)
    while x - y > tau_prime:
        if x > lo:
            x = np.nextafter(x, -np.inf)
        else:
            y = np.nextafter(y, np.inf)
    while y - x > tau_prime:
        if y > lo:
            y = np.nextafter(y, -np.inf)
        else:
            x = np.nextafter(x, np.inf)
    return float(x), float(y)


def mgraph_solve(bn: BayesNet, weights: RepairWeights, tau: float) -> tuple[Cpt, list[dict]]:
    """Project the decision CPT onto |Pr(e+|c+,q) - Pr(e+|c-,q)| <= tau - EPS_SLACK.

    The QP separates over q; the e- entries are the complements.  Returns the
    new CPT and one record per q that was changed or skipped.
    """
    if not 0 < tau < 1:
        raise FairlensError("tau must lie in (0, 1)")
    s = bn.schema
    c, e = s.protected, s.decision
    if s.attribute(e).cardinality != 2:
        raise SchemaError("the decision attribute must be binary")
    cpt = bn.cpts[e].transposed((c, *weights.q_names))
    table = np.array(cpt.table)
    tau_p = tau - EPS_SLACK
    cp, cm, ep, em = s.c_plus, s.c_minus, s.e_plus, s.e_minus
    records = []
    for q in np.ndindex(*table.shape[1:-1]):
        wp, wm = weights.weight(cp, q), weights.weight(cm, q)
        x0, y0 = float(table[(cp, *q, ep)]), float(table[(cm, *q, ep)])
        label = s.labels(dict(zip(weights.q_names, q)))
        if wp == 0 and wm == 0:
            records.append({"q": label, "skipped": True})
            continue
        x, y, obj = solve_pair(x0, y0, wp, wm, tau_p)
        if (x, y) == (x0, y0):
            continue
        table[(cp, *q, ep)], table[(cp, *q, em)] = x, 1.0 - x
        table[(cm, *q, ep)], table[(cm, *q, em)] = y, 1.0 - y
        records.append({"q": label, "before": {"cplus": x0, "cminus": y0},
                        "after": {"cplus": x, "cminus": y}, "objective": obj})
    new = Cpt(e, (c, *weights.q_names), table).transposed(bn.cpts[e].parent_order)
    return new, records


# ----------------------------------------------------------------------------- metrics

def euclidean_distance(p: JointDistribution, p_prime: JointDistribution) -> float:
    if p.names != p_prime.names or p.table.shape != p_prime.table.shape:
        raise SchemaError("joint distributions have different shapes")
    return float(np.sqrt(np.sum((p.table - p_prime.table) ** 2)))


def bn_distance(bn: BayesNet, other: BayesNet, cap: int = DEFAULT_JOINT_CAP) -> float:
    """d(P', P) between two networks on the same graph.

    Dense when the joint fits under ``cap``; otherwise from three sum-product
    contractions, sum P^2 - 2 sum P P' + sum P'^2.
    """
    if bn.dag != other.dag or bn.schema != other.schema:
        raise SchemaError("networks differ in graph or schema")
    if bn.n_cells() <= cap:
        return euclidean_distance(joint(bn, cap), joint(other, cap))

    def inner(a, b):
        fs = [(a.cpts[n].table * b.cpts[n].transposed(a.cpts[n].parent_order).table,
               a.cpts[n].parent_order + (n,)) for n in a.names]
        return float(_einsum(fs, []))

    d2 = inner(bn, bn) - 2 * inner(bn, other) + inner(other, other)
    return math.sqrt(max(d2, 0.0))


def _cell_index(dataset: Dataset) -> np.ndarray:
    cards = dataset.schema.cardinalities
    if math.prod(cards) < 2 ** 62:
        return np.ravel_multi_index(dataset.codes.T, cards)
    _, inv = np.unique(dataset.codes, axis=0, return_inverse=True)
    return inv.reshape(-1)


def chi_squared(original: Dataset, repaired: Dataset) -> float:
    """Pearson sum over joint cells with original count >= 1 of (repaired - original)^2 / original."""
    if original.schema != repaired.schema:
        raise SchemaError("datasets have different schemas")
    both = Dataset(original.schema, np.concatenate([original.codes, repaired.codes]))
    idx = _cell_index(both)
    n0 = original.n_rows
    keys, inv = np.unique(idx, return_inverse=True)
    orig = np.bincount(inv[:n0], weights=original.row_weights(), minlength=len(keys))
    rep = np.bincount(inv[n0:], weights=repaired.row_weights(), minlength=len(keys))
    m = orig >= 1
    return float(np.sum((rep[m] - orig[m]) ** 2 / orig[m]))


def rows_modified(original: Dataset, repaired: Dataset) -> int:
    if original.codes.shape != repaired.codes.shape:
        raise SchemaError("datasets have different sizes")
    return int(np.any(original.codes != repaired.codes, axis=1).sum())


def utility_report(original: Dataset, repaired: Dataset, bn_original: BayesNet, bn_repaired: BayesNet,
                   n_modified: int | None = None) -> UtilityReport:
    """d over the two networks' joints, n_T (row diff count unless given) and chi^2 over the data."""
    d = bn_distance(bn_original, bn_repaired)
    n_t = rows_modified(original, repaired) if n_modified is None else n_modified
    return UtilityReport(d, int(n_t), chi_squared(original, repaired))


# ----------------------------------------------------------------------------- repairs

def _unchanged(method, dataset, seed, config, report) -> RepairResult:
    return RepairResult(method=method, dataset=dataset, seed=seed, tau=config.tau,
                        utility=ZERO_UTILITY, recertified=report, changed=False)


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0:
        raise FairlensError("seed must be a non-negative integer")
    return seed


def mgraph_repair(dataset: Dataset, g: Dag, config: AuditConfig, seed: int,
                  sampler: Literal["stratified", "ancestral"] = "stratified") -> RepairResult:
    """Fit, project the decision CPT, regenerate a dataset of the same size.

    ``sampler="stratified"`` (default) rounds every conditional frequency to
    the nearest achievable count; ``"ancestral"`` draws rows independently.
    ``recertified`` audits the modified network exactly; the audit of the
    regenerated rows is kept in ``empirical_recertified``.
    """
    seed = _check_seed(seed)
    report = certify(dataset, g, config)
    if report.certified:
        return _unchanged("mgraph", dataset, seed, config, report)
    bn = fit_cpts(dataset, g)
    weights = compute_beta(bn)
    cpt, records = mgraph_solve(bn, weights, config.tau)
    bn_star = replace_cpt(bn, dataset.schema.decision, cpt)
    n = dataset.total
    if sampler == "stratified":
        regen = stratified_sample(bn_star, n, seed)
    elif sampler == "ancestral":
        regen = sample(bn_star, n, seed)
    else:
        raise FairlensError(f"unknown sampler {sampler!r}")
    n_t = expected_flips(dataset, bn, bn_star, weights.q_names)
    utility = UtilityReport(bn_distance(bn, bn_star), n_t, chi_squared(dataset, regen))
    return RepairResult(method="mgraph", dataset=regen, seed=seed, tau=config.tau, utility=utility,
                        recertified=certify_model(bn_star, config), modified_cpt=cpt,
                        original_cpt=bn.cpts[dataset.schema.decision], subpopulations=tuple(records),
                        empirical_recertified=certify(regen, g, config), sampler=sampler)


def expected_flips(dataset: Dataset, bn: BayesNet, bn_star: BayesNet, q_names) -> int:
    """ceil(sum over q, c of n_q^c * |Pr*(e+|c,q) - Pr(e+|c,q)|)."""
    s = dataset.schema
    c, e = s.protected, s.decision
    old = bn.cpts[e].transposed((c, *q_names)).table
    new = bn_star.cpts[e].transposed((c, *q_names)).table
    cols = [dataset.column(c)] + [dataset.column(n) for n in q_names]
    counts = np.bincount(np.ravel_multi_index(cols, old.shape[:-1]), weights=dataset.row_weights(),
                         minlength=math.prod(old.shape[:-1])).reshape(old.shape[:-1])
    total = math.fsum((counts * np.abs(new[..., s.e_plus] - old[..., s.e_plus])).ravel())
    return math.ceil(round(total, 9))


def _q_groups(dataset: Dataset, q_names) -> tuple[np.ndarray, dict[tuple[int, ...], int]]:
    if not q_names:
        return np.zeros(dataset.n_rows, dtype=np.int64), {(): 0}
    cols = np.stack([dataset.column(n) for n in q_names], axis=1)
    keys, inv = np.unique(cols, axis=0, return_inverse=True)
    return inv.reshape(-1), {tuple(k): i for i, k in enumerate(keys.tolist())}


def mdata_repair(dataset: Dataset, g: Dag, config: AuditConfig, seed: int) -> RepairResult:
    """Flip decision labels of protected-group rows inside each violating q.

    ``ceil(n_q^{c-} (|dP_q| - tau))`` rows are flipped (e- to e+ when dP >= tau,
    e+ to e- when dP <= -tau), then one more while |dP_q| still reaches tau.
    Rows are chosen by a permutation drawn from a per-q generator seeded with
    (seed, q codes), so the flip set for a larger tau is a subset of the one
    for a smaller tau.  Weighted datasets are expanded to unit rows first.
    """
    seed = _check_seed(seed)
    data = dataset.expand()
    report = certify(data, g, config)
    if report.certified:
        return _unchanged("mdata", dataset, seed, config, report)
    s = data.schema
    tau = exact_tau(config.tau)
    ci, ei = s.index(s.protected), s.index(s.decision)
    codes = np.array(data.codes)
    group, index = _q_groups(data, report.q_set)
    cm, ep, em = s.c_minus, s.e_plus, s.e_minus
    records, flipped_total = [], 0
    for f in report.violations:
        t, d = f.support, f.exact_delta
        n_minus, n_plus = t.n_cminus, t.n_cplus
        k = math.ceil(n_minus * (abs(d) - tau))
        src, dst = (em, ep) if d >= tau else (ep, em)
        in_q = group == index[f.codes]
        cand = np.flatnonzero(in_q & (codes[:, ci] == cm) & (codes[:, ei] == src))
        rng = np.random.default_rng(np.random.SeedSequence([seed, *f.codes]))
        cand = cand[rng.permutation(len(cand))]
        pos_minus = t.n_cminus_eplus
        step = 1 if dst == ep else -1
        rate_plus = Fraction(t.n_cplus_eplus, n_plus)

        def gap(n_flipped):
            return rate_plus - Fraction(pos_minus + step * n_flipped, n_minus)

        def violating(n_flipped):
            return abs(gap(n_flipped)) >= tau

        n_flip = min(k, len(cand))
        extra = 0
        # extra flips only while still on the original side; a coarse grid may jump the band
        while n_flip < len(cand) and gap(n_flip) * (1 if d > 0 else -1) >= tau:
            n_flip += 1
            extra += 1
        residual = violating(n_flip)
        codes[cand[:n_flip], ei] = dst
        flipped_total += n_flip
        records.append({"q": dict(f.q), "delta_p": f.delta_p, "n_cminus": n_minus,
                        "formula_flips": k, "boundary_flips": extra, "flipped": n_flip,
                        "residual": bool(residual)})
        if residual:
            why = "too few candidate rows" if n_flip == len(cand) else f"one flip moves the rate by 1/{n_minus}"
            log.warning("subpopulation %s: cannot bring |dP| below tau (%s)", f.q, why)
    repaired = Dataset(s, codes)
    bn, bn_rep = fit_cpts(data, g), fit_cpts(repaired, g)
    utility = UtilityReport(bn_distance(bn, bn_rep), flipped_total, chi_squared(data, repaired))
    return RepairResult(method="mdata", dataset=repaired, seed=seed, tau=config.tau, utility=utility,
                        recertified=certify(repaired, g, config), subpopulations=tuple(records))


def naive_repair(dataset: Dataset, seed: int, g: Dag | None = None,
                 config: AuditConfig | None = None) -> RepairResult:
    """Reshuffle the protected column across all rows; no guarantee of any kind.

    With a graph, d is measured between networks fitted on it and the result
    is re-audited; without one, d compares the empirical joints.
    """
    seed = _check_seed(seed)
    data = dataset.expand()
    s = data.schema
    codes = np.array(data.codes)
    ci = s.index(s.protected)
    codes[:, ci] = codes[np.random.default_rng(seed).permutation(data.n_rows), ci]
    repaired = Dataset(s, codes)
    if g is not None:
        d = bn_distance(fit_cpts(data, g), fit_cpts(repaired, g))
    else:
        d = empirical_distance(data, repaired)
    utility = UtilityReport(d, rows_modified(data, repaired), chi_squared(data, repaired))
    recert = certify(repaired, g, config) if g is not None and config is not None else None
    return RepairResult(method="naive", dataset=repaired, seed=seed,
                        tau=config.tau if config else None, utility=utility,
                        recertified=recert, changed=rows_modified(data, repaired) > 0)


def empirical_distance(a: Dataset, b: Dataset) -> float:
    """Euclidean distance between the empirical joints, over observed cells only."""
    both = Dataset(a.schema, np.concatenate([a.codes, b.codes]))
    _, inv = np.unique(_cell_index(both), return_inverse=True)
    k = int(inv.max()) + 1
    pa = np.bincount(inv[:a.n_rows], weights=a.row_weights(), minlength=k) / a.total
    pb = np.bincount(inv[a.n_rows:], weights=b.row_weights(), minlength=k) / b.total
    return float(np.sqrt(np.sum((pa - pb) ** 2)))


def repair(method: Method, dataset: Dataset, g: Dag, config: AuditConfig, seed: int,
           **kwargs) -> RepairResult:
    if method == "mgraph":
        return mgraph_repair(dataset, g, config, seed, **kwargs)
    if method == "mdata":
        return mdata_repair(dataset, g, config, seed)
    if method == "naive":
        return naive_repair(dataset, seed, g, config)
    raise FairlensError(f"unknown repair method {method!r}")
