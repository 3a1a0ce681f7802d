"""Causal-graph audit and repair of direct discrimination in categorical decision data."""

from __future__ import annotations

from .audit import (AuditConfig, AuditReport, SubpopulationFinding, alpha_certify, certify,
                    certify_all_blocksets, certify_model, chebyshev_bound, risk_difference,
                    weighted_moments)
from .bayes_net import BayesNet, Cpt, JointDistribution, fit_cpts, joint, marginal, query, sample, stratified_sample
from .tabular_data import (Attribute, ContingencyTable, Dataset, Schema, binarize, contingency, empirical_prob,
                   load_csv, load_schema, write_csv)
from .errors import (CapacityError, FairlensError, GraphError, OracleTooLargeError, SchemaError,
                     UndefinedProbabilityError, UnknownCategoryError)
from .causal_graph import Dag, d_separated, enumerate_block_sets, is_block_set, load_graph, topo_split
from .structure_learning import TierSpec, find_q, g2_test, pc_learn
from .repair import (RepairResult, RepairWeights, UtilityReport, compute_beta, euclidean_distance,
                     mdata_repair, mgraph_repair, mgraph_solve, naive_repair, solve_pair, utility_report)

__version__ = "0.1.0"
