"""Evaluation harness: retrieval, alignment baseline, probes, metrics."""

from .metrics import regression_metrics, roc_auc
from .procrustes import ProcrustesResult, jacobi_svd, procrustes_align
from .retrieval import RetrievalReport, bootstrap_retrieval, match_ranks, retrieval
from .ridge import RidgeModel, ridge_fit
from .probing import (
    DEFAULT_ALPHA_GRID,
    ProbeReport,
    aggregate_by_participant,
    cv_select_alpha,
    embed_records,
    grouped_kfold,
    probe,
    stratified_label_subsample,
)
from .supervised import SupervisedConfig, supervised_baseline

__all__ = [
    "DEFAULT_ALPHA_GRID",
    "ProbeReport",
    "ProcrustesResult",
    "RetrievalReport",
    "RidgeModel",
    "SupervisedConfig",
    "aggregate_by_participant",
    "bootstrap_retrieval",
    "cv_select_alpha",
    "embed_records",
    "grouped_kfold",
    "jacobi_svd",
    "match_ranks",
    "probe",
    "procrustes_align",
    "regression_metrics",
    "retrieval",
    "ridge_fit",
    "roc_auc",
    "stratified_label_subsample",
    "supervised_baseline",
]
