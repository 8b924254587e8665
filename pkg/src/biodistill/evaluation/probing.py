"""Linear probing of frozen encoders with ridge regression.

The probe embeds every segment with a frozen encoder, optionally
mean-aggregates embeddings per participant, subsamples training labels in
a participant-stratified way, picks the ridge strength by grouped
cross-validation on training participants only, and reports metrics on
the full held-out test participants.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..encoder import Encoder
from ..errors import ConfigError
from ..synth import DatasetStore
from ..synth.dataset import ACCEL_CHANNELS, PPG_CHANNELS
from .metrics import regression_metrics, roc_auc
from .ridge import ridge_fit

DEFAULT_ALPHA_GRID = tuple(10.0 ** k for k in range(-3, 4))

REGRESSION_TARGETS = ("hr", "sdnn", "rmssd")

_MODALITY_CHANNELS = {"ppg": PPG_CHANNELS, "accel": ACCEL_CHANNELS}


@dataclass(frozen=True)
class ProbeReport:
    target: str
    granularity: str
    label_fraction: float
    modality: str
    space: str
    n_train_rows: int
    alpha: Optional[float]
    metrics: Dict[str, float]


def embed_records(
    encoder: Encoder,
    store: DatasetStore,
    indices,
    modality: str,
    batch_size: int = 64,
) -> np.ndarray:
    """Frozen-encoder embeddings for the given records, one row each."""
    if modality not in _MODALITY_CHANNELS:
        raise ConfigError(f"modality must be 'ppg' or 'accel', got {modality!r}")
    if encoder.config.input_channels != _MODALITY_CHANNELS[modality]:
        raise ConfigError(
            f"encoder reads {encoder.config.input_channels} channels but the "
            f"{modality} stream has {_MODALITY_CHANNELS[modality]}"
        )
    idx = np.asarray(indices, dtype=np.int64)
    fetch = store.ppg if modality == "ppg" else store.accel
    window = encoder.config.segment_samples
    chunks = []
    for lo in range(0, idx.size, batch_size):
        raw = fetch(idx[lo : lo + batch_size])[:, :, :window]
        chunks.append(encoder.encode(raw).data.astype(np.float64))
    return np.concatenate(chunks, axis=0)


def aggregate_by_participant(
    embeddings: np.ndarray, participant_ids
) -> Tuple[np.ndarray, np.ndarray]:
    """Mean embedding per participant; returns (P, D) plus sorted pids."""
    emb = np.asarray(embeddings, dtype=np.float64)
    pids = np.asarray(participant_ids).reshape(-1)
    if emb.shape[0] != pids.size:
        raise ConfigError(f"{emb.shape[0]} embeddings for {pids.size} ids")
    unique = np.unique(pids)
    agg = np.stack([emb[pids == pid].mean(axis=0) for pid in unique])
    return agg, unique


def stratified_label_subsample(
    participant_ids, fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """Row positions of a label subsample spread evenly across participants.

    Rows are dealt round-robin over shuffled participants so every
    participant contributes before any contributes twice.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"label fraction must be in (0, 1], got {fraction}")
    pids = np.asarray(participant_ids).reshape(-1)
    n = pids.size
    target = int(round(fraction * n))
    if target < 10:
        raise ConfigError(
            f"label fraction {fraction} leaves {target} of {n} training rows; "
            "need at least 10"
        )
    if target >= n:
        return np.arange(n)
    order = {}
    for pid in rng.permutation(np.unique(pids)):
        rows = np.flatnonzero(pids == pid)
        order[int(pid)] = list(rng.permutation(rows))
    chosen = []
    while len(chosen) < target:
        progressed = False
        for pid in order:
            if order[pid]:
                chosen.append(order[pid].pop())
                progressed = True
                if len(chosen) == target:
                    break
        if not progressed:
            break
    return np.sort(np.asarray(chosen, dtype=np.int64))


def grouped_kfold(groups, k: int, rng: np.random.Generator):
    """(train_rows, val_rows) splits with whole groups held out per fold."""
    g = np.asarray(groups).reshape(-1)
    unique = np.unique(g)
    if unique.size < k:
        raise ConfigError(
            f"{k}-fold selection needs at least {k} participants, "
            f"got {unique.size}"
        )
    shuffled = rng.permutation(unique)
    folds = []
    for chunk in np.array_split(shuffled, k):
        val = np.flatnonzero(np.isin(g, chunk))
        train = np.flatnonzero(~np.isin(g, chunk))
        folds.append((train, val))
    return folds


def cv_select_alpha(
    x: np.ndarray,
    y: np.ndarray,
    groups,
    grid=DEFAULT_ALPHA_GRID,
    k: int = 5,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, Dict[float, float]]:
    """Grid point with the lowest mean validation MSE over grouped folds."""
    if len(grid) == 0:
        raise ConfigError("alpha grid is empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    folds = grouped_kfold(groups, k, rng)
    scores: Dict[float, float] = {}
    for alpha in grid:
        fold_mse = []
        for train, val in folds:
            model = ridge_fit(x[train], y[train], alpha)
            err = model.predict(x[val]) - y[val]
            fold_mse.append(float(np.mean(err * err)))
        scores[float(alpha)] = float(np.mean(fold_mse))
    best = min(scores, key=lambda a: (scores[a], a))
    return best, scores


def _target_values(store: DatasetStore, indices, target: str) -> np.ndarray:
    if target in REGRESSION_TARGETS:
        return store.labels(indices)[target]
    if target == "trait":
        return store.traits(indices).astype(np.float64)
    raise ConfigError(
        f"unknown probe target {target!r}; "
        f"choose from {REGRESSION_TARGETS + ('trait',)}"
    )


def probe(
    encoder: Encoder,
    store: DatasetStore,
    target: str,
    granularity: str = "segment",
    label_fraction: float = 1.0,
    modality: str = "accel",
    alpha_grid=DEFAULT_ALPHA_GRID,
    seed: int = 0,
    batch_size: int = 64,
) -> ProbeReport:
    """Ridge linear probe of a frozen encoder against a ground-truth target."""
    if granularity not in ("segment", "participant"):
        raise ConfigError(
            f"granularity must be 'segment' or 'participant', got {granularity!r}"
        )
    if target == "trait" and granularity != "participant":
        raise ConfigError("the binary trait is a participant-level target")

    train_idx = store.train_record_indices()
    test_idx = store.test_record_indices()
    x_train = embed_records(encoder, store, train_idx, modality, batch_size)
    x_test = embed_records(encoder, store, test_idx, modality, batch_size)
    y_train = _target_values(store, train_idx, target)
    y_test = _target_values(store, test_idx, target)
    g_train = store.record_index[train_idx, 0]
    g_test = store.record_index[test_idx, 0]

    if granularity == "participant":
        x_train, pid_train = aggregate_by_participant(x_train, g_train)
        x_test, pid_test = aggregate_by_participant(x_test, g_test)
        y_train = np.array(
            [y_train[g_train == pid].mean() for pid in pid_train]
        )
        y_test = np.array([y_test[g_test == pid].mean() for pid in pid_test])
        g_train, g_test = pid_train, pid_test

    sub_rng = np.random.default_rng(np.random.SeedSequence([seed]))
    rows = stratified_label_subsample(g_train, label_fraction, sub_rng)
    x_sub, y_sub, g_sub = x_train[rows], y_train[rows], g_train[rows]

    # standardize embedding dimensions on the labeled training rows
    mu = x_sub.mean(axis=0)
    sd = np.maximum(x_sub.std(axis=0), 1e-8)
    x_sub = (x_sub - mu) / sd
    x_test = (x_test - mu) / sd

    cv_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    alpha, _ = cv_select_alpha(x_sub, y_sub, g_sub, alpha_grid, rng=cv_rng)
    model = ridge_fit(x_sub, y_sub, alpha)
    pred = model.predict(x_test)

    if target == "trait":
        metric_values = {"roc_auc": roc_auc(y_test.astype(int), pred)}
    else:
        metric_values = regression_metrics(y_test, pred)
    return ProbeReport(
        target=target,
        granularity=granularity,
        label_fraction=label_fraction,
        modality=modality,
        space="encoder",
        n_train_rows=int(rows.size),
        alpha=alpha,
        metrics=metric_values,
    )
