"""Synthetic regression benchmark, model fitting, and score ingestion.

Client covariates are truncated normals on [0, 5] with per-client location
and spread; responses mix a Poisson term driven by sin^2(x), covariate-scaled
noise, rare large outliers, and client-indexed Gaussian noise. A centralized
linear model is fit on a separate training draw and scored by absolute
residual. Classification scores computed elsewhere enter through a CSV
ingestion path.

All randomness flows through named substreams of a single master seed so
per-client and per-trial generation is reproducible regardless of ordering.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DOMAIN = (0.0, 5.0)

# substream purpose codes (part of the seeding contract, do not renumber)
_PURPOSE = {"train": 1, "covariates": 2, "response": 3, "test": 4, "mixture": 5}


class IngestError(ValueError):
    """Malformed score-ingestion file."""


def default_mu(k: int, n_clients: int) -> float:
    return 0.5 + 4.0 * (k - 1) / (n_clients - 1)


def default_sigma(k: int) -> float:
    return 0.5 + 0.1 * (k - 1)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_clients: int = 4
    n_per_client: tuple[int, ...] = (1000, 333, 333, 333)
    mu: tuple[float, ...] = ()
    sigma: tuple[float, ...] = ()
    pi: tuple[float, ...] = ()
    train_size: int = 2000

    def __post_init__(self):
        k = self.n_clients
        if len(self.n_per_client) != k:
            raise ValueError("n_per_client length must match n_clients")
        if not self.mu:
            object.__setattr__(self, "mu", tuple(default_mu(i + 1, k) for i in range(k)))
        if not self.sigma:
            object.__setattr__(self, "sigma", tuple(default_sigma(i + 1) for i in range(k)))
        if not self.pi:
            object.__setattr__(self, "pi", tuple(1.0 / k for _ in range(k)))
        if any(s <= 0 for s in self.sigma):
            raise ValueError("sigma must be positive")


def substream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, purpose, keys); stable across runs."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), _PURPOSE[purpose], *map(int, keys)])
    )


def _truncated_normal(
    rng: np.random.Generator, mu: float, sigma: float, count: int
) -> np.ndarray:
    """Rejection sampling of N(mu, sigma^2) conditioned on the domain."""
    out = np.empty(0)
    while out.size < count:
        draw = rng.normal(mu, sigma, size=max(count, 64))
        out = np.concatenate([out, draw[(draw >= DOMAIN[0]) & (draw <= DOMAIN[1])]])
    return out[:count]


def sample_covariates(
    config: SynthConfig, client: int, count: int, trial: int = 0
) -> np.ndarray:
    """i.i.d. truncated-normal draws for a 1-based client index."""
    if not 1 <= client <= config.n_clients:
        raise ValueError(f"client index {client} out of range")
    rng = substream(config.seed, "covariates", trial, client)
    return _truncated_normal(rng, config.mu[client - 1], config.sigma[client - 1], count)


def generate_response(x, client: int, rng: np.random.Generator):
    """Poisson signal plus covariate-scaled, outlier, and client noise terms."""
    x = np.asarray(x, dtype=float)
    rate = np.sin(x) ** 2 + 0.1
    y = np.asarray(rng.poisson(rate), dtype=float)
    y += 0.03 * x * rng.normal(size=x.shape)
    y += 25.0 * (rng.uniform(size=x.shape) < 0.01) * rng.normal(size=x.shape)
    y += rng.normal(0.0, 0.1 * client, size=x.shape)
    return y if y.shape else float(y)


@dataclass(frozen=True)
class LinearModel:
    slope: float
    intercept: float

    def predict(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept


def fit_linear(train: Sequence[tuple[float, float]]) -> LinearModel:
    """Ordinary least squares on (x, y) pairs."""
    arr = np.asarray(train, dtype=float)
    x, y = arr[:, 0], arr[:, 1]
    if np.ptp(x) == 0.0:
        raise ValueError("all covariates identical: singular design")
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    return LinearModel(slope=float(slope), intercept=float(intercept))


def score_absolute(model: LinearModel, x, y):
    return np.abs(np.asarray(y, dtype=float) - model.predict(x))


def sample_mixture_clients(
    config: SynthConfig, count: int, trial: int, purpose: str = "mixture"
) -> np.ndarray:
    """1-based client index per point, drawn from the mixture weights."""
    rng = substream(config.seed, purpose, trial)
    return rng.choice(config.n_clients, size=count, p=np.asarray(config.pi)) + 1


def make_training_set(config: SynthConfig, trial: int = 0) -> np.ndarray:
    """(x, y) pairs from the uniform client mixture; a disjoint substream."""
    rng = substream(config.seed, "train", trial)
    clients = rng.integers(1, config.n_clients + 1, size=config.train_size)
    xs = np.empty(config.train_size)
    ys = np.empty(config.train_size)
    for k in range(1, config.n_clients + 1):
        mask = clients == k
        xs[mask] = _truncated_normal(
            rng, config.mu[k - 1], config.sigma[k - 1], int(mask.sum())
        )
        ys[mask] = generate_response(xs[mask], k, rng)
    return np.column_stack([xs, ys])


@dataclass(frozen=True)
class ScoreRecord:
    client_id: int
    predicted_label: int
    true_label: int
    label_scores: tuple[float, ...]

    @property
    def true_score(self) -> float:
        return self.label_scores[self.true_label]


def ingest_scores(path) -> list[ScoreRecord]:
    """Read precomputed per-label conformity scores from CSV.

    Header: client_id,predicted_label,true_label,score_0,...,score_{C-1};
    each score must lie in [0, 1] up to 1e-6 slack.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty file") from None
        fixed = ["client_id", "predicted_label", "true_label"]
        if header[: len(fixed)] != fixed:
            raise IngestError(f"bad header {header!r}")
        score_cols = header[len(fixed) :]
        if score_cols != [f"score_{i}" for i in range(len(score_cols))] or not score_cols:
            raise IngestError(f"bad score columns {score_cols!r}")
        n_labels = len(score_cols)
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise IngestError(f"row {lineno}: expected {len(header)} fields")
            try:
                client_id = int(row[0])
                predicted = int(row[1])
                true_label = int(row[2])
                scores = tuple(float(v) for v in row[3:])
            except ValueError as exc:
                raise IngestError(f"row {lineno}: {exc}") from exc
            if not 0 <= true_label < n_labels or not 0 <= predicted < n_labels:
                raise IngestError(f"row {lineno}: label out of range")
            for s in scores:
                if not -1e-6 <= s <= 1.0 + 1e-6:
                    raise IngestError(f"row {lineno}: score {s} outside [0, 1]")
            records.append(ScoreRecord(client_id, predicted, true_label, scores))
    return records


def export_scores(records: Sequence[ScoreRecord], path) -> None:
    n_labels = len(records[0].label_scores)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["client_id", "predicted_label", "true_label"]
            + [f"score_{i}" for i in range(n_labels)]
        )
        for r in records:
            writer.writerow(
                [
                    r.client_id,
                    r.predicted_label,
                    r.true_label,
                    *(repr(float(s)) for s in r.label_scores),
                ]
            )
