"""Shared fixtures: small studies, fixture networks, and the one expensive
synthetic-recovery MCMC run reused across test modules."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import pytest

import choicespread as cs
from choicespread.coding import coding_for_study
from choicespread.networks import Network, network_from_edges


def make_random_graph(n: int, p: float, rng: np.random.Generator) -> Network:
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return network_from_edges(edges, extra_nodes=range(n))


def path_graph(n: int) -> Network:
    return network_from_edges([(i, i + 1) for i in range(n - 1)])


def cycle_graph(n: int) -> Network:
    return network_from_edges([(i, (i + 1) % n) for i in range(n)])


def star_graph(n_leaves: int) -> Network:
    return network_from_edges([(0, i) for i in range(1, n_leaves + 1)])


def complete_graph(n: int) -> Network:
    return network_from_edges([(i, j) for i in range(n) for j in range(i + 1, n)])


@pytest.fixture(scope="session")
def ps_small_design():
    study = cs.ps_study()
    return cs.build_design(study.attributes, 8, study.tasks_per_respondent,
                           study.alts_per_task, seed=5, study_id="PS")


@dataclass
class RecoveryRun:
    """Everything produced by the synthetic-recovery pipeline."""

    design: object
    coding: object
    truth: dict
    train: object
    test: object
    draws: object
    estimates: dict
    fit_seconds: float


@pytest.fixture(scope="session")
def recovery_run() -> RecoveryRun:
    """100 PS-shaped synthetic respondents with known parameters, fitted at
    5000 iterations / 2000 burn-in. Slow (seconds), hence session-scoped."""
    study = cs.ps_study()
    design = cs.build_design(study.attributes, 100, 15, 3, seed=11, study_id="PS")
    coding = coding_for_study(study)
    truth = cs.random_ground_truth(design, seed=12)
    full = cs.simulate_choices(design, truth, seed=13)
    train, test = cs.split_holdout(full, 3, seed=14)
    cfg = cs.McmcConfig(total_iterations=5000, burn_in=2000, thinning=10, seed=15)
    t0 = time.perf_counter()
    draws = cs.fit_hb(train, coding, cfg)
    fit_seconds = time.perf_counter() - t0
    estimates = {p.respondent_id: p for p in cs.point_estimates(draws)}
    return RecoveryRun(design=design, coding=coding, truth=truth, train=train,
                       test=test, draws=draws, estimates=estimates,
                       fit_seconds=fit_seconds)
