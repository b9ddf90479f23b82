"""Hierarchical Bayes multinomial-logit estimation of per-respondent
partworths, social-signal coefficient, and status-quo utility.

Gibbs scheme per sweep: (a) each respondent's coefficient vector moves by
random-walk Metropolis against its MNL likelihood times the population prior
N(mu, Sigma); (b) mu from its conjugate normal conditional; (c) Sigma from its
conjugate inverse-Wishart conditional. Proposal steps adapt multiplicatively
during burn-in toward a 0.23-0.44 acceptance band and freeze afterwards.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import invwishart

from .choices import NONE_CHOICE, ChoiceDataset
from .coding import CodingSpec, IndividualParams

logger = logging.getLogger(__name__)

MU_PRIOR_VAR = 100.0          # mu ~ N(0, 100 I)
IW_EXTRA_DF = 3               # Sigma ~ inverse-Wishart(df = columns + 3, scale = I)
ACCEPT_LOW, ACCEPT_HIGH = 0.23, 0.44
ADAPT_WINDOW = 50
ADAPT_SHRINK, ADAPT_GROW = 0.80, 1.25


class EstimationError(ValueError):
    """Raised for invalid MCMC configurations or malformed inputs."""


@dataclass(frozen=True)
class McmcConfig:
    total_iterations: int = 30_000
    burn_in: int = 10_000
    thinning: int = 10
    proposal_step_init: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.burn_in >= self.total_iterations:
            raise EstimationError("burn_in must be < total_iterations")
        if self.thinning < 1:
            raise EstimationError("thinning must be >= 1")
        if self.proposal_step_init <= 0:
            raise EstimationError("proposal_step_init must be > 0")

    @property
    def n_retained(self) -> int:
        return (self.total_iterations - self.burn_in) // self.thinning


@dataclass
class PosteriorDraws:
    """Retained MCMC draws plus traces for diagnostics."""

    respondent_ids: list[str]
    column_names: tuple[str, ...]
    beta: np.ndarray          # (draws, respondents, columns)
    mu: np.ndarray            # (draws, columns)
    sigma: np.ndarray         # (draws, columns, columns)
    acceptance: np.ndarray    # per-iteration mean acceptance
    loglik: np.ndarray        # per-iteration total log-likelihood
    config: McmcConfig = field(default=None)  # type: ignore[assignment]

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]


@dataclass
class _StackedData:
    """Dense per-respondent task stacks with a mask for ragged task counts."""

    respondent_ids: list[str]
    x: np.ndarray        # (N, Tmax, K+1, C)
    chosen: np.ndarray   # (N, Tmax) row index of the chosen alternative
    mask: np.ndarray     # (N, Tmax) True where a task has an observed choice


def _stack_dataset(dataset: ChoiceDataset, coding: CodingSpec) -> _StackedData:
    design = dataset.design
    k = design.study.alts_per_task
    by_resp = dataset.choices_by_respondent()
    rids = list(by_resp.keys())
    t_max = max(len(v) for v in by_resp.values())
    n, c = len(rids), coding.n_columns

    x = np.zeros((n, t_max, k + 1, c))
    chosen = np.zeros((n, t_max), dtype=int)
    mask = np.zeros((n, t_max), dtype=bool)
    for i, rid in enumerate(rids):
        tasks = {t.task_id: t for t in design.tasks[rid]}
        for j, ch in enumerate(sorted(by_resp[rid], key=lambda c_: c_.task_id)):
            rows = coding.encode_task(tasks[ch.task_id])
            if not np.all(np.isfinite(rows)):
                raise EstimationError(
                    f"non-finite coded row for respondent {rid}, task {ch.task_id}")
            x[i, j] = rows
            chosen[i, j] = k if ch.chosen == NONE_CHOICE else ch.chosen - 1
            mask[i, j] = True
    return _StackedData(rids, x, chosen, mask)


def _loglik_per_respondent(data: _StackedData, beta: np.ndarray) -> np.ndarray:
    """MNL log-likelihood per respondent for one coefficient matrix (N, C).

    Invariant to adding a constant to all alternatives' utilities within a
    task (logsumexp shift cancellation).
    """
    u = np.einsum("ntkc,nc->ntk", data.x, beta)
    lse = logsumexp(u, axis=2)
    picked = np.take_along_axis(u, data.chosen[:, :, None], axis=2)[:, :, 0]
    ll = np.where(data.mask, picked - lse, 0.0)
    return ll.sum(axis=1)


def fit_hb(dataset: ChoiceDataset, coding: CodingSpec,
           mcmc_config: McmcConfig) -> PosteriorDraws:
    """Run the HB-MNL Gibbs sampler. Deterministic given mcmc_config.seed."""
    data = _stack_dataset(dataset, coding)
    n, c = len(data.respondent_ids), coding.n_columns
    if n < 2:
        raise EstimationError("need at least 2 respondents")

    cfg = mcmc_config
    rng = np.random.default_rng(cfg.seed)

    beta = np.zeros((n, c))
    mu = np.zeros(c)
    sigma = np.eye(c)
    steps = np.full(n, cfg.proposal_step_init)
    window_accepts = np.zeros(n)

    iw_df0 = c + IW_EXTRA_DF
    iw_scale0 = np.eye(c)

    cur_ll = _loglik_per_respondent(data, beta)
    if not np.all(np.isfinite(cur_ll)):
        raise EstimationError("non-finite likelihood at initialization")

    n_ret = cfg.n_retained
    ret_beta = np.empty((n_ret, n, c))
    ret_mu = np.empty((n_ret, c))
    ret_sigma = np.empty((n_ret, c, c))
    acc_trace = np.empty(cfg.total_iterations)
    ll_trace = np.empty(cfg.total_iterations)

    ret = 0
    for it in range(1, cfg.total_iterations + 1):
        # (a) per-respondent random-walk Metropolis
        chol = np.linalg.cholesky(sigma)
        prec = np.linalg.inv(sigma)
        prop = beta + steps[:, None] * (rng.standard_normal((n, c)) @ chol.T)
        prop_ll = _loglik_per_respondent(data, prop)
        dev_cur = beta - mu
        dev_prop = prop - mu
        lp_cur = -0.5 * np.einsum("nc,cd,nd->n", dev_cur, prec, dev_cur)
        lp_prop = -0.5 * np.einsum("nc,cd,nd->n", dev_prop, prec, dev_prop)
        log_alpha = (prop_ll + lp_prop) - (cur_ll + lp_cur)
        accept = np.log(rng.random(n)) < log_alpha
        beta[accept] = prop[accept]
        cur_ll[accept] = prop_ll[accept]

        acc_trace[it - 1] = accept.mean()
        ll_trace[it - 1] = cur_ll.sum()

        window_accepts += accept
        if it <= cfg.burn_in and it % ADAPT_WINDOW == 0:
            rates = window_accepts / ADAPT_WINDOW
            steps[rates < ACCEPT_LOW] *= ADAPT_SHRINK
            steps[rates > ACCEPT_HIGH] *= ADAPT_GROW
            window_accepts[:] = 0.0

        # (b) conjugate normal update of the population mean
        prec_mu = n * prec + np.eye(c) / MU_PRIOR_VAR
        cov_mu = np.linalg.inv(prec_mu)
        mean_mu = cov_mu @ (prec @ beta.sum(axis=0))
        mu = mean_mu + np.linalg.cholesky(cov_mu) @ rng.standard_normal(c)

        # (c) conjugate inverse-Wishart update of the population covariance
        dev = beta - mu
        sigma = invwishart.rvs(df=iw_df0 + n, scale=iw_scale0 + dev.T @ dev,
                               random_state=rng)
        sigma = np.atleast_2d(sigma)

        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thinning == 0:
            ret_beta[ret] = beta
            ret_mu[ret] = mu
            ret_sigma[ret] = sigma
            ret += 1

    assert ret == n_ret
    return PosteriorDraws(
        respondent_ids=data.respondent_ids,
        column_names=coding.column_names,
        beta=ret_beta, mu=ret_mu, sigma=ret_sigma,
        acceptance=acc_trace, loglik=ll_trace, config=cfg,
    )


def point_estimates(draws: PosteriorDraws) -> list[IndividualParams]:
    """Posterior mean per respondent, split into partworths, gamma (social
    column, already per unit fraction), and u0 (none column)."""
    if draws.n_draws < 1:
        raise EstimationError("no retained draws")
    means = draws.beta.mean(axis=0)  # (N, C)
    c = means.shape[1]
    social_col, none_col = c - 2, c - 1
    out = []
    for rid, vec in zip(draws.respondent_ids, means):
        out.append(IndividualParams(
            respondent_id=rid,
            beta=vec[:social_col].copy(),
            gamma=float(vec[social_col]),
            u0=float(vec[none_col]),
        ))
    return out


def hit_rate(params: list[IndividualParams] | dict[str, IndividualParams],
             holdout_dataset: ChoiceDataset, coding: CodingSpec) -> float:
    """Fraction of holdout tasks where the argmax-utility prediction matches
    the observed choice. Candidates are ordered alternatives 1..K then none;
    ties resolve to the lowest index."""
    if not isinstance(params, dict):
        params = {p.respondent_id: p for p in params}
    design = holdout_dataset.design
    k = design.study.alts_per_task
    hits = total = 0
    for ch in holdout_dataset.choices:
        if ch.respondent_id not in params:
            raise EstimationError(
                f"holdout respondent {ch.respondent_id!r} has no parameters")
        full = params[ch.respondent_id].full_vector(coding)
        rows = coding.encode_task(design.task(ch.respondent_id, ch.task_id))
        pred = int(np.argmax(rows @ full))  # first max wins on ties
        observed = k if ch.chosen == NONE_CHOICE else ch.chosen - 1
        hits += pred == observed
        total += 1
    if total == 0:
        raise EstimationError("holdout dataset is empty")
    return hits / total


def sigma_draws_spd(draws: PosteriorDraws, tol: float = 1e-10) -> bool:
    """Check every retained covariance draw is symmetric positive definite."""
    for s in draws.sigma:
        if not np.allclose(s, s.T, atol=1e-8):
            return False
        if np.linalg.eigvalsh(s).min() <= tol:
            return False
    return True


def save_draws(draws: PosteriorDraws, prefix: str) -> None:
    """Persist retained draws as .npz with a JSON sidecar describing layout."""
    np.savez_compressed(
        prefix + ".npz", beta=draws.beta, mu=draws.mu, sigma=draws.sigma,
        acceptance=draws.acceptance, loglik=draws.loglik)
    sidecar = {
        "respondent_ids": draws.respondent_ids,
        "column_names": list(draws.column_names),
        "config": {
            "total_iterations": draws.config.total_iterations,
            "burn_in": draws.config.burn_in,
            "thinning": draws.config.thinning,
            "proposal_step_init": draws.config.proposal_step_init,
            "seed": draws.config.seed,
        },
    }
    with open(prefix + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_draws(prefix: str) -> PosteriorDraws:
    arrays = np.load(prefix + ".npz")
    with open(prefix + ".json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    return PosteriorDraws(
        respondent_ids=list(sidecar["respondent_ids"]),
        column_names=tuple(sidecar["column_names"]),
        beta=arrays["beta"], mu=arrays["mu"], sigma=arrays["sigma"],
        acceptance=arrays["acceptance"], loglik=arrays["loglik"],
        config=McmcConfig(**sidecar["config"]),
    )
