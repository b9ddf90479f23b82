"""Adoption thresholds and attribute importances derived from estimated
utility parameters.

The threshold for agent n and product i is (u0_n - Ua_ni) / gamma_n, the
minimum neighbor fraction at which adopting beats the status quo, clamped to
[0, 1]; agents the social signal cannot flip get the NEVER sentinel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coding import CodingSpec, IndividualParams
from .studies import ProductProfile

NEVER = float("inf")


class ThresholdError(ValueError):
    """Raised for non-finite parameters or degenerate importance inputs."""


@dataclass
class ThresholdMatrix:
    """Per-(agent, product) adoption thresholds for one agent pool.

    tau entries are in [0, 1] or np.inf (the NEVER sentinel, serialized as
    the string "NEVER").
    """

    pool: str
    agent_ids: list[str]
    product_ids: list[str]
    tau: np.ndarray  # (agents, products)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        if self.tau.shape != (len(self.agent_ids), len(self.product_ids)):
            raise ThresholdError("tau shape does not match agent/product ids")
        finite = self.tau[np.isfinite(self.tau)]
        if finite.size and (finite.min() < 0.0 or finite.max() > 1.0):
            raise ThresholdError("finite thresholds must lie in [0, 1]")

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    def column(self, product_id: str) -> np.ndarray:
        return self.tau[:, self.product_ids.index(product_id)]

    def save_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["agent_id", "pool", "product_id", "tau"])
            for i, aid in enumerate(self.agent_ids):
                for j, pid in enumerate(self.product_ids):
                    v = self.tau[i, j]
                    w.writerow([aid, self.pool, pid,
                                "NEVER" if np.isinf(v) else repr(float(v))])

    @classmethod
    def load_csv(cls, path: str) -> "ThresholdMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            need = {"agent_id", "pool", "product_id", "tau"}
            if reader.fieldnames is None or not need.issubset(reader.fieldnames):
                raise ThresholdError(f"{path}: not a threshold CSV")
            cells: dict[tuple[str, str], float] = {}
            agents: dict[str, None] = {}
            products: dict[str, None] = {}
            pool = None
            for row in reader:
                pool = row["pool"]
                aid, pid = row["agent_id"], row["product_id"]
                agents.setdefault(aid, None)
                products.setdefault(pid, None)
                raw = row["tau"].strip()
                cells[(aid, pid)] = NEVER if raw.upper() == "NEVER" else float(raw)
        if pool is None:
            raise ThresholdError(f"{path}: empty threshold CSV")
        agent_ids, product_ids = list(agents), list(products)
        tau = np.empty((len(agent_ids), len(product_ids)))
        for i, aid in enumerate(agent_ids):
            for j, pid in enumerate(product_ids):
                try:
                    tau[i, j] = cells[(aid, pid)]
                except KeyError as exc:
                    raise ThresholdError(
                        f"{path}: missing cell ({aid}, {pid})") from exc
        return cls(pool=pool, agent_ids=agent_ids, product_ids=product_ids, tau=tau)


def attribute_utility(params: IndividualParams, product: ProductProfile,
                      coding: CodingSpec) -> float:
    """Utility of the product's attributes alone: the dot product of the
    partworths with the product's effects-coded row (social and none columns
    excluded)."""
    return float(coding.effects_row(product) @ params.beta)


def _clamp_threshold(u0: float, ua: float, gamma: float) -> float:
    if gamma > 0.0:
        raw = (u0 - ua) / gamma
        if raw < 0.0:
            return 0.0
        if raw > 1.0:
            return NEVER
        return raw
    # non-positive gamma: the signal cannot close a utility gap
    return 0.0 if u0 - ua <= 0.0 else NEVER


def adoption_threshold(params: IndividualParams, product: ProductProfile,
                       coding: CodingSpec) -> float:
    """(u0 - Ua) / gamma with the clamping table applied; NEVER (= inf) marks
    agents that adopt at no neighbor fraction."""
    ua = attribute_utility(params, product, coding)
    return _clamp_threshold(params.u0, ua, params.gamma)


def compute_threshold_matrix(
    params: Sequence[IndividualParams],
    products: Sequence[ProductProfile],
    coding: CodingSpec,
    pool: str,
) -> ThresholdMatrix:
    """Vectorized threshold matrix over an agent pool and a product list."""
    effects = coding.effects_matrix(products)          # (P, E)
    betas = np.vstack([p.beta for p in params])        # (N, E)
    gammas = np.array([p.gamma for p in params])
    u0s = np.array([p.u0 for p in params])
    ua = betas @ effects.T                             # (N, P)
    gap = u0s[:, None] - ua

    tau = np.empty_like(gap)
    pos = gammas > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = gap / gammas[:, None]
    tau[pos] = np.where(raw[pos] > 1.0, NEVER, np.clip(raw[pos], 0.0, 1.0))
    tau[~pos] = np.where(gap[~pos] <= 0.0, 0.0, NEVER)
    return ThresholdMatrix(
        pool=pool,
        agent_ids=[p.respondent_id for p in params],
        product_ids=[p.product_id for p in products],
        tau=tau,
    )


def attribute_importance(params: IndividualParams,
                         coding: CodingSpec) -> np.ndarray:
    """Per-attribute importance: the max-minus-min marginal utility range of
    each attribute's levels (the omitted effects level reconstructed as minus
    the sum of the others; the social range is |gamma| times the span of the
    levels shown), normalized to sum to one."""
    study = coding.study
    ranges = []
    for attr, sl in zip(study.non_social_attributes, coding.attr_slices):
        part = params.beta[sl]
        worths = np.concatenate([part, [-part.sum()]])
        ranges.append(float(worths.max() - worths.min()))
    social = study.social_attribute
    span = float(max(social.levels)) - float(min(social.levels))
    ranges.append(abs(params.gamma) * span)
    ranges = np.asarray(ranges)
    total = ranges.sum()
    if total <= 0.0:
        raise ThresholdError(
            f"all attribute ranges are zero for {params.respondent_id}; "
            "importance undefined")
    return ranges / total


def importance_table(params: Sequence[IndividualParams],
                     coding: CodingSpec) -> tuple[list[str], np.ndarray]:
    """Importance vectors for a pool: (attribute names, (agents, attrs) array)."""
    names = [a.name for a in coding.study.non_social_attributes]
    names.append(coding.study.social_attribute.name)
    table = np.vstack([attribute_importance(p, coding) for p in params])
    return names, table


def save_importance_csv(params: Sequence[IndividualParams], coding: CodingSpec,
                        path: str) -> None:
    names, table = importance_table(params, coding)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["respondent_id", *names])
        for p, row in zip(params, table):
            w.writerow([p.respondent_id, *(repr(float(v)) for v in row)])
