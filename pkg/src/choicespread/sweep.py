"""Product sampling, the full diffusion sweep (networks x products x q x
seeding policy x repetitions), and result aggregation with confidence
intervals."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .coding import CodingSpec, IndividualParams
from .networks import (assign_population, load_network_dir, run_diffusion,
                       select_seeds)
from .studies import ProductProfile
from .thresholds import ThresholdMatrix, compute_threshold_matrix

logger = logging.getLogger(__name__)

DEFAULT_Q_VALUES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

RESULT_COLUMNS = ("study", "llm_label", "network_id", "product_id", "q",
                  "policy", "repetition", "adoption_rate", "steps", "n_seeds")


class SweepError(ValueError):
    """Raised for unresolvable sweep configurations."""


@dataclass(frozen=True)
class SweepConfig:
    study_id: str
    human_pool_path: str
    artificial_pool_path: str
    network_dir: str
    llm_label: str = ""
    q_values: tuple[float, ...] = DEFAULT_Q_VALUES
    policies: tuple[str, ...] = ("random", "degree")
    seed_rate: float = 0.01
    repetitions: int = 1
    master_seed: int = 0
    product_ids: tuple[str, ...] = ()  # empty: every product shared by both pools

    def __post_init__(self):
        qs = tuple(float(q) for q in self.q_values)
        if len(set(qs)) != len(qs):
            raise SweepError("q values must be distinct")
        if any(not 0.0 <= q <= 1.0 for q in qs):
            raise SweepError("q values must lie in [0, 1]")
        if self.repetitions < 1:
            raise SweepError("repetitions must be >= 1")
        object.__setattr__(self, "q_values", qs)
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "product_ids", tuple(self.product_ids))
        if not self.llm_label:
            stem = os.path.splitext(os.path.basename(self.artificial_pool_path))[0]
            object.__setattr__(self, "llm_label", stem)

    @classmethod
    def from_json(cls, path: str) -> "SweepConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(**raw)


@dataclass(frozen=True)
class ResultRow:
    study: str
    llm_label: str
    network_id: str
    product_id: str
    q: float
    policy: str
    repetition: int
    adoption_rate: float
    steps: int
    n_seeds: int

    @property
    def key(self) -> tuple:
        return (self.study, self.llm_label, self.network_id, self.product_id,
                round(self.q, 10), self.policy, self.repetition)


@dataclass(frozen=True)
class SummaryRow:
    group: tuple
    group_keys: tuple[str, ...]
    mean_adoption_rate: float
    ci95_half_width: float
    n: int
    singleton: bool = False


def sample_products_by_threshold(
    products: Sequence[ProductProfile],
    human_params: Sequence[IndividualParams],
    n_intervals: int,
    per_interval: int,
    seed: int,
    coding: CodingSpec,
) -> list[ProductProfile]:
    """Stratify products by their mean human threshold (equal-width intervals
    over the observed range) and draw per_interval products per interval.

    NEVER thresholds count as 1.0 in the mean; intervals with fewer members
    contribute all of them (logged). If the request covers the whole catalog
    the sampling is bypassed and all products are returned.
    """
    if not products:
        raise SweepError("no products to sample from")
    if n_intervals < 1 or per_interval < 1:
        raise SweepError("n_intervals and per_interval must be >= 1")
    if n_intervals * per_interval >= len(products):
        return list(products)

    matrix = compute_threshold_matrix(human_params, products, coding, pool="human")
    tau = np.where(np.isinf(matrix.tau), 1.0, matrix.tau)
    means = tau.mean(axis=0)

    lo, hi = float(means.min()), float(means.max())
    rng = np.random.default_rng(seed)
    if hi - lo <= 0.0:
        # degenerate range: a single occupied interval
        idx = rng.choice(len(products), size=min(per_interval, len(products)),
                         replace=False)
        return [products[i] for i in sorted(idx)]

    edges = np.linspace(lo, hi, n_intervals + 1)
    bins = np.clip(np.digitize(means, edges[1:-1]), 0, n_intervals - 1)
    chosen: list[int] = []
    for b in range(n_intervals):
        members = np.flatnonzero(bins == b)
        if len(members) == 0:
            logger.info("threshold interval %d of %d is empty", b + 1, n_intervals)
            continue
        if len(members) <= per_interval:
            if len(members) < per_interval:
                logger.info("threshold interval %d has only %d products",
                            b + 1, len(members))
            chosen.extend(members.tolist())
        else:
            chosen.extend(rng.choice(members, size=per_interval,
                                     replace=False).tolist())
    return [products[i] for i in sorted(chosen)]


def _row_base_seed(config: SweepConfig, network_id: str, product_id: str,
                   policy: str, repetition: int) -> int:
    """Deterministic per-row seed. q is deliberately excluded so that rows
    differing only in q share their assignment permutation and seed draws,
    making populations coupled across q."""
    key = "|".join([str(config.master_seed), config.study_id, config.llm_label,
                    network_id, product_id, policy, str(repetition)])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")


def enumerate_row_keys(config: SweepConfig,
                       network_ids: Sequence[str],
                       product_ids: Sequence[str]) -> list[tuple]:
    keys = []
    for network_id in network_ids:
        for product_id in product_ids:
            for policy in config.policies:
                for rep in range(1, config.repetitions + 1):
                    for q in config.q_values:
                        keys.append((config.study_id, config.llm_label,
                                     network_id, product_id, round(q, 10),
                                     policy, rep))
    return keys


def _load_pools(config: SweepConfig) -> tuple[ThresholdMatrix, ThresholdMatrix]:
    try:
        human = ThresholdMatrix.load_csv(config.human_pool_path)
        artificial = ThresholdMatrix.load_csv(config.artificial_pool_path)
    except OSError as exc:
        raise SweepError(f"cannot read threshold pool: {exc}") from exc
    return human, artificial


def _resolve_products(config: SweepConfig, human: ThresholdMatrix,
                      artificial: ThresholdMatrix) -> list[str]:
    shared = [pid for pid in human.product_ids if pid in set(artificial.product_ids)]
    if config.product_ids:
        missing = [p for p in config.product_ids if p not in set(shared)]
        if missing:
            raise SweepError(f"products missing from a pool: {missing[:5]}")
        return list(config.product_ids)
    if not shared:
        raise SweepError("pools share no products")
    return shared


def _existing_keys(out_csv: str) -> tuple[set, list[ResultRow]]:
    done: set = set()
    rows: list[ResultRow] = []
    if not (out_csv and os.path.exists(out_csv)):
        return done, rows
    for row in read_result_rows(out_csv):
        done.add(row.key)
        rows.append(row)
    logger.info("resuming sweep: %d rows already present", len(rows))
    return done, rows


def run_sweep(config: SweepConfig, *, out_csv: str | None = None,
              dry_run: bool = False) -> list[ResultRow]:
    """Execute every (network, product, q, policy, repetition) cell.

    Each row's RNG seed derives from (master seed, row key sans q), so any
    row is reproducible in isolation and populations stay coupled across q.
    With out_csv set, finished rows are appended as they complete and rows
    already present are skipped on restart. dry_run enumerates without
    simulating and returns placeholder rows.
    """
    human, artificial = _load_pools(config)
    product_ids = _resolve_products(config, human, artificial)
    try:
        networks = load_network_dir(config.network_dir)
    except OSError as exc:
        raise SweepError(f"cannot read networks: {exc}") from exc

    keys = enumerate_row_keys(config, sorted(networks), product_ids)
    expected = (len(networks) * len(product_ids) * len(config.policies)
                * config.repetitions * len(config.q_values))
    assert len(keys) == expected

    if dry_run:
        return [ResultRow(*k[:4], q=k[4], policy=k[5], repetition=k[6],
                          adoption_rate=float("nan"), steps=-1, n_seeds=-1)
                for k in keys]

    done, rows = _existing_keys(out_csv) if out_csv else (set(), [])
    writer = None
    fh = None
    if out_csv:
        new_file = not os.path.exists(out_csv)
        fh = open(out_csv, "a", newline="", encoding="utf-8")
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(RESULT_COLUMNS)

    try:
        for network_id in sorted(networks):
            net = networks[network_id]
            for product_id in product_ids:
                tau_by_pool = {"human": human.column(product_id),
                               "artificial": artificial.column(product_id)}
                for policy in config.policies:
                    for rep in range(1, config.repetitions + 1):
                        base = _row_base_seed(config, network_id, product_id,
                                              policy, rep)
                        assign_seed, seeding_seed = np.random.SeedSequence(
                            base).generate_state(2).tolist()
                        seeds = select_seeds(net, policy, config.seed_rate,
                                             seeding_seed)
                        for q in config.q_values:
                            key = (config.study_id, config.llm_label, network_id,
                                   product_id, round(q, 10), policy, rep)
                            if key in done:
                                continue
                            assignment = assign_population(
                                net, human, artificial, q, assign_seed)
                            result = run_diffusion(net, assignment, tau_by_pool,
                                                   seeds)
                            row = ResultRow(
                                study=config.study_id, llm_label=config.llm_label,
                                network_id=network_id, product_id=product_id,
                                q=q, policy=policy, repetition=rep,
                                adoption_rate=result.adoption_rate,
                                steps=result.steps_to_fixation,
                                n_seeds=len(seeds))
                            rows.append(row)
                            if writer is not None:
                                writer.writerow(_row_to_csv(row))
                                fh.flush()
    finally:
        if fh is not None:
            fh.close()

    order = {k: i for i, k in enumerate(keys)}
    rows.sort(key=lambda r: order.get(r.key, -1))
    return rows


def _row_to_csv(row: ResultRow) -> list:
    return [row.study, row.llm_label, row.network_id, row.product_id,
            repr(row.q), row.policy, row.repetition,
            repr(row.adoption_rate), row.steps, row.n_seeds]


def write_result_rows(rows: Iterable[ResultRow], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow(_row_to_csv(row))


def read_result_rows(path: str) -> list[ResultRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(RESULT_COLUMNS) - set(reader.fieldnames):
            raise SweepError(f"{path}: not a sweep result CSV")
        return [ResultRow(
            study=r["study"], llm_label=r["llm_label"],
            network_id=r["network_id"], product_id=r["product_id"],
            q=float(r["q"]), policy=r["policy"], repetition=int(r["repetition"]),
            adoption_rate=float(r["adoption_rate"]), steps=int(r["steps"]),
            n_seeds=int(r["n_seeds"])) for r in reader]


def summarize(rows: Sequence[ResultRow],
              group_keys: Sequence[str] = ("q", "policy")) -> list[SummaryRow]:
    """Group rows and report the mean adoption rate with a 95% CI half-width
    of 1.96 * sample standard deviation / sqrt(n). Permutation-invariant;
    singleton groups get CI 0 and a flag."""
    if not rows:
        raise SweepError("no rows to summarize")
    bad = [k for k in group_keys if k not in RESULT_COLUMNS]
    if bad:
        raise SweepError(f"unknown group keys {bad}")
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        key = tuple(getattr(row, k) for k in group_keys)
        groups.setdefault(key, []).append(row.adoption_rate)
    out = []
    for key in sorted(groups):
        vals = np.asarray(groups[key])
        n = len(vals)
        if n == 1:
            half = 0.0
        else:
            half = 1.96 * float(vals.std(ddof=1)) / np.sqrt(n)
        out.append(SummaryRow(group=key, group_keys=tuple(group_keys),
                              mean_adoption_rate=float(vals.mean()),
                              ci95_half_width=half, n=n, singleton=n == 1))
    return out


def emit_report(summary: Sequence[SummaryRow], out_dir: str) -> list[str]:
    """Write the summary CSV and a plot-ready long CSV (x = q, y = mean,
    err = CI, series = policy). Deterministic formatting; returns the paths."""
    if not summary:
        raise SweepError("empty summary")
    if not out_dir:
        raise SweepError("out_dir must be a non-empty path")
    os.makedirs(out_dir, exist_ok=True)
    group_keys = summary[0].group_keys

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*group_keys, "mean_adoption_rate", "ci95_half_width", "n",
                    "singleton"])
        for s in sorted(summary, key=lambda s_: tuple(map(str, s_.group))):
            w.writerow([*s.group, repr(s.mean_adoption_rate),
                        repr(s.ci95_half_width), s.n, int(s.singleton)])

    plot_path = os.path.join(out_dir, "plot_long.csv")
    with open(plot_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        extra = [k for k in group_keys if k not in ("q", "policy")]
        w.writerow(["x", "y", "err", "series", *extra])
        for s in sorted(summary, key=lambda s_: tuple(map(str, s_.group))):
            by_name = dict(zip(s.group_keys, s.group))
            w.writerow([by_name.get("q", ""), repr(s.mean_adoption_rate),
                        repr(s.ci95_half_width), by_name.get("policy", ""),
                        *[by_name[k] for k in extra]])
    return [summary_path, plot_path]
