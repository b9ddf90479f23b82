"""Conjoint study definitions, per-respondent choice-task generation, and
enumeration of the full product space."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Probability that a level draw is taken from the least-used levels of the
# respondent rather than uniformly from all levels still in quota.
BALANCE_WEIGHT = 0.7


class DesignError(ValueError):
    """Raised for invalid study definitions or infeasible design requests."""


@dataclass(frozen=True)
class Attribute:
    """One conjoint attribute: a named set of levels.

    Categorical attributes carry string level labels; numeric ones carry
    numbers. The social-signal attribute is numeric with values expressed as
    fractions in [0, 1] (rendered as percentages only at prompt boundaries).
    """

    name: str
    kind: str  # "categorical" | "numeric"
    levels: tuple
    is_social_signal: bool = False

    def __post_init__(self):
        if self.kind not in ("categorical", "numeric"):
            raise DesignError(f"unknown attribute kind {self.kind!r}")
        if len(self.levels) < 2:
            raise DesignError(f"attribute {self.name!r} needs >=2 levels")
        if len(set(self.levels)) != len(self.levels):
            raise DesignError(f"attribute {self.name!r} has duplicate levels")
        if self.is_social_signal:
            if self.kind != "numeric":
                raise DesignError("social-signal attribute must be numeric")
            vals = [float(v) for v in self.levels]
            if any(not (0.0 <= v <= 1.0) for v in vals):
                raise DesignError("social-signal levels must be fractions in [0,1]")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise DesignError("social-signal levels must be strictly increasing")
        object.__setattr__(self, "levels", tuple(self.levels))

    @property
    def n_levels(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class ProductProfile:
    """A product as a tuple of level indices over the non-social attributes,
    with an optional social-signal fraction (present in choice tasks, absent
    in the diffusion product catalog)."""

    levels: tuple[int, ...]
    social_value: float | None = None

    @property
    def product_id(self) -> str:
        return "-".join(str(i) for i in self.levels)

    def without_social(self) -> "ProductProfile":
        return ProductProfile(levels=self.levels)


@dataclass(frozen=True)
class ChoiceTask:
    """One choice set: alts_per_task product alternatives plus the implicit
    none option."""

    task_id: int
    alternatives: tuple[ProductProfile, ...]


@dataclass(frozen=True)
class Study:
    """Static description of a conjoint study (no respondent tasks)."""

    study_id: str
    attributes: tuple[Attribute, ...]
    alts_per_task: int
    tasks_per_respondent: int

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        socials = [a for a in self.attributes if a.is_social_signal]
        if len(socials) > 1:
            raise DesignError("at most one social-signal attribute per study")
        if self.alts_per_task < 2:
            raise DesignError("alts_per_task must be >= 2")
        if self.tasks_per_respondent < 1:
            raise DesignError("tasks_per_respondent must be >= 1")

    @property
    def social_attribute(self) -> Attribute | None:
        for a in self.attributes:
            if a.is_social_signal:
                return a
        return None

    @property
    def non_social_attributes(self) -> tuple[Attribute, ...]:
        return tuple(a for a in self.attributes if not a.is_social_signal)

    def n_products(self) -> int:
        n = 1
        for a in self.non_social_attributes:
            n *= a.n_levels
        return n


@dataclass
class StudyDesign:
    """A study plus the per-respondent task lists actually shown."""

    study: Study
    tasks: dict[str, list[ChoiceTask]]

    @property
    def respondent_ids(self) -> list[str]:
        return list(self.tasks.keys())

    @property
    def n_respondents(self) -> int:
        return len(self.tasks)

    def task(self, respondent_id: str, task_id: int) -> ChoiceTask:
        for t in self.tasks[respondent_id]:
            if t.task_id == task_id:
                return t
        raise KeyError(f"no task {task_id} for respondent {respondent_id}")


@dataclass
class DesignReport:
    """Level-balance diagnostics for a generated design."""

    level_frequencies: dict[str, dict] = field(default_factory=dict)
    per_respondent_imbalance: dict[str, int] = field(default_factory=dict)
    overlap_counts: dict[str, int] = field(default_factory=dict)
    cooccurrence: dict[tuple, int] = field(default_factory=dict)
    empty_levels: list[tuple] = field(default_factory=list)
    empty_pairs: list[tuple] = field(default_factory=list)


def ps_study() -> Study:
    """The carbon-capture policy-support study: 5 categorical attributes plus
    the friends-endorsing percentage, 15 tasks of 3 alternatives + none."""
    return Study(
        study_id="PS",
        attributes=(
            Attribute("policy_type", "categorical", ("ban", "subsidies", "tax")),
            Attribute("cost", "categorical", ("$4", "$9", "$14", "$19")),
            Attribute("start_year", "categorical", ("2025", "2035", "2045", "2055")),
            Attribute("distance", "categorical",
                      ("2 miles", "5 miles", "10 miles", "50 miles")),
            Attribute("endorsement", "categorical",
                      ("ccc", "greenpeace", "dp", "rp")),
            Attribute("friends_share", "numeric",
                      (0.01, 0.23, 0.45, 0.76, 0.98), is_social_signal=True),
        ),
        alts_per_task=3,
        tasks_per_respondent=15,
    )


def aa_study() -> Study:
    """The messaging-app adoption study: 4 categorical attributes plus the
    friends-using percentage, 14 tasks of 3 alternatives + none."""
    return Study(
        study_id="AA",
        attributes=(
            Attribute("accessibility", "categorical", ("mobile only", "web accessible")),
            Attribute("authentication", "categorical",
                      ("simple", "two-factor", "multi-factor")),
            Attribute("customisation", "categorical", ("low", "medium", "high")),
            Attribute("video_calls", "categorical", ("one-on-one", "multi-person")),
            Attribute("friends_share", "numeric",
                      (0.01, 0.23, 0.45, 0.76, 0.98), is_social_signal=True),
        ),
        alts_per_task=3,
        tasks_per_respondent=14,
    )


def _balanced_quota(n_slots: int, n_levels: int, rng: np.random.Generator) -> np.ndarray:
    """Level quotas for one respondent-attribute: counts differ by at most 1,
    the levels receiving the extra slot chosen at random."""
    base, extra = divmod(n_slots, n_levels)
    quota = np.full(n_levels, base, dtype=int)
    if extra:
        quota[rng.choice(n_levels, size=extra, replace=False)] += 1
    return quota


def _draw_level(used: np.ndarray, remaining: np.ndarray, rng: np.random.Generator) -> int:
    """Balanced-overlap draw: with probability BALANCE_WEIGHT pick uniformly
    among the least-used levels still in quota, otherwise uniformly among all
    levels still in quota."""
    open_levels = np.flatnonzero(remaining > 0)
    if rng.random() < BALANCE_WEIGHT:
        least = open_levels[used[open_levels] == used[open_levels].min()]
        return int(rng.choice(least))
    return int(rng.choice(open_levels))


def build_design(
    attributes: Sequence[Attribute],
    n_respondents: int,
    tasks_per_respondent: int,
    alts_per_task: int,
    seed: int,
    study_id: str = "study",
) -> StudyDesign:
    """Generate a per-respondent choice-task design with the balanced-overlap
    heuristic.

    Each respondent's level counts per attribute are quota-bound (imbalance at
    most 1) while the draw order mixes least-used and uniform sampling, which
    permits limited within-task level repetition. Deterministic given seed.
    """
    if n_respondents < 1:
        raise DesignError("n_respondents must be >= 1")
    study = Study(study_id, tuple(attributes), alts_per_task, tasks_per_respondent)
    n_products = study.n_products()
    if alts_per_task > n_products:
        raise DesignError(
            f"alts_per_task={alts_per_task} exceeds product-space size {n_products}")

    social = study.social_attribute
    non_social = study.non_social_attributes
    rng = np.random.default_rng(seed)
    slots = tasks_per_respondent * alts_per_task

    tasks: dict[str, list[ChoiceTask]] = {}
    seen_lists: set[tuple] = set()
    for r in range(n_respondents):
        rid = f"{study_id}_{r + 1:04d}"
        for _attempt in range(100):
            draws: dict[str, list[int]] = {}
            for attr in study.attributes:
                quota = _balanced_quota(slots, attr.n_levels, rng)
                used = np.zeros(attr.n_levels, dtype=int)
                remaining = quota.copy()
                picks = []
                for _ in range(slots):
                    lv = _draw_level(used, remaining, rng)
                    used[lv] += 1
                    remaining[lv] -= 1
                    picks.append(lv)
                draws[attr.name] = picks
            task_list = []
            for t in range(tasks_per_respondent):
                alts = []
                for a in range(alts_per_task):
                    k = t * alts_per_task + a
                    levels = tuple(draws[attr.name][k] for attr in non_social)
                    sv = float(social.levels[draws[social.name][k]]) if social else None
                    alts.append(ProductProfile(levels=levels, social_value=sv))
                task_list.append(ChoiceTask(task_id=t + 1, alternatives=tuple(alts)))
            fingerprint = tuple(
                (t.task_id, tuple((p.levels, p.social_value) for p in t.alternatives))
                for t in task_list
            )
            # distinct task list per respondent; collisions only possible in
            # tiny designs, retried with fresh draws
            if fingerprint not in seen_lists or n_products ** (slots) <= n_respondents:
                seen_lists.add(fingerprint)
                break
        tasks[rid] = task_list
    return StudyDesign(study=study, tasks=tasks)


def enumerate_products(study: Study) -> list[ProductProfile]:
    """Full Cartesian product of the non-social attribute levels, in
    lexicographic order by attribute position then level index."""
    non_social = study.non_social_attributes
    if not non_social:
        raise DesignError("study has no non-social attribute")
    ranges = [range(a.n_levels) for a in non_social]
    return [ProductProfile(levels=combo) for combo in itertools.product(*ranges)]


def validate_design(design: StudyDesign) -> DesignReport:
    """Tally level frequencies, per-respondent imbalance, within-task overlap
    and pairwise co-occurrence; flag empty cells."""
    study = design.study
    report = DesignReport()
    attr_names = [a.name for a in study.attributes]
    non_social_names = [a.name for a in study.non_social_attributes]

    freq = {a.name: {lv: 0 for lv in a.levels} for a in study.attributes}
    imbalance = {a.name: 0 for a in study.attributes}
    overlap = {a.name: 0 for a in study.attributes}
    cooc: dict[tuple, int] = {}

    def levels_of(profile: ProductProfile, attr: Attribute) -> object:
        if attr.is_social_signal:
            return profile.social_value
        return attr.levels[profile.levels[non_social_names.index(attr.name)]]

    for rid, task_list in design.tasks.items():
        counts = {a.name: {lv: 0 for lv in a.levels} for a in study.attributes}
        for task in task_list:
            for attr in study.attributes:
                shown = [levels_of(p, attr) for p in task.alternatives]
                for lv in shown:
                    key = lv if not attr.is_social_signal else lv
                    counts[attr.name][key] += 1
                    freq[attr.name][key] += 1
                overlap[attr.name] += len(shown) - len(set(shown))
            for p in task.alternatives:
                for i, a_i in enumerate(study.attributes):
                    for a_j in study.attributes[i + 1:]:
                        pair = (a_i.name, levels_of(p, a_i), a_j.name, levels_of(p, a_j))
                        cooc[pair] = cooc.get(pair, 0) + 1
        for name, c in counts.items():
            vals = list(c.values())
            imbalance[name] = max(imbalance[name], max(vals) - min(vals))

    report.level_frequencies = freq
    report.per_respondent_imbalance = imbalance
    report.overlap_counts = overlap
    report.cooccurrence = cooc
    report.empty_levels = [
        (name, lv) for name, c in freq.items() for lv, n in c.items() if n == 0
    ]
    for i, a_i in enumerate(study.attributes):
        for a_j in study.attributes[i + 1:]:
            for lv_i in a_i.levels:
                for lv_j in a_j.levels:
                    li = float(lv_i) if a_i.is_social_signal else lv_i
                    lj = float(lv_j) if a_j.is_social_signal else lv_j
                    if (a_i.name, li, a_j.name, lj) not in cooc:
                        report.empty_pairs.append((a_i.name, li, a_j.name, lj))
    return report


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def study_to_dict(study: Study) -> dict:
    return {
        "study_id": study.study_id,
        "attributes": [
            {
                "name": a.name,
                "kind": a.kind,
                "levels": list(a.levels),
                "is_social_signal": a.is_social_signal,
            }
            for a in study.attributes
        ],
        "alts_per_task": study.alts_per_task,
        "tasks_per_respondent": study.tasks_per_respondent,
    }


def study_from_dict(d: dict) -> Study:
    return Study(
        study_id=d["study_id"],
        attributes=tuple(
            Attribute(
                name=a["name"],
                kind=a["kind"],
                levels=tuple(a["levels"]),
                is_social_signal=bool(a.get("is_social_signal", False)),
            )
            for a in d["attributes"]
        ),
        alts_per_task=int(d["alts_per_task"]),
        tasks_per_respondent=int(d["tasks_per_respondent"]),
    )


def load_study_definition(path: str) -> Study:
    """Read a study definition JSON file."""
    with open(path, encoding="utf-8") as fh:
        return study_from_dict(json.load(fh))


def save_study_definition(study: Study, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(study_to_dict(study), fh, indent=2)
        fh.write("\n")


def design_to_json(design: StudyDesign) -> str:
    """Canonical JSON serialization (byte-stable for identical designs)."""
    payload = {
        "study": study_to_dict(design.study),
        "tasks": {
            rid: [
                {
                    "task_id": t.task_id,
                    "alternatives": [
                        {"levels": list(p.levels), "social_value": p.social_value}
                        for p in t.alternatives
                    ],
                }
                for t in task_list
            ]
            for rid, task_list in design.tasks.items()
        },
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def design_from_json(text: str) -> StudyDesign:
    payload = json.loads(text)
    study = study_from_dict(payload["study"])
    tasks = {
        rid: [
            ChoiceTask(
                task_id=int(t["task_id"]),
                alternatives=tuple(
                    ProductProfile(
                        levels=tuple(int(i) for i in p["levels"]),
                        social_value=(None if p["social_value"] is None
                                      else float(p["social_value"])),
                    )
                    for p in t["alternatives"]
                ),
            )
            for t in task_list
        ]
        for rid, task_list in payload["tasks"].items()
    }
    return StudyDesign(study=study, tasks=tasks)


def save_design(design: StudyDesign, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(design_to_json(design))


def load_design(path: str) -> StudyDesign:
    with open(path, encoding="utf-8") as fh:
        return design_from_json(fh.read())


def design_to_long_rows(design: StudyDesign) -> Iterable[tuple]:
    """Long-format rows: (respondent_id, task_id, alternative_id, attribute, level)."""
    study = design.study
    non_social_names = [a.name for a in study.non_social_attributes]
    for rid, task_list in design.tasks.items():
        for task in task_list:
            for k, p in enumerate(task.alternatives, start=1):
                for j, name in enumerate(non_social_names):
                    attr = study.non_social_attributes[j]
                    yield (rid, task.task_id, k, name, str(attr.levels[p.levels[j]]))
                if study.social_attribute is not None:
                    yield (rid, task.task_id, k, study.social_attribute.name,
                           repr(p.social_value))
