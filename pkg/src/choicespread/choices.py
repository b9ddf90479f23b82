"""Respondent profiles and choice data: ingestion of recorded choices,
synthetic choice generation from known parameters, and holdout splitting."""

from __future__ import annotations

import csv
import logging
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .coding import CodingSpec, IndividualParams, coding_for_study
from .studies import StudyDesign

logger = logging.getLogger(__name__)

NONE_CHOICE = 0  # chosen_alternative value recording the none option

# Demographic fields that must be present for a respondent to be usable as a
# survey persona. PS adds subject/politics on top of the shared four.
BASE_REQUIRED_FIELDS = ("age_bracket", "gender", "education_level", "income_bracket")
REQUIRED_PROFILE_FIELDS = {
    "PS": BASE_REQUIRED_FIELDS + ("education_subject", "political_orientation"),
    "AA": BASE_REQUIRED_FIELDS,
}

PROFILE_COLUMNS = (
    "respondent_id", "age_bracket", "gender", "education_level",
    "education_subject", "income_bracket", "political_orientation",
    "social_media_connections",
)


class ChoiceDataError(ValueError):
    """Raised for malformed choice or profile files."""


@dataclass(frozen=True)
class RespondentProfile:
    """Demographics as opaque strings, exactly as rendered into prompts."""

    respondent_id: str
    age_bracket: str = ""
    gender: str = ""
    education_level: str = ""
    education_subject: str = ""
    income_bracket: str = ""
    political_orientation: str = ""
    social_media_connections: str = ""

    def missing_fields(self, required: Sequence[str]) -> list[str]:
        return [f for f in required if not getattr(self, f).strip()]


@dataclass(frozen=True)
class Choice:
    respondent_id: str
    task_id: int
    chosen: int  # 1..alts_per_task, or NONE_CHOICE


@dataclass
class ChoiceDataset:
    """Observed or simulated choices bound to the design that produced them.

    At most one choice per (respondent, task); cells may be missing (e.g.
    exhausted survey retries), in which case they are simply absent.
    """

    study_id: str
    design: StudyDesign
    choices: list[Choice]
    profiles: dict[str, RespondentProfile] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        seen = set()
        k = self.design.study.alts_per_task
        task_ids_by_rid: dict[str, set[int]] = {}
        for c in self.choices:
            if c.respondent_id not in self.design.tasks:
                raise ChoiceDataError(f"unknown respondent {c.respondent_id!r}")
            task_ids = task_ids_by_rid.get(c.respondent_id)
            if task_ids is None:
                task_ids = {t.task_id for t in self.design.tasks[c.respondent_id]}
                task_ids_by_rid[c.respondent_id] = task_ids
            if c.task_id not in task_ids:
                raise ChoiceDataError(
                    f"choice references unknown task {c.task_id} "
                    f"for respondent {c.respondent_id!r}")
            if not (c.chosen == NONE_CHOICE or 1 <= c.chosen <= k):
                raise ChoiceDataError(
                    f"chosen alternative {c.chosen} out of range 1..{k} (0 = none)")
            key = (c.respondent_id, c.task_id)
            if key in seen:
                raise ChoiceDataError(f"duplicate choice for {key}")
            seen.add(key)

    @property
    def respondent_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for c in self.choices:
            seen.setdefault(c.respondent_id, None)
        return list(seen.keys())

    def choices_by_respondent(self) -> dict[str, list[Choice]]:
        out: dict[str, list[Choice]] = {}
        for c in self.choices:
            out.setdefault(c.respondent_id, []).append(c)
        return out

    def missing_cells(self) -> list[tuple[str, int]]:
        """Design cells with no recorded choice, restricted to respondents
        that appear in the dataset at all."""
        have = {(c.respondent_id, c.task_id) for c in self.choices}
        cells = []
        for rid in self.respondent_ids:
            for t in self.design.tasks[rid]:
                if (rid, t.task_id) not in have:
                    cells.append((rid, t.task_id))
        return cells


# ---------------------------------------------------------------------------
# Choice probabilities and synthetic data
# ---------------------------------------------------------------------------

def choice_probabilities(utilities: np.ndarray) -> np.ndarray:
    """Multinomial-logit probabilities over one task's alternatives.

    Shift-invariant by construction: a constant added to every alternative's
    utility (the none option included) cancels in the softmax.
    """
    u = np.asarray(utilities, dtype=float)
    z = u - u.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    assert np.allclose(p.sum(axis=-1), 1.0), "task probabilities must sum to 1"
    return p


def _respondent_rng(seed: int, respondent_id: str) -> np.random.Generator:
    # independent stream per respondent, stable under respondent reordering
    return np.random.default_rng([seed, zlib.crc32(respondent_id.encode())])


def simulate_choices(
    design: StudyDesign,
    ground_truth: Mapping[str, IndividualParams],
    seed: int,
) -> ChoiceDataset:
    """Sample one multinomial-logit choice per (respondent, task) from known
    parameters; the none option uses u0. Deterministic given seed."""
    coding = coding_for_study(design.study)
    missing = [rid for rid in design.tasks if rid not in ground_truth]
    if missing:
        raise ChoiceDataError(f"ground truth missing for respondents {missing[:5]}")

    choices: list[Choice] = []
    k = design.study.alts_per_task
    for rid, task_list in design.tasks.items():
        params = ground_truth[rid]
        full = params.full_vector(coding)
        rng = _respondent_rng(seed, rid)
        rows = np.stack([coding.encode_task(t) for t in task_list])
        utilities = rows @ full  # (tasks, alts+1)
        probs = choice_probabilities(utilities)
        # inverse-CDF draw, vectorized over tasks; clip guards the
        # cum-sum-just-under-1 rounding edge
        picks = (rng.random(len(task_list))[:, None] > probs.cumsum(axis=1)).sum(axis=1)
        picks = np.minimum(picks, k)
        for task, pick in zip(task_list, picks):
            chosen = int(pick) + 1 if pick < k else NONE_CHOICE
            choices.append(Choice(rid, task.task_id, chosen))
    return ChoiceDataset(design.study.study_id, design, choices)


def random_ground_truth(
    design: StudyDesign,
    seed: int,
    beta_scale: float = 0.6,
    gamma_median: float = 3.5,
    gamma_log_sd: float = 0.8,
    u0_mean: float = 1.5,
    u0_sd: float = 1.5,
) -> dict[str, IndividualParams]:
    """Synthesize ground-truth parameters for estimator validation:
    individual partworths spread around a common population mean, lognormal
    (hence positive) social coefficients, and normally distributed status-quo
    utilities. Defaults give enough between-respondent dispersion for
    individual-level recovery from a 15-task design."""
    coding = coding_for_study(design.study)
    rng = np.random.default_rng(seed)
    mu = rng.uniform(-1.0, 1.0, size=coding.n_effects)
    truth = {}
    for rid in design.tasks:
        beta = mu + rng.normal(0.0, beta_scale, size=coding.n_effects)
        gamma = rng.lognormal(np.log(gamma_median), gamma_log_sd)
        u0 = rng.normal(u0_mean, u0_sd)
        truth[rid] = IndividualParams(rid, beta=beta, gamma=float(gamma), u0=float(u0))
    return truth


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def read_profiles_csv(path: str) -> dict[str, RespondentProfile]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "respondent_id" not in reader.fieldnames:
            raise ChoiceDataError(f"{path}: profiles CSV needs a respondent_id column")
        profiles = {}
        for row in reader:
            rid = row["respondent_id"].strip()
            kwargs = {k: (row.get(k) or "").strip()
                      for k in PROFILE_COLUMNS if k != "respondent_id"}
            profiles[rid] = RespondentProfile(respondent_id=rid, **kwargs)
    return profiles


def write_profiles_csv(profiles: Iterable[RespondentProfile], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_COLUMNS)
        for p in profiles:
            w.writerow([getattr(p, c) for c in PROFILE_COLUMNS])


def read_choices_csv(path: str) -> list[Choice]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = {"respondent_id", "task_id", "chosen"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise ChoiceDataError(
                f"{path}: choices CSV needs columns respondent_id, task_id, chosen")
        rows = []
        for row in reader:
            try:
                rows.append(Choice(
                    respondent_id=row["respondent_id"].strip(),
                    task_id=int(row["task_id"]),
                    chosen=int(row["chosen"]),
                ))
            except (TypeError, ValueError) as exc:
                raise ChoiceDataError(f"{path}: malformed row {row!r}") from exc
    return rows


def write_choices_csv(choices: Iterable[Choice], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["respondent_id", "task_id", "chosen"])
        for c in choices:
            w.writerow([c.respondent_id, c.task_id, c.chosen])


def ingest_choices(design: StudyDesign, choices_file: str,
                   profiles_file: str) -> ChoiceDataset:
    """Load and validate recorded choices plus respondent profiles.

    Respondents missing any demographic field required for their study are
    dropped (with a logged count), as are their choices.
    """
    raw_choices = read_choices_csv(choices_file)
    if not raw_choices:
        raise ChoiceDataError("no choices")
    profiles = read_profiles_csv(profiles_file)

    required = REQUIRED_PROFILE_FIELDS.get(
        design.study.study_id, BASE_REQUIRED_FIELDS)
    kept, dropped = {}, []
    for rid, prof in profiles.items():
        if prof.missing_fields(required):
            dropped.append(rid)
        else:
            kept[rid] = prof
    if dropped:
        logger.info("dropped %d of %d respondents with missing demographics",
                    len(dropped), len(profiles))

    dropped_set = set(dropped)
    choices = [c for c in raw_choices if c.respondent_id not in dropped_set]
    if not choices:
        raise ChoiceDataError("no choices left after dropping incomplete profiles")
    return ChoiceDataset(design.study.study_id, design, choices, kept)


def split_holdout(dataset: ChoiceDataset, holdout_tasks_per_respondent: int,
                  seed: int) -> tuple[ChoiceDataset, ChoiceDataset]:
    """Per-respondent disjoint task split; the union reproduces the dataset."""
    tasks_per = dataset.design.study.tasks_per_respondent
    if holdout_tasks_per_respondent >= tasks_per:
        raise ChoiceDataError(
            f"holdout {holdout_tasks_per_respondent} must be < tasks per "
            f"respondent {tasks_per}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for rid, chs in dataset.choices_by_respondent().items():
        task_ids = sorted(c.task_id for c in chs)
        held = set()
        if holdout_tasks_per_respondent > 0:
            n = min(holdout_tasks_per_respondent, len(task_ids))
            held = set(rng.choice(task_ids, size=n, replace=False).tolist())
        for c in chs:
            (test if c.task_id in held else train).append(c)
    mk = lambda cs: ChoiceDataset(dataset.study_id, dataset.design, cs,
                                  dict(dataset.profiles))
    return mk(train), mk(test)
