"""Effects coding of conjoint alternatives and the per-respondent parameter
container shared by simulation, estimation, and threshold computation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .studies import Attribute, ChoiceTask, ProductProfile, Study, StudyDesign


class CodingError(ValueError):
    """Raised when alternatives or parameter vectors do not fit the coding."""


@dataclass(frozen=True)
class IndividualParams:
    """Per-respondent utility parameters on the coded scale.

    beta holds the effects-coded partworths (social and none columns
    excluded); gamma is the social-signal coefficient per unit fraction; u0
    is the status-quo (none) utility.
    """

    respondent_id: str
    beta: np.ndarray
    gamma: float
    u0: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        if not (np.all(np.isfinite(self.beta))
                and np.isfinite(self.gamma) and np.isfinite(self.u0)):
            raise CodingError(f"non-finite parameters for {self.respondent_id}")

    def full_vector(self, coding: "CodingSpec") -> np.ndarray:
        """Assemble the full coefficient vector in coding column order."""
        if self.beta.shape != (coding.n_effects,):
            raise CodingError(
                f"beta has {self.beta.shape[0]} entries, coding expects {coding.n_effects}")
        full = np.empty(coding.n_columns)
        full[: coding.n_effects] = self.beta
        full[coding.social_col] = self.gamma
        full[coding.none_col] = self.u0
        return full


@dataclass(frozen=True)
class CodingSpec:
    """Column layout for the coded design matrix.

    Categorical attributes are effects-coded (L levels -> L-1 columns, the
    last level coded -1 across them); one column carries the numeric social
    signal as a fraction; one constant column marks the none option.
    """

    study: Study
    column_names: tuple[str, ...]
    attr_slices: tuple[slice, ...]  # one slice per non-social attribute

    @property
    def n_columns(self) -> int:
        return len(self.column_names)

    @property
    def n_effects(self) -> int:
        return self.n_columns - 2

    @property
    def social_col(self) -> int:
        return self.n_columns - 2

    @property
    def none_col(self) -> int:
        return self.n_columns - 1

    def effects_row(self, product: ProductProfile) -> np.ndarray:
        """Effects-coded row over the non-social attributes only."""
        attrs = self.study.non_social_attributes
        if len(product.levels) != len(attrs):
            raise CodingError("product does not match the study's attributes")
        row = np.zeros(self.n_effects)
        for attr, sl, idx in zip(attrs, self.attr_slices, product.levels):
            if not 0 <= idx < attr.n_levels:
                raise CodingError(
                    f"level index {idx} out of range for attribute {attr.name!r}")
            if idx < attr.n_levels - 1:
                row[sl.start + idx] = 1.0
            else:
                row[sl] = -1.0
        return row

    def alternative_row(self, product: ProductProfile) -> np.ndarray:
        """Full coded row for a product alternative inside a choice task."""
        if product.social_value is None:
            raise CodingError("task alternative lacks a social-signal value")
        row = np.zeros(self.n_columns)
        row[: self.n_effects] = self.effects_row(product)
        row[self.social_col] = float(product.social_value)
        return row

    def none_row(self) -> np.ndarray:
        row = np.zeros(self.n_columns)
        row[self.none_col] = 1.0
        return row

    def encode_task(self, task: ChoiceTask) -> np.ndarray:
        """(alts_per_task + 1, n_columns) matrix; the none row comes last."""
        rows = [self.alternative_row(p) for p in task.alternatives]
        rows.append(self.none_row())
        return np.vstack(rows)

    def effects_matrix(self, products: Sequence[ProductProfile]) -> np.ndarray:
        return np.vstack([self.effects_row(p) for p in products])


def encode_design(design: StudyDesign) -> tuple[CodingSpec, dict[str, np.ndarray]]:
    """Build the coding spec for a design plus the per-respondent coded task
    arrays, shaped (tasks, alts_per_task + 1, n_columns)."""
    coding = coding_for_study(design.study)
    coded = {
        rid: np.stack([coding.encode_task(t) for t in task_list])
        for rid, task_list in design.tasks.items()
    }
    return coding, coded


def coding_for_study(study: Study) -> CodingSpec:
    if study.social_attribute is None:
        raise CodingError("study has no social-signal attribute; cannot code")
    names: list[str] = []
    slices: list[slice] = []
    start = 0
    for attr in study.non_social_attributes:
        width = attr.n_levels - 1
        slices.append(slice(start, start + width))
        names.extend(f"{attr.name}:{attr.levels[i]}" for i in range(width))
        start += width
    names.append(study.social_attribute.name)
    names.append("none")
    return CodingSpec(study=study, column_names=tuple(names), attr_slices=tuple(slices))


def save_params_csv(params: Sequence[IndividualParams], coding: CodingSpec,
                    path: str) -> None:
    """IndividualParams as CSV: respondent_id, one column per effects
    coefficient, gamma, u0."""
    header = ["respondent_id", *coding.column_names[: coding.n_effects], "gamma", "u0"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for p in params:
            w.writerow([p.respondent_id, *(repr(float(b)) for b in p.beta),
                        repr(float(p.gamma)), repr(float(p.u0))])


def load_params_csv(path: str) -> list[IndividualParams]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "respondent_id" or header[-2:] != ["gamma", "u0"]:
            raise CodingError(f"{path}: not a parameter CSV")
        out = []
        for row in reader:
            if not row:
                continue
            out.append(IndividualParams(
                respondent_id=row[0],
                beta=np.array([float(v) for v in row[1:-2]]),
                gamma=float(row[-2]),
                u0=float(row[-1]),
            ))
    return out
