"""Wine-quality CSV loading and the tabular decision-set pipeline.

The loader expects the public white-wine file layout: semicolon-separated,
one header row, 11 physicochemical feature columns and a final integer
``quality`` column. The pipeline turns sampled wines into 13-dimensional
arms (features, constant 1, random protected feature) whose observed value
is the rating corrupted by the protected feature, while the clean rating
stays the projection reward.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decision_sets import FiniteSet
from .environment import TabularArm
from .linalg import Projector, diagonal_projector

WINE_FEATURES = 11
WINE_COLUMNS = 12
WINE_ARM_DIM = 13
ELIGIBLE_QUALITIES = (4, 5, 6, 7, 8)
CORRUPTION_SCALE = 4.0
SAMPLE_SIZE = 200


class WineParseError(ValueError):
    """Malformed wine CSV content; the message names the offending line."""


class InsufficientDataError(ValueError):
    """Fewer eligible records than the requested sample size."""


@dataclass(frozen=True)
class WineRecord:
    features: np.ndarray  # the 11 physicochemical values
    quality: int

    def __post_init__(self):
        f = np.ascontiguousarray(self.features, dtype=np.float64)
        f.flags.writeable = False
        object.__setattr__(self, "features", f)


def load_wine_csv(path: str | Path) -> list[WineRecord]:
    """Parse the semicolon-separated wine file into records.

    Raises WineParseError (naming the line number) on a missing or bad
    header, wrong field counts, non-numeric or non-finite features, or
    ratings outside 0..10.
    """
    path = Path(path)
    records: list[WineRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=";")
        header = next(reader, None)
        if header is None:
            raise WineParseError(f"{path}: line 1: empty file, expected a header row")
        if len(header) != WINE_COLUMNS:
            raise WineParseError(
                f"{path}: line 1: expected {WINE_COLUMNS} columns, got {len(header)}"
            )
        if header[-1].strip().strip('"') != "quality":
            raise WineParseError(f"{path}: line 1: last column must be 'quality'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != WINE_COLUMNS:
                raise WineParseError(
                    f"{path}: line {lineno}: expected {WINE_COLUMNS} fields, got {len(row)}"
                )
            try:
                feats = [float(v) for v in row[:WINE_FEATURES]]
                quality = float(row[WINE_FEATURES])
            except ValueError as exc:
                raise WineParseError(f"{path}: line {lineno}: non-numeric field ({exc})") from None
            if not all(math.isfinite(v) for v in feats):
                raise WineParseError(f"{path}: line {lineno}: non-finite feature value")
            if quality != int(quality) or not 0 <= quality <= 10:
                raise WineParseError(
                    f"{path}: line {lineno}: quality must be an integer in 0..10, got {row[-1]!r}"
                )
            records.append(WineRecord(features=np.array(feats), quality=int(quality)))
    return records


def build_wine_decision_set(
    records: list[WineRecord],
    rng: np.random.Generator,
    sample_size: int = SAMPLE_SIZE,
    standardize: bool = False,
) -> tuple[FiniteSet, list[TabularArm], Projector]:
    """Sample a tabular arm set from the loaded records.

    Keeps ratings 4..8, samples ``sample_size`` wines uniformly without
    replacement, then builds 13-dim arms: the 11 features (per-column
    standardized over the sample when requested), a constant 1 at index 11
    and a fresh U(0,1) protected feature at index 12. The observed value is
    quality - 4 * protected; the clean quality is the projection reward and
    the projector zeroes exactly the protected coordinate.
    """
    eligible = [r for r in records if r.quality in ELIGIBLE_QUALITIES]
    if len(eligible) < sample_size:
        raise InsufficientDataError(
            f"need {sample_size} records with quality in {ELIGIBLE_QUALITIES}, "
            f"got {len(eligible)}"
        )
    chosen = rng.choice(len(eligible), size=sample_size, replace=False)
    protected = rng.uniform(0.0, 1.0, size=sample_size)

    feats = np.vstack([eligible[i].features for i in chosen])
    if standardize:
        mean = feats.mean(axis=0)
        std = feats.std(axis=0)
        std[std == 0.0] = 1.0
        feats = (feats - mean) / std

    arms = np.empty((sample_size, WINE_ARM_DIM))
    arms[:, :WINE_FEATURES] = feats
    arms[:, WINE_FEATURES] = 1.0
    arms[:, WINE_FEATURES + 1] = protected

    tab = []
    for j, i in enumerate(chosen):
        q = float(eligible[i].quality)
        tab.append(
            TabularArm(
                features=arms[j].copy(),
                observed_value=q - CORRUPTION_SCALE * protected[j],
                projection_value=q,
            )
        )
    fset = FiniteSet.from_arms(arms)
    return fset, tab, diagonal_projector(WINE_ARM_DIM, WINE_ARM_DIM - 1)
