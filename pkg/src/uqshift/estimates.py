"""Common per-point uncertainty estimate record."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DataError

SOURCES = ("dropout", "ad_dd", "ad_ld", "rio")


@dataclass(frozen=True)
class UqEstimate:
    """One model prediction with an attached uncertainty value.

    ``point_mean`` is the (possibly corrected) prediction, ``uncertainty``
    is a non-negative spread or novelty score, and ``residual_mean`` is
    the predicted signed error when the method estimates one.
    """

    point_mean: float
    uncertainty: float
    source: str
    residual_mean: float | None = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise DataError(f"unknown estimate source {self.source!r}")
        if not self.uncertainty >= 0.0:
            raise DataError(f"uncertainty must be non-negative, got {self.uncertainty}")
