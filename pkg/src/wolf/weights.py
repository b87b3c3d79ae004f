"""Observation weighting functions W(y, yhat) and the Gamma-posterior MAP oracle.

All scalar weights map into [0, 1], so a weighted update can only
down-weight a measurement.  Non-finite measurements get weight 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wolf.core_math import SpdMatrix, mahalanobis_sq

KINDS = ("constant", "imq", "md", "tmd", "perdim_tmd")


@dataclass(frozen=True)
class WeightSpec:
    """Which weighting function to use and its threshold.

    ``c`` is the soft threshold for IMQ/MD and the hard threshold on the
    squared Mahalanobis distance for TMD.  ``w0`` is only read by ``constant``.
    """

    kind: str = "constant"
    c: float = 1.0
    w0: float = 1.0

    def __post_init__(self):
        kind = self.kind.lower().replace("-", "_")
        if kind == "perdim" or kind == "perdimtmd":
            kind = "perdim_tmd"
        if kind not in KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind != "constant" and not self.c > 0:
            raise ValueError(f"threshold c must be positive, got {self.c}")
        if not 0.0 <= self.w0 <= 1.0:
            raise ValueError(f"constant weight must lie in [0, 1], got {self.w0}")

    @classmethod
    def constant(cls, w0: float = 1.0) -> "WeightSpec":
        return cls("constant", w0=w0)

    @classmethod
    def imq(cls, c: float) -> "WeightSpec":
        return cls("imq", c=c)

    @classmethod
    def md(cls, c: float) -> "WeightSpec":
        return cls("md", c=c)

    @classmethod
    def tmd(cls, c: float) -> "WeightSpec":
        return cls("tmd", c=c)

    @classmethod
    def perdim_tmd(cls, c: float) -> "WeightSpec":
        return cls("perdim_tmd", c=c)

    @property
    def is_vector(self) -> bool:
        return self.kind == "perdim_tmd"

    def to_config(self) -> dict[str, str]:
        if self.kind == "constant":
            return {"weight": "constant", "w0": repr(self.w0)}
        return {"weight": self.kind, "c": repr(self.c)}

    @classmethod
    def from_config(cls, entries: dict[str, str]) -> "WeightSpec":
        kind = entries.get("weight", "constant")
        if kind.lower() == "constant":
            return cls.constant(float(entries.get("w0", 1.0)))
        return cls(kind, c=float(entries["c"]))


def compute_weight(spec: WeightSpec, y, yhat, R) -> float:
    if spec.is_vector:
        raise ValueError("per-dimension weights are vector valued; use compute_weight_vector")
    if spec.kind == "constant":
        return float(spec.w0)
    resid = np.atleast_1d(np.asarray(y, dtype=float)) - np.atleast_1d(np.asarray(yhat, dtype=float))
    if not np.all(np.isfinite(resid)):
        return 0.0
    if spec.kind == "imq":
        return float((1.0 + resid @ resid / spec.c**2) ** -0.5)
    dist_sq = mahalanobis_sq(resid, SpdMatrix.of(R))
    if spec.kind == "md":
        return float((1.0 + dist_sq / spec.c**2) ** -0.5)
    # TMD: squared distance against c itself, not c^2
    return 1.0 if dist_sq <= spec.c else 0.0


def compute_weight_vector(spec: WeightSpec, y, yhat, Rdiag) -> np.ndarray:
    """Per-dimension thresholded weights in {0, 1}^d for a diagonal R."""
    if not spec.is_vector:
        raise ValueError(f"{spec.kind} weights are scalar; use compute_weight")
    rdiag = np.atleast_1d(np.asarray(Rdiag, dtype=float))
    if np.any(~(rdiag > 0)):
        raise ValueError("diagonal observation variances must be strictly positive")
    resid = np.atleast_1d(np.asarray(y, dtype=float)) - np.atleast_1d(np.asarray(yhat, dtype=float))
    with np.errstate(invalid="ignore"):
        keep = resid**2 / rdiag <= spec.c
    return keep.astype(float)


def map_weight_oracle(c: float, n_y: int, maha_sq: float) -> float:
    """Mode of the Gamma posterior over a precision multiplier.

    With prior shape ``(c^2 - n_y + 2) / 2`` and rate ``c^2 / 2`` the mode is
    ``c^2 / (c^2 + maha_sq)``, the square of the MD weight.
    """
    alpha = (c**2 - n_y + 2.0) / 2.0
    beta = c**2 / 2.0
    if alpha <= 0:
        raise ValueError(f"prior shape {alpha} is not positive: c={c} too small for n_y={n_y}")
    if maha_sq < 0:
        raise ValueError("squared Mahalanobis distance must be nonnegative")
    return (alpha + n_y / 2.0 - 1.0) / (beta + maha_sq / 2.0)
