from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class FitResult:
    """Fitted values on the design grid plus bookkeeping for the harness."""

    yhat: np.ndarray
    tuning: float
    method: str
    mse_truth: float = math.nan
    dof: float = math.nan
    knots: int = -1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.yhat = np.asarray(self.yhat, dtype=np.float64)

    def with_truth(self, f0) -> "FitResult":
        f0 = np.asarray(f0, dtype=np.float64)
        if f0.shape != self.yhat.shape:
            raise ValueError("truth and fit lengths differ")
        self.mse_truth = float(np.mean((self.yhat - f0) ** 2))
        return self

    def csv_row(self) -> list:
        return [self.method, repr(float(self.tuning)), repr(self.mse_truth), repr(float(self.dof)), self.knots]


CSV_HEADER = ["method", "lambda_or_threshold", "mse_vs_truth", "dof", "knots_or_active"]
