"""Spectral and stationarity diagnostics.

Singular spectra, numerical rank, rank-revealing column norms, and the
fixed-point residual report for the projected-gradient dynamics: at a
fixed point, G u_j lam_j = 0 for all j, u_j^T G u_j >= 0 where lam_j = 0
and u_j^T G u_j = 0 where lam_j > 0, with the pre-projection factor
staying inside the ball.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

# columns with lam below this fraction of max(lam) count as clamped to zero
LAMBDA_ZERO_RTOL = 1e-12


@dataclass(frozen=True)
class FixedPointReport:
    cond_a_resid: float   # max_j ||G u_j lam_j||, meaningful when ubar_norm <= alpha
    cond_c_viol: float    # max over zero-lam columns of max(0, -u_j^T G u_j)
    cond_d_resid: float   # max over positive-lam columns of |u_j^T G u_j|
    ubar_norm: float
    alpha: float
    beta: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "cond_a_resid": self.cond_a_resid,
                "cond_c_viol": self.cond_c_viol,
                "cond_d_resid": self.cond_d_resid,
                "ubar_norm": self.ubar_norm,
                "alpha": self.alpha,
                "beta": self.beta,
            },
            sort_keys=True,
        )


def singular_values(M: np.ndarray) -> np.ndarray:
    """Full singular spectrum, descending."""
    M = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise ValueError("non-finite entries in input matrix")
    return np.linalg.svd(M, compute_uv=False)


def numerical_rank(svals: np.ndarray, rel_tol: float) -> int:
    """Count of singular values strictly above rel_tol * sigma_1."""
    svals = np.asarray(svals, dtype=np.float64)
    if svals.size == 0:
        return 0
    if np.any(np.diff(svals) > 0) or np.any(svals < 0):
        raise ValueError("singular values must be nonnegative and descending")
    if svals[0] == 0.0:
        return 0
    return int(np.count_nonzero(svals > rel_tol * svals[0]))


def column_norms(U: np.ndarray) -> np.ndarray:
    """Per-column Euclidean norms."""
    return np.linalg.norm(np.asarray(U, dtype=np.float64), axis=0)


def fixed_point_report(state, G: np.ndarray, eta: float) -> FixedPointReport:
    """Evaluate the fixed-point residuals of a state against gradient G."""
    U, lam = state.U, state.d_diag
    if G.shape != (U.shape[0], U.shape[0]):
        raise ValueError(f"gradient shape {G.shape} does not match factor {U.shape}")
    if eta <= 0:
        raise ValueError("eta must be > 0")
    alpha = state.alpha if state.alpha is not None else float("inf")

    GU = G @ U
    ubar_norm = float(np.linalg.norm(U - 2.0 * eta * GU * lam))
    cond_a = float(np.max(np.linalg.norm(GU * lam, axis=0))) if U.size else 0.0

    quad = np.einsum("ij,ij->j", U, GU)  # u_j^T G u_j
    zero = lam <= LAMBDA_ZERO_RTOL * (lam.max() if lam.size else 0.0)
    cond_c = float(np.max(np.maximum(0.0, -quad[zero]), initial=0.0))
    cond_d = float(np.max(np.abs(quad[~zero]), initial=0.0))

    beta = 0.0
    if np.isfinite(alpha) and ubar_norm > alpha:
        beta = (ubar_norm - alpha) / (2.0 * alpha * eta)
    return FixedPointReport(
        cond_a_resid=cond_a,
        cond_c_viol=cond_c,
        cond_d_resid=cond_d,
        ubar_norm=ubar_norm,
        alpha=alpha,
        beta=beta,
    )


def spectrum_csv(svals: np.ndarray) -> str:
    """One-column CSV export of a spectrum."""
    lines = ["sv"] + [repr(float(s)) for s in svals]
    return "\n".join(lines) + "\n"
