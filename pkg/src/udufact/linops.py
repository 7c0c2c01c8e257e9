"""Linear measurement operators on symmetric matrices.

Two operator families are supported:

  - entry mask:      A(X)_k = X[i_k, j_k]          (matrix completion)
  - rank-one sensing: A(X)_i = a_i^T X a_i         (lifted phase retrieval)

together with the adjoint, the least-squares objective
f(X) = 0.5 * ||A(X) - b||^2 and its matrix gradient. All arithmetic is
float64; operators are immutable after construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ENTRY_MASK = "entry_mask"
RANK_ONE = "rank_one"


@dataclass(frozen=True)
class MeasurementOp:
    """Immutable linear map from symmetric d x d matrices to R^n.

    For kind="entry_mask", ``indices`` holds n distinct (row, col) pairs.
    For kind="rank_one", ``vectors`` is an (n, d) array of sensing vectors.
    """

    kind: str
    dim: int
    indices: tuple = field(default=None)
    vectors: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.kind not in (ENTRY_MASK, RANK_ONE):
            raise ValueError(f"unknown operator kind: {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.kind == ENTRY_MASK:
            if not self.indices:
                raise ValueError("entry_mask operator needs at least one index")
            idx = tuple((int(i), int(j)) for i, j in self.indices)
            if len(set(idx)) != len(idx):
                raise ValueError("duplicate indices in entry mask")
            for i, j in idx:
                if not (0 <= i < self.dim and 0 <= j < self.dim):
                    raise ValueError(f"index ({i},{j}) out of range for dim {self.dim}")
            object.__setattr__(self, "indices", idx)
            rows = np.array([i for i, _ in idx], dtype=np.intp)
            cols = np.array([j for _, j in idx], dtype=np.intp)
            object.__setattr__(self, "_rows", rows)
            object.__setattr__(self, "_cols", cols)
        else:
            vecs = np.asarray(self.vectors, dtype=np.float64)
            if vecs.ndim != 2 or vecs.shape[0] < 1:
                raise ValueError("rank_one operator needs an (n, d) vector array")
            if vecs.shape[1] != self.dim:
                raise ValueError(
                    f"sensing vectors have length {vecs.shape[1]}, expected {self.dim}"
                )
            vecs.setflags(write=False)
            object.__setattr__(self, "vectors", vecs)

    @property
    def n_measurements(self) -> int:
        if self.kind == ENTRY_MASK:
            return len(self.indices)
        return self.vectors.shape[0]

    def to_json(self) -> str:
        if self.kind == ENTRY_MASK:
            payload = {
                "kind": ENTRY_MASK,
                "dim": self.dim,
                "indices": [[i, j] for i, j in self.indices],
            }
        else:
            payload = {
                "kind": RANK_ONE,
                "dim": self.dim,
                "vectors": self.vectors.tolist(),
            }
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "MeasurementOp":
        payload = json.loads(text)
        kind = payload.get("kind")
        if kind == ENTRY_MASK:
            return MeasurementOp(
                kind=ENTRY_MASK,
                dim=int(payload["dim"]),
                indices=tuple((int(i), int(j)) for i, j in payload["indices"]),
            )
        if kind == RANK_ONE:
            return MeasurementOp(
                kind=RANK_ONE,
                dim=int(payload["dim"]),
                vectors=np.asarray(payload["vectors"], dtype=np.float64),
            )
        raise ValueError(f"unknown operator kind in JSON: {kind!r}")


def entry_mask_op(dim: int, indices) -> MeasurementOp:
    return MeasurementOp(kind=ENTRY_MASK, dim=dim, indices=tuple(indices))


def rank_one_op(vectors) -> MeasurementOp:
    vectors = np.asarray(vectors, dtype=np.float64)
    return MeasurementOp(kind=RANK_ONE, dim=vectors.shape[1], vectors=vectors)


def _check_square(op: MeasurementOp, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (op.dim, op.dim):
        raise ValueError(f"expected {op.dim}x{op.dim} matrix, got {X.shape}")
    return X


def apply_op(op: MeasurementOp, X: np.ndarray) -> np.ndarray:
    """Evaluate A(X). Symmetry of X is the caller's responsibility."""
    X = _check_square(op, X)
    if op.kind == ENTRY_MASK:
        return X[op._rows, op._cols].copy()
    AX = op.vectors @ X
    return np.einsum("ij,ij->i", AX, op.vectors)


def adjoint_op(op: MeasurementOp, r: np.ndarray) -> np.ndarray:
    """Adjoint A*(r), returned as an exactly symmetric d x d matrix."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (op.n_measurements,):
        raise ValueError(
            f"residual has length {r.shape}, expected ({op.n_measurements},)"
        )
    if op.kind == ENTRY_MASK:
        G = np.zeros((op.dim, op.dim))
        G[op._rows, op._cols] = r  # indices are distinct by construction
        return 0.5 * (G + G.T)
    return (op.vectors * r[:, None]).T @ op.vectors


def objective(op: MeasurementOp, X: np.ndarray, b: np.ndarray) -> float:
    """0.5 * ||A(X) - b||_2^2."""
    resid = apply_op(op, X) - np.asarray(b, dtype=np.float64)
    return 0.5 * float(resid @ resid)


def grad_X(op: MeasurementOp, X: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient of the objective in matrix space; symmetric by construction."""
    resid = apply_op(op, X) - np.asarray(b, dtype=np.float64)
    return adjoint_op(op, resid)


def operator_norm(op: MeasurementOp, iters: int = 100, seed: int = 0) -> float:
    """Largest eigenvalue of the PSD map X -> A*(A(X)), by power iteration.

    This is the smoothness constant of the objective in X, used for the
    eta = 1/L step-size rule in phase retrieval runs.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((op.dim, op.dim))
    X = 0.5 * (X + X.T)
    X /= np.linalg.norm(X)
    lam = 0.0
    for _ in range(iters):
        Y = adjoint_op(op, apply_op(op, X))
        lam = float(np.sum(X * Y))
        norm = np.linalg.norm(Y)
        if norm == 0.0:
            return 0.0
        X = Y / norm
    return lam
