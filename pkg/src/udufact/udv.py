"""Three-layer linear network with a diagonal middle layer.

The map is x -> V diag(w) U^T x. Constraint variants:

  udv:    ||U||_F <= 1, ||V||_F <= 1, w >= 0
  udv_s:  ||U||_F <= 1, ||V||_F <= 1
  udv_v1: per-column ||u_j|| <= 1 and ||v_j|| <= 1, w >= 0
  udv_v2: per-column ||u_j|| <= 1 and ||v_j|| <= 1
  uv:     two-layer baseline V U^T, unconstrained (w absent)

Training is mini-batch gradient descent with optional heavy-ball
momentum; the variant's projections run after every step. Pruning
truncates the SVD of U diag(w) and reassigns the weights; pruned
parameters are for inference and are not re-projected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .solvers import project_fro_ball, project_diag_nonneg

UDV = "udv"
UDV_S = "udv_s"
UDV_V1 = "udv_v1"
UDV_V2 = "udv_v2"
UV = "uv"
VARIANTS = (UDV, UDV_S, UDV_V1, UDV_V2, UV)

INIT_STD = 0.02   # truncated-normal init, truncated at +/- 2 std


@dataclass
class UdvParams:
    U: np.ndarray               # d x m
    V: np.ndarray               # c x m
    w: np.ndarray | None        # length m; None for the uv baseline
    variant: str = UDV

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant: {self.variant!r}")
        if self.variant == UV:
            self.w = None
        elif self.w is None:
            raise ValueError(f"variant {self.variant} requires a diagonal weight vector")

    @property
    def hidden_width(self) -> int:
        return self.U.shape[1]

    def product(self) -> np.ndarray:
        """The end-to-end map V diag(w) U^T as a dense c x d matrix."""
        if self.w is None:
            return self.V @ self.U.T
        return (self.V * self.w) @ self.U.T

    def middle(self) -> np.ndarray:
        """The layer whose spectrum is reported: U diag(w), or U for uv."""
        if self.w is None:
            return self.U
        return self.U * self.w

    def copy(self) -> "UdvParams":
        return UdvParams(
            self.U.copy(),
            self.V.copy(),
            None if self.w is None else self.w.copy(),
            self.variant,
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "variant": self.variant,
                "U": self.U.tolist(),
                "V": self.V.tolist(),
                "w": None if self.w is None else self.w.tolist(),
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "UdvParams":
        payload = json.loads(text)
        w = payload["w"]
        return UdvParams(
            np.asarray(payload["U"], dtype=np.float64),
            np.asarray(payload["V"], dtype=np.float64),
            None if w is None else np.asarray(w, dtype=np.float64),
            payload["variant"],
        )


@dataclass
class TrainConfig:
    lr: float
    momentum: float = 0.0
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    variant: str = UDV

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant: {self.variant!r}")


@dataclass
class RegressionDataset:
    X: np.ndarray                # n x d
    Y: np.ndarray                # n x c
    train_idx: np.ndarray
    test_idx: np.ndarray
    r_gen: int
    noise: float

    @property
    def X_train(self):
        return self.X[self.train_idx]

    @property
    def Y_train(self):
        return self.Y[self.train_idx]

    @property
    def X_test(self):
        return self.X[self.test_idx]

    @property
    def Y_test(self):
        return self.Y[self.test_idx]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float
    svals: np.ndarray


def hidden_width(d: int, c: int) -> int:
    """Heuristic width for the diagonal layer given input/output dims."""
    return round(math.sqrt((c + 2) * d) + 2 * math.sqrt(d / (c + 2)))


def forward(params: UdvParams, x: np.ndarray) -> np.ndarray:
    """Network output for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.U.shape[0],):
        raise ValueError(f"input has shape {x.shape}, expected ({params.U.shape[0]},)")
    h = params.U.T @ x
    if params.w is not None:
        h = params.w * h
    return params.V @ h


def batch_forward(params: UdvParams, Xb: np.ndarray) -> np.ndarray:
    H = Xb @ params.U
    if params.w is not None:
        H = H * params.w
    return H @ params.V.T


def batch_loss(params: UdvParams, Xb: np.ndarray, Yb: np.ndarray) -> float:
    """Mean over the batch of 0.5 * ||phi(x_i) - y_i||^2."""
    Xb = np.atleast_2d(np.asarray(Xb, dtype=np.float64))
    Yb = np.atleast_2d(np.asarray(Yb, dtype=np.float64))
    if Xb.shape[0] == 0:
        raise ValueError("empty batch")
    R = batch_forward(params, Xb) - Yb
    return 0.5 * float(np.sum(R * R)) / Xb.shape[0]


def param_grads(params: UdvParams, Xb: np.ndarray, Yb: np.ndarray):
    """Analytic gradients (dU, dw, dV) of batch_loss; dw is None for uv."""
    Xb = np.atleast_2d(np.asarray(Xb, dtype=np.float64))
    Yb = np.atleast_2d(np.asarray(Yb, dtype=np.float64))
    if Xb.shape[0] == 0:
        raise ValueError("empty batch")
    nb = Xb.shape[0]
    XU = Xb @ params.U                                   # b x m
    H = XU * params.w if params.w is not None else XU
    R = H @ params.V.T - Yb                              # b x c
    RV = R @ params.V                                    # b x m
    if params.w is None:
        dU = Xb.T @ RV / nb
        dV = R.T @ XU / nb
        return dU, None, dV
    dU = Xb.T @ (RV * params.w) / nb
    dV = R.T @ (XU * params.w) / nb
    dw = np.einsum("bj,bj->j", RV, XU) / nb
    return dU, dw, dV


def apply_constraints(params: UdvParams, variant: str | None = None) -> UdvParams:
    """Project parameters onto the variant's feasible set (in place on copies)."""
    variant = variant or params.variant
    if variant == UV:
        return params
    U, V, w = params.U, params.V, params.w
    if variant in (UDV, UDV_S):
        U = project_fro_ball(U, 1.0)
        V = project_fro_ball(V, 1.0)
    else:
        U = _clip_columns(U)
        V = _clip_columns(V)
    if variant in (UDV, UDV_V1):
        w = project_diag_nonneg(w)
    return UdvParams(U, V, w, variant)


def _clip_columns(M: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(M, axis=0)
    scale = np.where(norms > 1.0, np.where(norms > 0, 1.0 / np.maximum(norms, 1e-300), 1.0), 1.0)
    return M * scale


def check_constraints(params: UdvParams, tol: float = 1e-9) -> None:
    """Raise if the variant's post-projection invariants are violated."""
    v = params.variant
    if v == UV:
        return
    if v in (UDV, UDV_S):
        if np.linalg.norm(params.U) > 1.0 + tol:
            raise AssertionError("||U||_F exceeds 1")
        if np.linalg.norm(params.V) > 1.0 + tol:
            raise AssertionError("||V||_F exceeds 1")
    else:
        if np.any(np.linalg.norm(params.U, axis=0) > 1.0 + tol):
            raise AssertionError("a column of U exceeds unit norm")
        if np.any(np.linalg.norm(params.V, axis=0) > 1.0 + tol):
            raise AssertionError("a column of V exceeds unit norm")
    if v in (UDV, UDV_V1) and np.any(params.w < -tol):
        raise AssertionError("negative diagonal weight")


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = std * rng.standard_normal(shape)
    bad = np.abs(out) > 2.0 * std
    while np.any(bad):
        out[bad] = std * rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def init_params(d: int, c: int, m: int, variant: str, rng: np.random.Generator) -> UdvParams:
    U = _truncated_normal(rng, (d, m), INIT_STD)
    V = _truncated_normal(rng, (c, m), INIT_STD)
    w = None if variant == UV else np.ones(m)
    return apply_constraints(UdvParams(U, V, w, variant))


class DivergedError(RuntimeError):
    """Training loss became non-finite."""


def train(dataset: RegressionDataset, config: TrainConfig, m: int | None = None):
    """Train on the dataset's split; returns (params, list of EpochRecord)."""
    config.validate()
    d = dataset.X.shape[1]
    c = dataset.Y.shape[1]
    if m is None:
        m = hidden_width(d, c)
    rng = np.random.default_rng(config.seed)
    params = init_params(d, c, m, config.variant, rng)

    vel_U = np.zeros_like(params.U)
    vel_V = np.zeros_like(params.V)
    vel_w = None if params.w is None else np.zeros_like(params.w)

    Xtr, Ytr = dataset.X_train, dataset.Y_train
    n_train = Xtr.shape[0]
    trace: list[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_train)
        for start in range(0, n_train, config.batch_size):
            batch = order[start : start + config.batch_size]
            dU, dw, dV = param_grads(params, Xtr[batch], Ytr[batch])
            vel_U = config.momentum * vel_U + dU
            vel_V = config.momentum * vel_V + dV
            U = params.U - config.lr * vel_U
            V = params.V - config.lr * vel_V
            w = params.w
            if w is not None:
                vel_w = config.momentum * vel_w + dw
                w = w - config.lr * vel_w
            params = apply_constraints(UdvParams(U, V, w, config.variant))
        train_loss = batch_loss(params, Xtr, Ytr)
        test_loss = batch_loss(params, dataset.X_test, dataset.Y_test)
        if not (np.isfinite(train_loss) and np.isfinite(test_loss)):
            raise DivergedError(f"non-finite loss at epoch {epoch}")
        check_constraints(params)
        svals = np.linalg.svd(params.middle(), compute_uv=False)
        trace.append(EpochRecord(epoch, train_loss, test_loss, svals))
    return params, trace


def svd_prune(
    params: UdvParams, keep_rank: int | None = None, keep_energy: float | None = None
) -> UdvParams:
    """Truncate the SVD of U diag(w) and reassign the layer weights.

    Exactly one of keep_rank / keep_energy must be given. In energy mode the
    retained rank is the smallest r whose leading squared singular values
    reach the requested fraction of the total.
    """
    if (keep_rank is None) == (keep_energy is None):
        raise ValueError("specify exactly one of keep_rank or keep_energy")
    m = params.hidden_width
    P = params.middle()                       # d x m
    Um, S, Vmt = np.linalg.svd(P, full_matrices=False)
    if keep_energy is not None:
        if not (0.0 < keep_energy <= 1.0):
            raise ValueError("keep_energy must be in (0, 1]")
        energy = np.cumsum(S**2)
        total = energy[-1]
        if total == 0.0:
            r = 1
        else:
            r = int(np.searchsorted(energy, keep_energy * total) + 1)
        r = min(r, m)
    else:
        r = keep_rank
        if not (1 <= r <= m):
            raise ValueError(f"keep_rank must be in [1, {m}]")
    if params.w is None:
        # fold the singular values into U to stay in two-layer form
        U_new = Um[:, :r] * S[:r]
        V_new = params.V @ Vmt[:r].T
        return UdvParams(U_new, V_new, None, UV)
    U_new = Um[:, :r]
    w_new = S[:r].copy()
    V_new = params.V @ Vmt[:r].T
    return UdvParams(U_new, V_new, w_new, params.variant)


def make_regression(
    d: int, c: int, n: int, r_gen: int, noise: float = 0.01, seed: int = 0
) -> RegressionDataset:
    """Synthetic low-rank linear regression with an 80/20 split.

    Y = X W + eps where W = A B^T / sqrt(d * r_gen) has rank r_gen; the
    scaling keeps target entries at unit order.
    """
    if not (1 <= r_gen <= min(d, c)):
        raise ValueError(f"r_gen must be in [1, {min(d, c)}]")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    A = rng.standard_normal((d, r_gen))
    B = rng.standard_normal((c, r_gen))
    W = A @ B.T / math.sqrt(d * r_gen)
    Y = X @ W
    if noise > 0:
        Y = Y + noise * rng.standard_normal(Y.shape)
    perm = rng.permutation(n)
    n_train = int(round(0.8 * n))
    return RegressionDataset(
        X=X,
        Y=Y,
        train_idx=perm[:n_train],
        test_idx=perm[n_train:],
        r_gen=r_gen,
        noise=noise,
    )
