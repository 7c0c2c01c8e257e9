"""Reproducible synthetic instance generators.

Matrix completion (noiseless and noisy) and lifted phase retrieval.
All randomness flows through numpy's PCG64 generator seeded explicitly,
so identical (dims, seed) inputs reproduce instances bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import linops


@dataclass(frozen=True)
class CompletionInstance:
    op: linops.MeasurementOp
    b: np.ndarray
    x_true: np.ndarray
    u_true: np.ndarray
    seed: int


@dataclass(frozen=True)
class PhaseInstance:
    op: linops.MeasurementOp
    b: np.ndarray
    x_signal: np.ndarray
    seed: int


def gen_completion(d: int, r_true: int, n: int, seed: int) -> CompletionInstance:
    """Low-rank PSD ground truth with n observed entries.

    The factor has i.i.d. standard-normal entries; the n observed positions
    are sampled uniformly without replacement over the full d x d grid.
    """
    if not (1 <= r_true <= d):
        raise ValueError(f"r_true must be in [1, {d}]")
    if not (1 <= n <= d * d):
        raise ValueError(f"n must be in [1, {d * d}]")
    rng = np.random.default_rng(seed)
    u_true = rng.standard_normal((d, r_true))
    x_true = u_true @ u_true.T
    flat = rng.choice(d * d, size=n, replace=False)
    indices = tuple((int(k) // d, int(k) % d) for k in flat)
    op = linops.entry_mask_op(d, indices)
    b = linops.apply_op(op, x_true)
    return CompletionInstance(op=op, b=b, x_true=x_true, u_true=u_true, seed=seed)


def perturb_noise(b: np.ndarray, sigma_rel: float, seed: int) -> np.ndarray:
    """Add Gaussian noise with standard deviation sigma_rel * ||b||_2."""
    if sigma_rel < 0:
        raise ValueError("sigma_rel must be >= 0")
    b = np.asarray(b, dtype=np.float64)
    if sigma_rel == 0.0:
        return b.copy()
    rng = np.random.default_rng(seed)
    sigma = sigma_rel * np.linalg.norm(b)
    return b + sigma * rng.standard_normal(b.shape)


def gen_phase_retrieval(
    d: int, oversample: float, seed: int, signal: np.ndarray | None = None
) -> PhaseInstance:
    """Gaussian rank-one sensing of a real signal, b_i = (a_i^T x)^2.

    The signal defaults to a random unit vector; a caller-supplied signal
    (e.g. a flattened grayscale image) is used as-is.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if oversample <= 0:
        raise ValueError("oversample must be > 0")
    rng = np.random.default_rng(seed)
    n = max(1, round(oversample * d))
    vectors = rng.standard_normal((n, d))
    if signal is None:
        x = rng.standard_normal(d)
        x /= np.linalg.norm(x)
    else:
        x = np.asarray(signal, dtype=np.float64).ravel()
        if x.shape != (d,):
            raise ValueError(f"signal has length {x.size}, expected {d}")
    b = (vectors @ x) ** 2
    op = linops.rank_one_op(vectors)
    return PhaseInstance(op=op, b=b, x_signal=x, seed=seed)


def extract_signal(X: np.ndarray) -> np.ndarray:
    """Dominant-eigenpair signal estimate sqrt(lam_max) * v_max from a PSD lift.

    The sign is fixed so the largest-magnitude entry is nonnegative.
    """
    X = np.asarray(X, dtype=np.float64)
    X = 0.5 * (X + X.T)
    evals, evecs = np.linalg.eigh(X)
    lam_max = evals[-1]
    if lam_max < -1e-10 * max(np.linalg.norm(X), 1e-300):
        raise ValueError("matrix is not PSD: dominant eigenvalue is negative")
    lam_max = max(lam_max, 0.0)
    v = evecs[:, -1]
    pivot = np.argmax(np.abs(v))
    if v[pivot] < 0:
        v = -v
    return np.sqrt(lam_max) * v


def signal_correlation(x_hat: np.ndarray, x: np.ndarray) -> float:
    """|<x_hat, x>| / (||x_hat|| ||x||), invariant to the global sign ambiguity."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    denom = np.linalg.norm(x_hat) * np.linalg.norm(x)
    if denom == 0.0:
        return 0.0
    return float(abs(x_hat @ x) / denom)


def completion_to_json(inst: CompletionInstance) -> str:
    return json.dumps(
        {
            "type": "completion",
            "seed": inst.seed,
            "op": json.loads(inst.op.to_json()),
            "b": inst.b.tolist(),
            "x_true": inst.x_true.tolist(),
            "u_true": inst.u_true.tolist(),
        },
        sort_keys=True,
    )


def phase_to_json(inst: PhaseInstance) -> str:
    return json.dumps(
        {
            "type": "phase",
            "seed": inst.seed,
            "op": json.loads(inst.op.to_json()),
            "b": inst.b.tolist(),
            "x_signal": inst.x_signal.tolist(),
        },
        sort_keys=True,
    )


def instance_from_json(text: str):
    payload = json.loads(text)
    op = linops.MeasurementOp.from_json(json.dumps(payload["op"]))
    b = np.asarray(payload["b"], dtype=np.float64)
    if payload["type"] == "completion":
        return CompletionInstance(
            op=op,
            b=b,
            x_true=np.asarray(payload["x_true"], dtype=np.float64),
            u_true=np.asarray(payload["u_true"], dtype=np.float64),
            seed=payload["seed"],
        )
    if payload["type"] == "phase":
        return PhaseInstance(
            op=op,
            b=b,
            x_signal=np.asarray(payload["x_signal"], dtype=np.float64),
            seed=payload["seed"],
        )
    raise ValueError(f"unknown instance type: {payload['type']!r}")


def load_signal_csv(path) -> np.ndarray:
    """Load a grayscale matrix from CSV and flatten it row-major."""
    return np.loadtxt(path, delimiter=",", dtype=np.float64).ravel()
