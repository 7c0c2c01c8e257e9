"""Experiment runner CLI.

Subcommands:

  udufact run <spec.json> [--out DIR] [--seed N] [--iters N]
  udufact validate <spec.json>
  udufact spectrum <state-file>

Experiment specs are JSON files; see README for the schema. Each run
writes trace.csv, spectrum.csv, state/params dumps and a summary.json
into the output directory, deterministically for a given spec. Exit
codes: 0 = ran (including studied divergence), 1 = spec error,
2 = numeric fatal.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import linops, problem_gen, spectra, udv
from .solvers import (
    NumericError,
    SolverConfig,
    reconstruct,
    run_solver,
    state_from_json,
    state_to_json,
    trace_header,
    trace_rows,
    working_gradient,
    working_state,
)

KINDS = ("completion", "completion-noisy", "phase", "udv-train", "udv-prune", "sweep")

SOLVER_DEFAULTS = {
    "kind": "udu",
    "rank": None,
    "eta": 1e-2,
    "iters": 100_000,
    "init_scale": 1e-2,
    "alpha": 1.0,
    "log_every": 1000,
    "top_k": 10,
    "normalize": None,  # default depends on kind: True for completion, False for phase
}
TRAIN_DEFAULTS = {"lr": 0.05, "momentum": 0.0, "batch_size": 32, "epochs": 100}
SWEEP_AXES = ("eta", "init_scale", "lr", "solver")


# ---------------------------------------------------------------------------
# spec validation


def _check_block(block, name, fields, errors, required=()):
    """Validate one nested config block against (field -> predicate, message)."""
    if not isinstance(block, dict):
        errors.append(f"{name} must be an object")
        return {}
    for key in block:
        if key not in fields:
            errors.append(f"unknown key '{name}.{key}'")
    for key in required:
        if key not in block:
            errors.append(f"missing required key '{name}.{key}'")
    for key, (pred, message) in fields.items():
        if key in block and not pred(block[key]):
            errors.append(f"{name}.{key} {message}")
    return block


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _pos(x):
    return _is_num(x) and x > 0


def _nonneg(x):
    return _is_num(x) and x >= 0


def _posint(x):
    return isinstance(x, int) and not isinstance(x, bool) and x >= 1


def _nonnegint(x):
    return isinstance(x, int) and not isinstance(x, bool) and x >= 0


SOLVER_FIELDS = {
    "kind": (lambda x: x in ("udu", "bm"), "must be 'udu' or 'bm'"),
    "rank": (lambda x: x is None or _posint(x), "must be a positive integer"),
    "eta": (lambda x: x == "auto" or _pos(x), "must be > 0 (or 'auto' for phase)"),
    "iters": (_nonnegint, "must be an integer >= 0"),
    "init_scale": (_pos, "must be > 0"),
    "alpha": (_pos, "must be > 0"),
    "log_every": (_posint, "must be a positive integer"),
    "top_k": (_posint, "must be a positive integer"),
    "seed": (_nonnegint, "must be an integer >= 0"),
    "normalize": (lambda x: isinstance(x, bool), "must be a boolean"),
}


def validate_spec(raw: str):
    """Parse and validate a JSON spec; returns (spec dict, list of errors).

    All violations are collected, not just the first one.
    """
    errors: list[str] = []
    try:
        spec = json.loads(raw)
    except json.JSONDecodeError as exc:
        return None, [f"malformed JSON: {exc}"]
    if not isinstance(spec, dict):
        return None, ["spec must be a JSON object"]

    kind = spec.get("kind")
    if kind not in KINDS:
        errors.append(f"kind must be one of {list(KINDS)}, got {kind!r}")
        return spec, errors

    allowed = {"kind", "seed", "output_dir"}
    if kind in ("completion", "completion-noisy", "phase"):
        allowed |= {"problem", "solver"}
    if kind == "completion-noisy":
        allowed |= {"noise"}
    if kind in ("udv-train", "udv-prune"):
        allowed |= {"data", "model", "train"}
    if kind == "udv-prune":
        allowed |= {"prune"}
    if kind == "sweep":
        allowed |= {"base", "sweep"}
    for key in spec:
        if key not in allowed:
            errors.append(f"unknown key '{key}'")
    if "seed" in spec and not _nonnegint(spec["seed"]):
        errors.append("seed must be an integer >= 0")
    if "output_dir" in spec and not isinstance(spec["output_dir"], str):
        errors.append("output_dir must be a string")

    if kind in ("completion", "completion-noisy"):
        _check_block(
            spec.get("problem", {}),
            "problem",
            {
                "d": (_posint, "must be a positive integer"),
                "r_true": (_posint, "must be a positive integer"),
                "n": (_posint, "must be a positive integer"),
                "seed": (_nonnegint, "must be an integer >= 0"),
            },
            errors,
            required=("d", "r_true", "n"),
        )
        prob = spec.get("problem", {})
        if isinstance(prob, dict) and _posint(prob.get("d")) and _posint(prob.get("n")):
            if prob["n"] > prob["d"] ** 2:
                errors.append("problem.n must be <= d^2")
        if (
            isinstance(prob, dict)
            and _posint(prob.get("d"))
            and _posint(prob.get("r_true"))
            and prob["r_true"] > prob["d"]
        ):
            errors.append("problem.r_true must be <= d")
    if kind == "completion-noisy":
        _check_block(
            spec.get("noise", {}),
            "noise",
            {
                "sigma_rel": (_nonneg, "must be >= 0"),
                "seed": (_nonnegint, "must be an integer >= 0"),
            },
            errors,
            required=("sigma_rel",),
        )
    if kind == "phase":
        _check_block(
            spec.get("problem", {}),
            "problem",
            {
                "d": (_posint, "must be a positive integer"),
                "oversample": (_pos, "must be > 0"),
                "seed": (_nonnegint, "must be an integer >= 0"),
                "signal_csv": (lambda x: isinstance(x, str), "must be a path string"),
            },
            errors,
            required=("d",),
        )
    if kind in ("completion", "completion-noisy", "phase"):
        solver = _check_block(spec.get("solver", {}), "solver", SOLVER_FIELDS, errors)
        if kind != "phase" and solver.get("eta") == "auto":
            errors.append("solver.eta 'auto' is only supported for phase specs")

    if kind in ("udv-train", "udv-prune"):
        _check_block(
            spec.get("data", {}),
            "data",
            {
                "d": (_posint, "must be a positive integer"),
                "c": (_posint, "must be a positive integer"),
                "n": (_posint, "must be a positive integer"),
                "r_gen": (_posint, "must be a positive integer"),
                "noise": (_nonneg, "must be >= 0"),
                "seed": (_nonnegint, "must be an integer >= 0"),
            },
            errors,
            required=("d", "c", "n", "r_gen"),
        )
        _check_block(
            spec.get("model", {}),
            "model",
            {
                "m": (lambda x: x is None or _posint(x), "must be a positive integer"),
                "variant": (lambda x: x in udv.VARIANTS, f"must be one of {list(udv.VARIANTS)}"),
            },
            errors,
        )
        _check_block(
            spec.get("train", {}),
            "train",
            {
                "lr": (_pos, "must be > 0"),
                "momentum": (lambda x: _is_num(x) and 0 <= x < 1, "must be in [0, 1)"),
                "batch_size": (_posint, "must be a positive integer"),
                "epochs": (_nonnegint, "must be an integer >= 0"),
                "seed": (_nonnegint, "must be an integer >= 0"),
            },
            errors,
        )
    if kind == "udv-prune":
        prune = _check_block(
            spec.get("prune", {}),
            "prune",
            {
                "keep_rank": (_posint, "must be a positive integer"),
                "keep_energy": (lambda x: _is_num(x) and 0 < x <= 1, "must be in (0, 1]"),
            },
            errors,
        )
        if isinstance(prune, dict) and ("keep_rank" in prune) == ("keep_energy" in prune):
            errors.append("prune needs exactly one of keep_rank or keep_energy")

    if kind == "sweep":
        base = spec.get("base")
        if not isinstance(base, dict):
            errors.append("sweep spec needs a 'base' object")
        else:
            if base.get("kind") == "sweep":
                errors.append("base.kind may not be 'sweep'")
            else:
                _, base_errors = validate_spec(json.dumps(base))
                errors.extend(f"base: {e}" for e in base_errors)
        axes = spec.get("sweep")
        if not isinstance(axes, dict) or not axes:
            errors.append("sweep spec needs a non-empty 'sweep' object of axis lists")
        else:
            for axis, values in axes.items():
                if axis not in SWEEP_AXES:
                    errors.append(f"unknown sweep axis '{axis}' (allowed: {list(SWEEP_AXES)})")
                    continue
                if not isinstance(values, list) or not values:
                    errors.append(f"sweep.{axis} must be a non-empty list")
                    continue
                if axis == "solver":
                    if not all(v in ("udu", "bm") for v in values):
                        errors.append("sweep.solver values must be 'udu' or 'bm'")
                elif not all(_pos(v) for v in values):
                    errors.append(f"sweep.{axis} values must be > 0")

    return spec, errors


# ---------------------------------------------------------------------------
# running


def spec_hash(spec: dict) -> str:
    return hashlib.sha256(
        json.dumps(spec, sort_keys=True).encode("utf-8")
    ).hexdigest()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(x) if isinstance(x, float) else str(x) for x in row))
    _write(path, "\n".join(lines) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    _write(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _solver_config(spec: dict, op=None) -> SolverConfig:
    block = dict(SOLVER_DEFAULTS)
    block.update(spec.get("solver", {}))
    eta = block["eta"]
    if eta == "auto":
        eta = 1.0 / linops.operator_norm(op)
    normalize = block["normalize"]
    if normalize is None:
        normalize = spec["kind"] != "phase"
    return SolverConfig(
        normalize=normalize,
        eta=eta,
        iters=block["iters"],
        init_scale=block["init_scale"],
        seed=block.get("seed", spec.get("seed", 0)),
        solver=block["kind"],
        log_every=block["log_every"],
        rank=block["rank"],
        alpha=block["alpha"],
        top_k=block["top_k"],
    )


def _matrix_run(spec: dict, out_dir: Path) -> dict:
    kind = spec["kind"]
    seed = spec.get("seed", 0)
    prob = spec["problem"]
    prob_seed = prob.get("seed", seed)

    x_true = None
    x_signal = None
    if kind in ("completion", "completion-noisy"):
        inst = problem_gen.gen_completion(prob["d"], prob["r_true"], prob["n"], prob_seed)
        op, b, x_true = inst.op, inst.b, inst.x_true
        if kind == "completion-noisy":
            noise = spec["noise"]
            b = problem_gen.perturb_noise(
                b, noise["sigma_rel"], noise.get("seed", seed + 1)
            )
    else:
        signal = None
        if "signal_csv" in prob:
            signal = problem_gen.load_signal_csv(prob["signal_csv"])
        inst = problem_gen.gen_phase_retrieval(
            prob["d"], prob.get("oversample", 2.0), prob_seed, signal=signal
        )
        op, b, x_signal = inst.op, inst.b, inst.x_signal

    config = _solver_config(spec, op=op)
    state, trace = run_solver(op, b, config)
    X = reconstruct(state)
    svals = spectra.singular_values(X)
    G_work = working_gradient(op, b, state)
    report = spectra.fixed_point_report(working_state(state), G_work, config.eta)

    _write_csv(out_dir / "trace.csv", trace_header(config.top_k), trace_rows(trace, config.top_k))
    _write(out_dir / "spectrum.csv", spectra.spectrum_csv(svals))
    _write(out_dir / "state.json", state_to_json(state) + "\n")

    summary = {
        "kind": kind,
        "eta": config.eta,
        "diverged": any(rec.warning is not None for rec in trace),
        "final_objective": trace[-1].objective,
        "numerical_rank": spectra.numerical_rank(svals, 1e-6),
        "top_singular_values": svals[: config.top_k].tolist(),
        "fixed_point": json.loads(report.to_json()),
        "recovery_rel_error": None,
        "signal_correlation": None,
    }
    if x_true is not None:
        summary["recovery_rel_error"] = float(
            np.linalg.norm(X - x_true) / np.linalg.norm(x_true)
        )
    if x_signal is not None:
        x_hat = problem_gen.extract_signal(X)
        summary["signal_correlation"] = problem_gen.signal_correlation(x_hat, x_signal)
    return summary


def _udv_run(spec: dict, out_dir: Path) -> dict:
    seed = spec.get("seed", 0)
    data = spec["data"]
    dataset = udv.make_regression(
        data["d"],
        data["c"],
        data["n"],
        data["r_gen"],
        noise=data.get("noise", 0.01),
        seed=data.get("seed", seed),
    )
    model = spec.get("model", {})
    train_block = dict(TRAIN_DEFAULTS)
    train_block.update(spec.get("train", {}))
    config = udv.TrainConfig(
        lr=train_block["lr"],
        momentum=train_block["momentum"],
        batch_size=train_block["batch_size"],
        epochs=train_block["epochs"],
        seed=train_block.get("seed", seed),
        variant=model.get("variant", udv.UDV),
    )
    diverged = False
    try:
        params, trace = udv.train(dataset, config, m=model.get("m"))
    except udv.DivergedError:
        _write_json(out_dir / "summary.json", {"kind": spec["kind"], "diverged": True})
        return {"kind": spec["kind"], "diverged": True}

    k = min(10, params.hidden_width)
    header = ["epoch", "train_loss", "test_loss"] + [f"sv_{i}" for i in range(1, k + 1)]
    rows = [
        [rec.epoch, rec.train_loss, rec.test_loss] + rec.svals[:k].tolist()
        for rec in trace
    ]
    _write_csv(out_dir / "trace.csv", header, rows)
    _write(out_dir / "params.json", params.to_json() + "\n")

    svals = np.linalg.svd(params.middle(), compute_uv=False)
    summary = {
        "kind": spec["kind"],
        "variant": config.variant,
        "diverged": diverged,
        "final_train_loss": trace[-1].train_loss if trace else None,
        "final_test_loss": trace[-1].test_loss if trace else None,
        "top_singular_values": svals[:k].tolist(),
    }
    if spec["kind"] == "udv-prune":
        prune = spec["prune"]
        pruned = udv.svd_prune(
            params,
            keep_rank=prune.get("keep_rank"),
            keep_energy=prune.get("keep_energy"),
        )
        _write(out_dir / "params_pruned.json", pruned.to_json() + "\n")
        summary["pruned_width"] = pruned.hidden_width
        summary["pruned_test_loss"] = udv.batch_loss(
            pruned, dataset.X_test, dataset.Y_test
        )
    return summary


def _axis_value(spec: dict, axis: str, value):
    spec = json.loads(json.dumps(spec))  # deep copy
    if axis in ("eta", "init_scale"):
        spec.setdefault("solver", {})[axis] = value
    elif axis == "solver":
        spec.setdefault("solver", {})["kind"] = value
    elif axis == "lr":
        spec.setdefault("train", {})["lr"] = value
    return spec


def _sweep_points(spec: dict):
    axes = sorted(spec["sweep"].items())
    names = [a for a, _ in axes]
    for combo in itertools.product(*(vals for _, vals in axes)):
        point = json.loads(json.dumps(spec["base"]))
        label_parts = []
        for axis, value in zip(names, combo):
            point = _axis_value(point, axis, value)
            label_parts.append(f"{axis}={value}")
        yield "__".join(label_parts), point


def _run_point(args):
    label, point, out_dir_str = args
    out_dir = Path(out_dir_str)
    summary = _dispatch(point, out_dir)
    _write_json(out_dir / "summary.json", summary)
    return label, summary


def _dispatch(spec: dict, out_dir: Path) -> dict:
    if spec["kind"] in ("completion", "completion-noisy", "phase"):
        return _matrix_run(spec, out_dir)
    return _udv_run(spec, out_dir)


def run_experiment(spec: dict, out_dir: Path) -> dict:
    """Execute a validated spec; writes artifacts under out_dir, returns summary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    if spec["kind"] == "sweep":
        points = list(_sweep_points(spec))
        jobs = [(label, point, str(out_dir / label)) for label, point in points]
        workers = int(os.environ.get("UDUFACT_THREADS", "1"))
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_run_point, jobs))
        else:
            results = [_run_point(job) for job in jobs]
        summary = {
            "kind": "sweep",
            "spec_hash": spec_hash(spec),
            "runs": {label: summ for label, summ in sorted(results)},
        }
    else:
        summary = _dispatch(spec, out_dir)
        summary["spec_hash"] = spec_hash(spec)
    _write_json(out_dir / "summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# entry point


def _cmd_run(args) -> int:
    raw = Path(args.spec).read_text()
    spec, errors = validate_spec(raw)
    if args.seed is not None:
        spec = dict(spec or {})
        spec["seed"] = args.seed
    if args.iters is not None and spec is not None:
        if spec.get("kind") in ("udv-train", "udv-prune"):
            spec.setdefault("train", {})["epochs"] = args.iters
        elif spec.get("kind") == "sweep":
            base = spec.get("base")
            if isinstance(base, dict):
                if base.get("kind") in ("udv-train", "udv-prune"):
                    base.setdefault("train", {})["epochs"] = args.iters
                else:
                    base.setdefault("solver", {})["iters"] = args.iters
        else:
            spec.setdefault("solver", {})["iters"] = args.iters
        _, errors = validate_spec(json.dumps(spec))
    if errors:
        print(json.dumps({"errors": errors}), file=sys.stderr)
        return 1
    out_dir = Path(args.out) if args.out else Path(spec.get("output_dir", "out"))
    try:
        summary = run_experiment(spec, out_dir)
    except NumericError as exc:
        print(json.dumps({"errors": [str(exc)]}), file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_validate(args) -> int:
    _, errors = validate_spec(Path(args.spec).read_text())
    if errors:
        print(json.dumps({"errors": errors}), file=sys.stderr)
        return 1
    print("ok")
    return 0


def _cmd_spectrum(args) -> int:
    state = state_from_json(Path(args.state).read_text())
    svals = spectra.singular_values(reconstruct(state))
    sys.stdout.write(spectra.spectrum_csv(svals))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="udufact", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment spec")
    p_run.add_argument("spec")
    p_run.add_argument("--out", default=None, help="output directory override")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--iters", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="validate a spec file")
    p_val.add_argument("spec")
    p_val.set_defaults(func=_cmd_validate)

    p_spec = sub.add_parser("spectrum", help="print the spectrum of a saved state")
    p_spec.add_argument("state")
    p_spec.set_defaults(func=_cmd_spectrum)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
