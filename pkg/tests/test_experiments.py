"""The shipped experiment specs must validate and run end to end."""

import json
from pathlib import Path

import pytest

from udufact import cli

SPEC_DIR = Path(__file__).resolve().parent.parent / "experiments"
SPECS = sorted(SPEC_DIR.glob("*.json"))
FAST_ITERS = {"completion_full_scale.json": 10}


def test_specs_exist():
    assert len(SPECS) >= 6


@pytest.mark.parametrize("path", SPECS, ids=lambda p: p.name)
def test_spec_validates(path):
    _, errors = cli.validate_spec(path.read_text())
    assert errors == []


@pytest.mark.parametrize("path", SPECS, ids=lambda p: p.name)
def test_spec_smoke_runs(path, tmp_path):
    # run each spec with a tiny iteration budget; artifacts must appear
    spec, _ = cli.validate_spec(path.read_text())
    iters = FAST_ITERS.get(path.name, 20)
    if spec["kind"] == "sweep":
        base = spec["base"]
        if base["kind"] in ("udv-train", "udv-prune"):
            base.setdefault("train", {})["epochs"] = 2
        else:
            base.setdefault("solver", {})["iters"] = iters
            base["solver"]["log_every"] = max(1, iters)
    elif spec["kind"] in ("udv-train", "udv-prune"):
        spec.setdefault("train", {})["epochs"] = 2
    else:
        spec.setdefault("solver", {})["iters"] = iters
        spec["solver"]["log_every"] = max(1, iters)
    summary = cli.run_experiment(spec, tmp_path / "out")
    assert (tmp_path / "out" / "summary.json").exists()
    payload = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert payload["kind"] == spec["kind"]
    if spec["kind"] == "sweep":
        for label in summary["runs"]:
            assert (tmp_path / "out" / label / "trace.csv").exists()
