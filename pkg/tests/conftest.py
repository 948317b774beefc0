import os
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, os.path.dirname(__file__))

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG = ROOT / "configs" / "default.yaml"


def run_pipeline(out):
    """Full default pipeline through the CLI; returns (exit code, stdout, seconds)."""
    import contextlib
    import io

    from egosynth.cli import main

    buf = io.StringIO()
    t0 = time.perf_counter()
    with contextlib.redirect_stdout(buf):
        code = main(["run", "--config", str(DEFAULT_CONFIG), "--out", str(out), "--assert-orderings"])
    return code, buf.getvalue(), time.perf_counter() - t0


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory):
    """The shipped config run end to end once per session."""
    out = tmp_path_factory.mktemp("reference") / "run"
    code, stdout, seconds = run_pipeline(out)
    return {"out": out, "code": code, "stdout": stdout, "seconds": seconds}


@pytest.fixture(scope="session")
def reference_dataset(reference_run):
    from egosynth import simcourt as sc

    return sc.load_sequences(reference_run["out"] / "data")


@pytest.fixture(scope="session")
def reference_pipeline(reference_run, reference_dataset):
    """Replicate-0 trained components of the reference run."""
    from egosynth import evaluation as ev
    from egosynth import models as m

    d = reference_run["out"] / "models" / "rep0"
    parts = {r: m.load_model(d / f"{r}.json", expect_role=r) for r in ("ego", "future", "verifier", "recurrent")}
    return ev.Pipeline(parts["ego"], parts["future"], parts["verifier"], parts["recurrent"], 0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if not mod or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
