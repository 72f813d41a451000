import functools
import time

import pytest

from preferdiff.config import parse_config
from preferdiff.pipeline import synthetic_run

# shared setting for the seed-majority synthetic experiments; see README "Acceptance"
EXPERIMENT = {"lr": "1e-3", "epochs": "50", "batch_size": "64", "negatives": "8", "dim": "64",
              "n_users": "2000", "n_items": "200", "n_clusters": "8", "noise": "0.2"}
SEEDS = (0, 1, 2)

_verdicts: list[tuple[int, bool, str]] = []


@functools.lru_cache(maxsize=None)
def synthetic(seed: int, lam: float, measure: str, init_scale: float = 1.0):
    """Cached full synthetic run, shared by every test that needs the same arm."""
    overrides = dict(EXPERIMENT, seed=str(seed), init_scale=repr(init_scale), measure=measure)
    overrides["lambda"] = repr(lam)
    start = time.perf_counter()
    run = synthetic_run(parse_config(None, overrides, env={}))
    run.seconds = time.perf_counter() - start
    return run


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the summary prints them in order."""
    def record(number: int, ok: bool, detail: str = ""):
        _verdicts.append((number, bool(ok), detail))
        print(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_verdicts):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
