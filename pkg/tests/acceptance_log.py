"""Outcome registry for the acceptance gate, printed by ``conftest.py`` after the run."""

from __future__ import annotations

import time
from contextlib import contextmanager

RESULTS: dict = {}


@contextmanager
def criterion(number: int, title: str, budget: float, expected_failure: bool = False):
    """Record pass/fail and wall time of one criterion; the body raises on failure.

    The wall-time budget is asserted after the body succeeds.
    """
    t0 = time.perf_counter()
    RESULTS[number] = {"title": title, "status": "FAIL", "seconds": None, "note": "", "xfail": expected_failure}
    try:
        yield RESULTS[number]
    except BaseException as exc:
        RESULTS[number]["seconds"] = time.perf_counter() - t0
        RESULTS[number]["note"] = RESULTS[number]["note"] or f"{type(exc).__name__}: {exc}".splitlines()[0][:160]
        raise
    elapsed = time.perf_counter() - t0
    RESULTS[number]["seconds"] = elapsed
    if elapsed > budget:
        RESULTS[number]["note"] = f"over budget: {elapsed:.1f}s > {budget:.0f}s"
        raise AssertionError(RESULTS[number]["note"])
    RESULTS[number]["status"] = "PASS"


def summary_lines() -> list:
    lines = []
    for k in sorted(RESULTS):
        r = RESULTS[k]
        status = r["status"]
        if r["xfail"] and status == "FAIL":
            status = "FAIL (expected, xfail strict)"
        secs = "" if r["seconds"] is None else f" [{r['seconds']:.1f}s]"
        note = f" - {r['note']}" if r["note"] else ""
        lines.append(f"criterion {k:2d} {status}: {r['title']}{secs}{note}")
    return lines
