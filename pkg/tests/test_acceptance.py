"""Acceptance suite: one pass/fail line per criterion.

Run ``python tests/test_acceptance.py`` for the lines alone, or pytest, which
also prints them in the terminal summary.
"""
import sys

import pytest

from conewave.acceptance import CRITERIA, run_criterion

RESULTS = {}


def _headline(rec):
    m = rec.get("measured", {})
    parts = []
    for cone, v in m.items():
        key = next((k for k in ("max", "max_error", "C", "spread_all", "spread", "max_relative_difference",
                                "convolution_difference", "deviation") if k in v), None)
        if key is not None:
            parts.append(f"{cone} {key}={v[key]:.3g}")
        elif "ladder" in v:
            parts.append(f"{cone} A2/A1=" + ",".join(f"{r['A2_over_A1']:.4f}" for r in v["ladder"]))
        elif "finest" in v:
            parts.append(f"{cone} err=" + ",".join(f"{r['final_error']:.2e}" for r in v["finest"].values()))
    if "error" in rec:
        parts.append(rec["error"])
    return "; ".join(parts)


def line(rec):
    status = {"pass": "PASS", "fail": "FAIL", "error": "FAIL", "skipped": "SKIP"}[rec["status"]]
    return f"criterion {rec['id']:2d} {status}  {rec['name']} ({rec['seconds']:.0f}s)  {_headline(rec)}"


@pytest.mark.parametrize("cid", sorted(CRITERIA))
def test_criterion(cid):
    rec = run_criterion(cid)
    RESULTS[cid] = rec
    print(line(rec))
    assert rec["status"] == "pass", rec.get("error") or rec.get("measured")


def test_suite_runtime_budget():
    # every criterion is a separate suite with a 5 minute desk budget
    slow = {cid: r["seconds"] for cid, r in RESULTS.items() if r["seconds"] > 300}
    assert not slow


if __name__ == "__main__":
    ok = True
    for cid in sorted(CRITERIA):
        rec = run_criterion(cid)
        print(line(rec), flush=True)
        ok &= rec["status"] == "pass"
    sys.exit(0 if ok else 1)
