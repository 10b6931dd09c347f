"""Acceptance suite: one test per criterion at the default master seed.

Each test prints the criterion's pass/fail line; failing rows carry their
diagnostic detail in the assertion message.
"""
from __future__ import annotations

import json

import pytest

from lrep.acceptance import CRITERIA, DEFAULT_SEED, run_criterion

SLOW = {1, 4, 5, 6, 8, 10, 11}


def _check(cid, capsys):
    row = run_criterion(cid, DEFAULT_SEED)
    with capsys.disabled():
        print("\n" + row.line())
    detail = json.dumps(row.detail, default=str)[:4000]
    assert row.passed, f"{row.line()}\n{detail}"


@pytest.mark.parametrize("cid", [pytest.param(c, marks=pytest.mark.slow) if c in SLOW else c
                                 for c in sorted(CRITERIA)], ids=lambda c: f"criterion_{c:02d}")
def test_criterion(cid, capsys):
    _check(cid, capsys)
