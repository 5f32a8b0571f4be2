"""Self-verification suites: a pristine build passes everything, an injected
mask-builder mutation is caught, and reports are deterministic per seed."""

import dataclasses

import numpy as np

from vminet import masks
from vminet.verify import SuiteResult, run_verify_suite

TRIALS = 24  # keeps the full sweep under a couple of seconds

SUITE_NAMES = [
    "oracle-matrix",
    "oracle-recurrent",
    "context-identity",
    "expansion-identities",
    "rank",
    "masks",
    "gradients",
    "determinism",
]


def run(seed=0, trials=TRIALS):
    lines = []
    results = run_verify_suite(seed=seed, trials=trials, printer=lines.append)
    return results, lines


def test_pristine_build_passes_every_suite():
    results, lines = run()
    assert [r.name for r in results] == SUITE_NAMES
    assert all(r.passed for r in results), [r.failures[:1] for r in results if not r.passed]
    for line, r in zip(lines, results):
        assert line == f"[PASS] {r.name}: {r.checks}/{r.checks} checks"


def test_reports_are_deterministic_per_seed():
    _, first = run(seed=1)
    _, second = run(seed=1)
    assert first == second


def test_trial_counts_scale_with_flag():
    results, _ = run(trials=48)
    by_name = {r.name: r for r in results}
    assert by_name["oracle-matrix"].checks == 24
    assert by_name["rank"].checks == 96
    assert by_name["masks"].checks == 24
    assert by_name["gradients"].checks == 9  # eight ops + the full block


def test_mutated_mask_builder_is_caught(monkeypatch):
    pristine = masks.build_mask

    def off_by_one(kind, L, D, **kwargs):
        built = pristine(kind, L, D, **kwargs)
        if kind != "lower_triangular":
            return built
        shifted = np.zeros_like(built.matrix)
        shifted[1:] = built.matrix[:-1]  # selection starts one token late
        shifted[:, 0] = 1.0  # keep rows nonzero so only values differ
        return dataclasses.replace(built, matrix=shifted)

    monkeypatch.setattr(masks, "build_mask", off_by_one)
    results, lines = run()
    by_name = {r.name: r for r in results}
    assert not by_name["masks"].passed
    fail_lines = [line for line in lines if line.startswith("[FAIL] masks:")]
    assert len(fail_lines) == 1 and "first failure:" in fail_lines[0]


def test_suite_result_passed_property():
    assert SuiteResult("ok", 5).passed
    assert not SuiteResult("bad", 5, failures=["x"]).passed
