import numpy as np

from fedreplay.data import make_blobs, partition_class_inc_iid
from fedreplay.numkit import RngStream
from fedreplay.selftest import (
	SUITES,
	GradientCheck,
	default_gradient_checks,
	format_report,
	gradient_suite,
	partition_suite,
	partition_violations,
	run_selftest,
)


def _corrupted(check: GradientCheck) -> GradientCheck:
	return GradientCheck(
		f"{check.name}-corrupted",
		check.loss,
		lambda flat: 1.5 * check.grad(flat),
		check.size,
	)


def test_default_suites_pass():
	results = run_selftest()
	assert len(results) >= 4
	assert [r.name for r in results] == list(SUITES)
	failed = [(r.name, r.detail) for r in results if not r.passed]
	assert failed == []


def test_gradient_suite_covers_every_component(rng):
	passed, detail = gradient_suite(rng)
	assert passed
	for name in ("classifier", "diffusion", "fedprox", "ewc", "lwf"):
		assert name in detail


def test_corrupted_gradient_fails(rng):
	checks = default_gradient_checks(rng.split(0))
	passed, detail = gradient_suite(rng, checks=[_corrupted(checks[0])])
	assert not passed
	assert "classifier-corrupted" in detail


def test_corrupted_gradient_fails_the_report():
	def corrupted_suite(rng: RngStream) -> tuple[bool, str]:
		checks = default_gradient_checks(rng.split(0))
		return gradient_suite(rng, checks=[_corrupted(c) for c in checks])

	results = run_selftest({"gradients": corrupted_suite}, seed=3)
	assert [r.passed for r in results] == [False]


def test_raising_suite_counts_as_failure():
	def broken(rng: RngStream) -> tuple[bool, str]:
		raise RuntimeError("kaput")

	results = run_selftest({"ok": lambda rng: (True, "fine"), "broken": broken})
	assert [(r.name, r.passed) for r in results] == [("ok", True), ("broken", False)]
	assert "RuntimeError: kaput" in results[1].detail


def test_partition_suite_small(rng):
	passed, detail = partition_suite(rng, cases=20)
	assert passed, detail


def test_partition_violations_detect_overlap():
	data = make_blobs(4, 1, 10, 2, 3.0, 0.0, RngStream(0))
	schedule = partition_class_inc_iid(data, 2, 2, 2, RngStream(1))
	assert partition_violations(schedule, data) == []

	shared = schedule.indices(0, 0)
	broken = type(schedule)(
		schedule.scenario,
		schedule.num_clients,
		schedule.num_sessions,
		schedule.rounds_per_session,
		{**schedule.assignment, (1, 1): np.concatenate([shared, shared[:1]])},
	)
	assert "an index is assigned twice" in partition_violations(broken, data)


def test_report_lists_every_suite():
	suites = {"a": lambda rng: (True, "x"), "bb": lambda rng: (False, "y")}
	results = run_selftest(suites)
	lines = format_report(results).splitlines()
	assert len(lines) == 3
	assert "PASS" in lines[1] and "FAIL" in lines[2]
