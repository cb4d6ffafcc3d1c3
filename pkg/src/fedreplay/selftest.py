"""Named self-test suites: KL bound, gradients, forward law and partitions.

Each suite takes a random stream and returns whether it passed with a one-line
detail. `run_selftest` runs a registry of suites and never raises; a suite that
throws counts as failed.
"""

import logging
import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np

from fedreplay.data import (
	ClientSchedule,
	Dataset,
	Scenario,
	make_blobs,
	partition_class_inc_iid,
	partition_class_inc_noniid,
	partition_domain_inc,
)
from fedreplay.diffusion import (
	NoiseSchedule,
	diffusion_loss_grad_fixed,
	forward_kernel_step,
	forward_sample,
	make_linear_schedule,
)
from fedreplay.flcore.methods import (
	DistillationPenalty,
	EwcPenalty,
	ProximalPenalty,
	Regularizer,
)
from fedreplay.flcore.theory import theorem1_check
from fedreplay.models import DenoiserParams, MlpParams, cross_entropy_grad
from fedreplay.numkit import (
	RngStream,
	Vector,
	finite_diff_grad,
	relative_error,
)

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-4
GRADIENT_POINTS = 20
MOMENT_TOLERANCE = 0.05
MOMENT_DRAWS = 10_000


@dataclass(frozen=True)
class SuiteResult:
	"""Outcome of one suite."""

	name: str
	passed: bool
	detail: str


SuiteFn = Callable[[RngStream], tuple[bool, str]]


# --- KL bound ---
def theorem1_suite(rng: RngStream, trials: int = 1000) -> tuple[bool, str]:
	"""Mixture KL bound over random simplex triples of dimension 2..10."""
	report = theorem1_check(trials, 10, rng)
	return report.passed, (
		f"{report.violations} violations in {report.trials} trials, "
		f"min slack {report.min_slack:.3e}"
	)


# --- Gradients ---
@dataclass(frozen=True)
class GradientCheck:
	"""A scalar loss over flat parameters together with its analytic gradient."""

	name: str
	loss: Callable[[Vector], float]
	grad: Callable[[Vector], Vector]
	size: int
	scale: float = 0.5


def default_gradient_checks(rng: RngStream) -> list[GradientCheck]:
	"""Classifier, denoiser and penalty gradients on small random problems."""
	mlp = MlpParams.init(3, 5, 4, rng.split(0))
	features = rng.split(1).normal((6, 3))
	labels = np.array([0, 1, 2, 3, 1, 2], dtype=np.int64)

	def ce_loss(flat: Vector) -> float:
		return cross_entropy_grad(mlp.with_flat(flat), features, labels)[0]

	def ce_grad(flat: Vector) -> Vector:
		return cross_entropy_grad(mlp.with_flat(flat), features, labels)[1]

	denoiser = DenoiserParams.init(
		2, 3, 2, rng.split(2), hidden=6, time_dim=4, cond_dim=3
	)
	schedule = make_linear_schedule(10, 1e-3, 0.2)
	noise_rng = rng.split(3)
	x0 = noise_rng.normal((5, 2))
	d_labels = np.array([0, 1, 2, 0, 1], dtype=np.int64)
	d_domains = np.array([0, 1, 1, 0, 0], dtype=np.int64)
	steps = noise_rng.integers(1, schedule.num_steps + 1, 5)
	noise = noise_rng.normal((5, 2))

	def diffusion(flat: Vector) -> tuple[float, Vector]:
		return diffusion_loss_grad_fixed(
			denoiser.with_flat(flat), x0, d_labels, d_domains, steps, noise, schedule
		)

	size = mlp.flatten().size
	anchor = rng.split(4).normal(size)
	fisher = np.abs(rng.split(5).normal(size))
	prox = ProximalPenalty(anchor, 1.0)
	ewc = EwcPenalty(anchor, fisher, 4.0)
	lwf = DistillationPenalty(MlpParams.init(3, 5, 4, rng.split(6)), 1.0)

	def penalty_check(name: str, penalty: Regularizer) -> GradientCheck:
		return GradientCheck(
			name,
			lambda flat: penalty.value(mlp.with_flat(flat), features),
			lambda flat: penalty.grad(mlp.with_flat(flat), features),
			size,
		)

	return [
		GradientCheck("classifier", ce_loss, ce_grad, size),
		GradientCheck(
			"diffusion",
			lambda flat: diffusion(flat)[0],
			lambda flat: diffusion(flat)[1],
			denoiser.flatten().size,
		),
		penalty_check("fedprox", prox),
		penalty_check("ewc", ewc),
		penalty_check("lwf", lwf),
	]


def worst_gradient_error(
	check: GradientCheck, rng: RngStream, points: int = GRADIENT_POINTS
) -> float:
	"""Largest relative error against central differences over random points."""
	worst = 0.0
	for _ in range(points):
		flat = check.scale * rng.normal(check.size)
		numeric = finite_diff_grad(check.loss, flat, h=1e-5)
		worst = max(worst, relative_error(check.grad(flat), numeric))
	return worst


def gradient_suite(
	rng: RngStream, checks: list[GradientCheck] | None = None
) -> tuple[bool, str]:
	"""Every analytic gradient agrees with finite differences."""
	checks = default_gradient_checks(rng.split(0)) if checks is None else checks
	errors = {
		check.name: worst_gradient_error(check, rng.split(1).split(i))
		for i, check in enumerate(checks)
	}
	failed = [name for name, err in errors.items() if not err < GRADIENT_TOLERANCE]
	detail = ", ".join(f"{name} {err:.1e}" for name, err in errors.items())
	return not failed, detail


# --- Forward process ---
def _moments_match(samples: np.ndarray, mean: Vector, var: float) -> bool:
	scale = np.maximum(np.abs(mean), math.sqrt(var))
	mean_ok = np.all(np.abs(samples.mean(axis=0) - mean) <= MOMENT_TOLERANCE * scale)
	var_ok = np.all(np.abs(samples.var(axis=0) - var) <= MOMENT_TOLERANCE * var)
	return bool(mean_ok and var_ok)


def forward_marginal_mismatches(
	schedule: NoiseSchedule,
	steps: list[int],
	rng: RngStream,
	x0: Vector,
	draws: int = MOMENT_DRAWS,
) -> list[str]:
	"""Steps where closed-form samples miss `(sqrt(ab) x0, (1 - ab) I)`."""
	bad = []
	for n in steps:
		eps = rng.split(n).normal((draws, x0.size))
		batch = np.tile(x0, (draws, 1))
		samples = forward_sample(batch, np.full(draws, n), eps, schedule)
		alpha_bar = schedule.alpha_bar[n - 1]
		if not _moments_match(samples, math.sqrt(alpha_bar) * x0, 1.0 - alpha_bar):
			bad.append(f"marginal n={n}")
	return bad


def kernel_composition_mismatches(
	schedule: NoiseSchedule, rng: RngStream, x0: Vector, draws: int = MOMENT_DRAWS
) -> list[str]:
	"""Steps where chaining single-step kernels disagrees with the closed form."""
	bad = []
	x = np.tile(x0, (draws, 1))
	for n in range(1, schedule.num_steps + 1):
		x = forward_kernel_step(x, n, rng.split(n).normal(x.shape), schedule)
		alpha_bar = schedule.alpha_bar[n - 1]
		if not _moments_match(x, math.sqrt(alpha_bar) * x0, 1.0 - alpha_bar):
			bad.append(f"kernel n={n}")
	return bad


def forward_suite(rng: RngStream) -> tuple[bool, str]:
	"""Forward marginal moments at n in {1, 50, 200} and 5-step kernel composition."""
	x0 = np.array([5.0, -10.0])
	bad = forward_marginal_mismatches(
		make_linear_schedule(), [1, 50, 200], rng.split(0), x0
	)
	bad += kernel_composition_mismatches(
		make_linear_schedule(5, 0.1, 0.3), rng.split(1), x0
	)
	return not bad, ", ".join(bad) or "all moments within 5%"


# --- Partitions ---
def partition_violations(schedule: ClientSchedule, dataset: Dataset) -> list[str]:
	"""Structural invariants of `schedule` over `dataset` that do not hold."""
	K, S = schedule.num_clients, schedule.num_sessions
	found: list[str] = []
	sets = {
		(k, s): set(schedule.indices(k, s).tolist()) for k in range(K) for s in range(S)
	}
	all_indices = [i for idx in sets.values() for i in idx]
	if len(all_indices) != len(set(all_indices)):
		found.append("an index is assigned twice")
	if any(i < 0 or i >= len(dataset) for i in all_indices):
		found.append("index out of range")

	def labels(k: int, s: int) -> set[int]:
		return set(dataset.labels[schedule.indices(k, s)].tolist())

	match schedule.scenario:
		case Scenario.CLASS_INC_IID:
			for s in range(S):
				if any(labels(k, s) != labels(0, s) for k in range(K)):
					found.append(f"session {s} label sets differ across clients")
			for s in range(S):
				for r in range(s):
					if labels(0, s) & labels(0, r):
						found.append(f"sessions {r} and {s} share classes")
		case Scenario.CLASS_INC_NONIID:
			for k in range(K):
				for s in range(S):
					for r in range(s):
						if labels(k, s) & labels(k, r):
							found.append(f"client {k} revisits a class in session {s}")
		case Scenario.DOMAIN_INC:
			order = schedule.domain_order or tuple(range(S))
			for k in range(K):
				for s in range(S):
					domains = set(dataset.domains[schedule.indices(k, s)].tolist())
					if domains - {order[s]}:
						found.append(f"client {k} session {s} mixes domains")
	return found


def _random_partition_case(
	scenario: Scenario, rng: RngStream
) -> tuple[ClientSchedule, Dataset, int]:
	draw = rng.split(0)

	def pick(low: int, high: int) -> int:
		return int(draw.integers(low, high + 1, 1)[0])

	if scenario is Scenario.DOMAIN_INC:
		D, C, K = pick(2, 4), pick(2, 5), pick(1, 5)
		data = make_blobs(C, D, K * pick(1, 4), 2, 3.0, 1.0, rng.split(1))
		order = draw.permutation(D).tolist()
		return partition_domain_inc(data, K, rng.split(2), order=order), data, C
	C = pick(2, 10)
	S = pick(1, C)
	cps = pick(1, C // S)
	K = pick(1, 6)
	data = make_blobs(C, 1, K * S * pick(1, 3) + pick(0, 3), 2, 3.0, 0.0, rng.split(1))
	partitioner = (
		partition_class_inc_iid
		if scenario is Scenario.CLASS_INC_IID
		else partition_class_inc_noniid
	)
	return partitioner(data, K, S, cps, rng.split(2)), data, cps


def _coverage_violations(
	schedule: ClientSchedule, dataset: Dataset, cps: int
) -> list[str]:
	K, S = schedule.num_clients, schedule.num_sessions
	found = []
	for s in range(S):
		session_labels = [
			set(dataset.labels[schedule.indices(k, s)].tolist()) for k in range(K)
		]
		if schedule.scenario is Scenario.DOMAIN_INC:
			if any(labels != dataset.label_set() for labels in session_labels):
				found.append(f"session {s} client misses a class")
			continue
		if any(len(labels) != cps for labels in session_labels):
			found.append(f"session {s} client holds other than {cps} classes")
		union = set().union(*session_labels)
		if K * cps >= dataset.num_classes and len(union) != dataset.num_classes:
			found.append(f"session {s} does not cover all classes")
	if schedule.scenario is Scenario.DOMAIN_INC:
		assigned = np.sort(np.concatenate(list(schedule.assignment.values())))
		if not np.array_equal(assigned, np.arange(len(dataset))):
			found.append("domain assignment does not cover the dataset")
	return found


def partition_suite(rng: RngStream, cases: int = 500) -> tuple[bool, str]:
	"""Random `(K, S, cps, C)` cases per scenario satisfy the partition invariants."""
	failures: list[str] = []
	for scenario_index, scenario in enumerate(Scenario):
		for case in range(cases):
			schedule, data, cps = _random_partition_case(
				scenario, rng.split(scenario_index).split(case)
			)
			found = partition_violations(schedule, data)
			found += _coverage_violations(schedule, data, cps)
			failures += [f"{scenario} case {case}: {v}" for v in found]
	total = cases * len(Scenario)
	return not failures, failures[0] if failures else f"{total} random cases hold"


SUITES: dict[str, SuiteFn] = {
	"theorem1": theorem1_suite,
	"gradients": gradient_suite,
	"forward_marginal": forward_suite,
	"partitions": partition_suite,
}


def run_selftest(
	suites: Mapping[str, SuiteFn] | None = None, seed: int = 0
) -> list[SuiteResult]:
	"""Run every suite with its own stream split from `seed`."""
	suites = SUITES if suites is None else suites
	root = RngStream(seed)
	results = []
	for i, (name, suite) in enumerate(suites.items()):
		try:
			passed, detail = suite(root.split(i))
		except Exception as e:
			logger.exception("Self-test suite %s raised", name)
			passed, detail = False, f"{type(e).__name__}: {e}"
		logger.info("Suite %s: %s", name, "PASS" if passed else "FAIL")
		results.append(SuiteResult(name, passed, detail))
	return results


def format_report(results: list[SuiteResult]) -> str:
	"""Pass/fail table, one suite per line."""
	width = max((len(r.name) for r in results), default=5)
	lines = [f"{'suite':<{width}}  result  detail"]
	lines += [
		f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}"
		for r in results
	]
	return "\n".join(lines)
