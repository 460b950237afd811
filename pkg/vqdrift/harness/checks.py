"""Invariant suite shared by ``vqdrift check`` and the tests."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from vqdrift.core import Codebook, measure
from vqdrift.exception import InvalidInput
from vqdrift.kmeans import lloyd
from vqdrift.streams import DriftKind, drift_delta, encode, next_batch, sample_base
from vqdrift.transvq.projector import ProjectorConfig, gradient_check, init_params, project, train_step
from vqdrift.updaters import ntk_exact_step, rbf_weight, vanilla_full_batch_step

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable

log = logging.getLogger(__name__)
log.setLevel(os.getenv("VQDRIFT_LOG_HARNESS", "CRITICAL"))

FIXED_POINT_TOL = 1e-7
LYAPUNOV_SLACK = 1e-12
LYAPUNOV_SEEDS = 100
TRACKING_TOL = 1e-9
GRADIENT_TOL = 1e-5
PROPAGATION_TOL = 1e-12
KERNEL_CASES = 10_000

# K, d, d_model
GRADIENT_MATRIX = tuple((k, d, m) for k in (1, 4, 16) for d in (2, 3) for m in (8, 16))
CORRUPTED_TENSOR = "w_q"


@dataclass(frozen=True)
class CheckOptions:
    seed: int = 0
    corrupt_gradient: bool = False


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __str__(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def check_fixed_point(options: CheckOptions) -> CheckResult:
    """A full-batch winner-take-all step at a converged Lloyd codebook moves no code."""
    points = np.random.default_rng(options.seed).standard_normal((1500, 2))
    result = lloyd(points, 16, init=options.seed)
    report = vanilla_full_batch_step(result.codebook, points, eta=1.0)

    moved = float(np.linalg.norm(report.displacements, axis=1).max())
    passed = result.converged and moved < FIXED_POINT_TOL
    return CheckResult("fixed-point", passed, f"max displacement {moved:.3g} after {result.iterations} iterations")


def check_lyapunov(options: CheckOptions) -> CheckResult:
    """Lloyd distortion never increases, over many seeds."""
    worst = -np.inf
    for seed in range(options.seed, options.seed + LYAPUNOV_SEEDS):
        points = np.random.default_rng(seed).standard_normal((1500, 2))
        history = np.asarray(lloyd(points, 16, init=seed).history)
        worst = max(worst, float(np.max(np.diff(history), initial=-np.inf)))

    return CheckResult("lyapunov", worst <= LYAPUNOV_SLACK, f"largest increase {worst:.3g} over {LYAPUNOV_SEEDS} seeds")


def check_ntk_exactness(options: CheckOptions, epochs: int = 1, batch_size: int = 32) -> CheckResult:
    """Under translation drift every non-winner follows the exact encoder change and no code dies.

    The expected change of a code is the difference of its encodings under the state after and before the
    increment, computed independently of the step's Jacobian product.
    """
    rng = np.random.default_rng(options.seed)
    process = sample_base(kind=DriftKind.TRANSLATION, seed=rng)
    codebook = lloyd(process.base, 16, init=options.seed).codebook

    worst_error = 0.0
    worst_util = measure(process.drifted(), codebook).utilization
    for _ in range(epochs):
        order = rng.permutation(process.n)
        for start in range(0, process.n, batch_size):
            batch, targets = next_batch(process, order[start : start + batch_size])
            share = drift_delta(process, batch, targets) / len(batch)

            for x in batch.points:
                report = ntk_exact_step(codebook, process, x, share)
                expected = encode(process, codebook.codes, process.state + share) - encode(process, codebook.codes)
                others = np.arange(codebook.k) != report.winner
                error = np.abs(report.displacements[others] - expected[others]).max(initial=0.0)
                worst_error = max(worst_error, float(error))
                codebook = report.codebook

            process.set_state(process.state + share * len(batch))
            worst_util = min(worst_util, measure(process.drifted(), codebook).utilization)

    passed = worst_error < TRACKING_TOL and worst_util == 1.0
    return CheckResult("ntk-exactness", passed, f"tracking error {worst_error:.3g}, min utilization {worst_util:.3f}")


def check_gradient(options: CheckOptions) -> CheckResult:
    """Hand-written projector gradients agree with central finite differences."""
    corrupt = CORRUPTED_TENSOR if options.corrupt_gradient else None

    worst = 0.0
    for k, d, d_model in GRADIENT_MATRIX:
        rng = np.random.default_rng([options.seed, k, d, d_model])
        params = init_params(ProjectorConfig(d=d, d_model=d_model), rng, zero_outputs=False)
        base = Codebook(rng.standard_normal((k, d)))
        error = gradient_check(params, base, seed=options.seed, corrupt=corrupt)
        log.debug("Gradient check K=%d d=%d d_model=%d: %.3g", k, d, d_model, error)
        worst = max(worst, error)

    return CheckResult("gradcheck", worst <= GRADIENT_TOL, f"max relative error {worst:.3g}")


def check_identity_init(options: CheckOptions) -> CheckResult:
    """A projector with zero output projections is the identity map."""
    rng = np.random.default_rng(options.seed)
    base = Codebook(rng.standard_normal((16, 2)))
    out, _ = project(init_params(ProjectorConfig(d=2), rng), base)

    deviation = float(np.abs(out.codes - base.codes).max())
    return CheckResult("identity-init", deviation == 0.0, f"max abs deviation {deviation:.3g}")


def check_full_propagation(options: CheckOptions) -> CheckResult:
    """One winner-only projector step moves every transformed code and leaves the base codebook untouched."""
    rng = np.random.default_rng(options.seed)
    base = Codebook(rng.standard_normal((8, 2)))
    before = base.mutable()
    params = init_params(ProjectorConfig(d=2), rng, zero_outputs=False)

    _, report = train_step(params, base, rng.standard_normal(2), 0, lr=1e-2)
    moved = int(np.sum(np.linalg.norm(report.displacements, axis=1) > PROPAGATION_TOL))
    frozen = np.array_equal(before, base.codes)
    return CheckResult(
        "full-propagation", moved == base.k and frozen, f"{moved}/{base.k} codes moved, base unchanged: {frozen}"
    )


def check_kernel_weights(options: CheckOptions) -> CheckResult:
    """Kernel weights lie in ``(0, 1]``, equal one only at distance zero and strictly decay with distance."""
    rng = np.random.default_rng(options.seed)
    bandwidth = rng.uniform(0.1, 10.0, KERNEL_CASES)
    near = rng.uniform(1e-6, 20.0, KERNEL_CASES) * bandwidth
    far = near + rng.uniform(1e-6, 20.0, KERNEL_CASES) * bandwidth

    w_zero = rbf_weight(np.zeros(KERNEL_CASES), bandwidth)
    w_near = rbf_weight(near, bandwidth)
    w_far = rbf_weight(far, bandwidth)

    failures = int(
        np.sum(w_zero != 1.0)
        + np.sum((w_near <= 0.0) | (w_near >= 1.0))
        + np.sum((w_far <= 0.0) | (w_far >= 1.0))
        + np.sum(w_far >= w_near)
    )
    return CheckResult("kernel-weights", failures == 0, f"{failures} failures in {KERNEL_CASES} cases")


CHECKS: dict[str, Callable[[CheckOptions], CheckResult]] = {
    "fixed-point": check_fixed_point,
    "lyapunov": check_lyapunov,
    "ntk-exactness": check_ntk_exactness,
    "gradcheck": check_gradient,
    "identity-init": check_identity_init,
    "full-propagation": check_full_propagation,
    "kernel-weights": check_kernel_weights,
}


def run_checks(only: Iterable[str] | None = None, options: CheckOptions | None = None) -> list[CheckResult]:
    """Run the named checks (all by default) and return their results in registry order."""
    options = options or CheckOptions()
    names = list(CHECKS) if only is None else list(only)

    unknown = [name for name in names if name not in CHECKS]
    if unknown:
        raise InvalidInput(f"unknown check(s): {', '.join(unknown)}; expected one of {', '.join(CHECKS)}")

    results = []
    for name in CHECKS:
        if name in names:
            result = CHECKS[name](options)
            log.info("%s", result)
            results.append(result)
    return results
