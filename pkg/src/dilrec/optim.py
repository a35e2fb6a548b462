"""Adam optimizer and a finite-difference gradient verification harness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .engine import Tape, Tensor, backward, zero_grads
from .errors import EngineUsageError, NumericalError, ShapeError


class AdamState:
    """Per-parameter moment buffers plus a shared step counter."""

    def __init__(
        self,
        params: Sequence[Tensor],
        names: Sequence[str] | None = None,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise EngineUsageError("Adam betas must lie in (0, 1)")
        if epsilon <= 0.0:
            raise EngineUsageError("Adam epsilon must be positive")
        params = list(params)
        self.names = list(names) if names is not None else [f"param{i}" for i in range(len(params))]
        if len(self.names) != len(params):
            raise EngineUsageError("AdamState: names and params lengths differ")
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.step_count = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState, lr: float) -> None:
    """One Adam update with bias correction: p -= lr * m_hat / (sqrt(v_hat) + eps)."""
    if lr <= 0.0:
        raise EngineUsageError(f"learning rate must be positive, got {lr}")
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: params, grads and state sizes differ")
    prepared = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape or g.shape != state.m[i].shape:
            raise ShapeError(
                f"adam_step: gradient shape {g.shape} does not match parameter "
                f"'{state.names[i]}' with shape {p.data.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter '{state.names[i]}'")
        prepared.append(g)
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, prepared, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


@dataclass
class GradCheckReport:
    """Per-parameter max relative error between analytic and numeric gradients."""

    step: float
    tol: float
    max_rel_err: dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.max_rel_err.items() if err >= self.tol]

    @property
    def ok(self) -> bool:
        return not self.failures


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` must rebuild its computation from the current parameter values on
    every call and return a scalar tensor. The report carries the worst
    relative error per parameter and never raises on inaccuracy; reduced
    accuracy (e.g. square roots sitting on their epsilon floor) simply shows
    up as entries above ``tol``.
    """
    if step <= 0.0:
        raise EngineUsageError("finite_difference_check: step must be positive")
    zero_grads(params.values())
    with Tape() as tape:
        for p in params.values():
            tape.watch(p)
        loss = f()
    backward(loss, tape)
    analytic = {name: p.grad.copy() for name, p in params.items()}
    zero_grads(params.values())

    report = GradCheckReport(step=step, tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ana_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(f().data)
            flat[i] = orig - step
            f_minus = float(f().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            # denominator floor keeps true-zero gradients from reading as failures
            rel = abs(numeric - ana_flat[i]) / max(abs(numeric), abs(ana_flat[i]), 1e-6)
            worst = max(worst, rel)
        report.max_rel_err[name] = worst
    return report
