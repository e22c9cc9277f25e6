"""Entropy-regularized optimal transport between cluster heads.

The solver minimizes ``<A, C> - temperature * H(A)`` over couplings ``A`` with
prescribed row and column sums, by alternately rescaling the rows and columns
of the Gibbs kernel ``exp(-C / temperature)``. The log-domain variant keeps
the scalings as potentials and uses log-sum-exp, so tiny temperatures do not
underflow.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, NumericalUnderflow
from .linalg import as_matrix, cosine_sim_plus, format_real


@dataclass(frozen=True)
class SinkhornSettings:
    temperature: float = 0.02
    max_iterations: int = 10_000
    tolerance: float = 1e-8
    log_domain: bool = True
    # only honoured by the naive path; "float32" mimics single-precision training
    precision: str = "float64"
    check_every: int = 1
    # log-domain only: switch from scaling sweeps to Newton steps on the dual
    # after this many sweeps (None keeps pure scaling throughout)
    newton_after: int | None = 50

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidConfig(f"temperature must be > 0, got {self.temperature}")
        if not self.tolerance > 0:
            raise InvalidConfig(f"tolerance must be > 0, got {self.tolerance}")
        if self.newton_after is not None and self.newton_after < 0:
            raise InvalidConfig("newton_after must be >= 0 or None")
        if self.max_iterations < 1:
            raise InvalidConfig("max_iterations must be >= 1")
        if self.precision not in ("float64", "float32"):
            raise InvalidConfig(f"unknown precision {self.precision!r}")


@dataclass
class TransportPlan:
    plan: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    temperature: float
    iterations_run: int
    marginal_violation: float
    converged: bool
    # dual potentials (log scalings), reusable as a warm start
    log_u: np.ndarray = field(default=None, repr=False)
    log_v: np.ndarray = field(default=None, repr=False)

    @property
    def shape(self):
        return self.plan.shape

    @property
    def not_converged(self):
        return not self.converged

    def entropy(self):
        return plan_entropy(self)

    def report_row(self):
        """``temperature,iterations,violation,entropy`` as one CSV line."""
        return ",".join([
            format_real(self.temperature),
            str(self.iterations_run),
            format_real(self.marginal_violation),
            format_real(plan_entropy(self)),
        ])


REPORT_HEADER = "temperature,iterations,violation,entropy"


def write_report(path, plans):
    lines = [REPORT_HEADER] + [p.report_row() for p in plans]
    Path(path).write_text("\n".join(lines) + "\n")


def uniform(n):
    return np.full(n, 1.0 / n)


def cost_from_heads(h_lo, h_hi):
    """Transport cost ``1 - max(cos, 0)`` between two sets of cluster centers."""
    return 1.0 - cosine_sim_plus(h_lo, h_hi)


def _check_marginal(m, n, name):
    m = np.asarray(m, dtype=np.float64).ravel()
    if m.shape != (n,):
        raise DimensionMismatch(f"{name} has length {m.size}, expected {n}")
    if np.any(m <= 0) or not np.all(np.isfinite(m)):
        raise ValueError(f"{name} must be strictly positive and finite")
    if abs(m.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to 1, sums to {m.sum()!r}")
    return m


def _lse(x, axis):
    top = np.max(x, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(x - top), axis=axis, keepdims=True)) + top
    return np.squeeze(out, axis=axis)


def _violation(plan, a, b):
    return max(np.max(np.abs(plan.sum(axis=1) - a)), np.max(np.abs(plan.sum(axis=0) - b)))


def _residual(log_k, log_u, log_v, a, b):
    plan = np.exp(log_k + log_u[:, None] + log_v[None, :])
    return plan, np.concatenate([a - plan.sum(axis=1), b - plan.sum(axis=0)])


def _newton_step(log_k, log_u, log_v, a, b):
    """One damped Newton step on the dual in log-scaling coordinates.

    The last column potential is pinned, which removes the constant shift
    along which the dual is flat. Returns ``None`` when no step along the
    Newton direction reduces the marginal residual.
    """
    n, m = log_k.shape
    plan, grad = _residual(log_k, log_u, log_v, a, b)
    jac = np.zeros((n + m, n + m))
    jac[:n, :n] = np.diag(plan.sum(axis=1))
    jac[n:, n:] = np.diag(plan.sum(axis=0))
    jac[:n, n:] = plan
    jac[n:, :n] = plan.T
    try:
        step = np.linalg.solve(jac[:-1, :-1], grad[:-1])
    except np.linalg.LinAlgError:
        step = np.linalg.lstsq(jac[:-1, :-1], grad[:-1], rcond=None)[0]
    if not np.all(np.isfinite(step)):
        return None
    step = np.append(step, 0.0)
    du, dv = step[:n], step[n:]
    base = grad @ grad
    t = 1.0
    with np.errstate(over="ignore", invalid="ignore"):
        while t > 1e-6:
            nu, nv = log_u + t * du, log_v + t * dv
            r = _residual(log_k, nu, nv, a, b)[1]
            res = r @ r
            if np.isfinite(res) and res < base:
                return nu, nv
            t *= 0.5
    return None


def _sinkhorn_log(cost, a, b, s, init):
    log_k = -cost / s.temperature
    log_a, log_b = np.log(a), np.log(b)
    if init is not None:
        log_v = np.array(init, dtype=np.float64)
    else:
        log_v = np.zeros(b.size)
    log_u = log_a - _lse(log_k + log_v[None, :], axis=1)
    it = 0
    while it < s.max_iterations:
        stepped = None
        if s.newton_after is not None and it >= s.newton_after:
            stepped = _newton_step(log_k, log_u, log_v, a, b)
        if stepped is not None:
            log_u, log_v = stepped
            # re-impose the row marginal exactly after the joint step
            log_u = log_a - _lse(log_k + log_v[None, :], axis=1)
        else:
            log_v = log_b - _lse(log_k + log_u[:, None], axis=0)
            log_u = log_a - _lse(log_k + log_v[None, :], axis=1)
        it += 1
        if it % s.check_every == 0 or it == s.max_iterations:
            plan = np.exp(log_k + log_u[:, None] + log_v[None, :])
            if _violation(plan, a, b) <= s.tolerance:
                break
    plan = np.exp(log_k + log_u[:, None] + log_v[None, :])
    return plan, it, _violation(plan, a, b), log_u, log_v


def _sinkhorn_naive(cost, a, b, s):
    dt = np.dtype(s.precision)
    with np.errstate(all="ignore"):
        kern = np.exp(-cost.astype(dt) / dt.type(s.temperature))
        a_, b_ = a.astype(dt), b.astype(dt)
        v = np.ones(b.size, dtype=dt)
        u = a_ / (kern @ v)
        it = 0
        while it < s.max_iterations:
            v = b_ / (kern.T @ u)
            u = a_ / (kern @ v)
            it += 1
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise NumericalUnderflow(
                    f"scaling vectors became non-finite after {it} iterations "
                    f"(temperature={s.temperature}, precision={s.precision})")
            if it % s.check_every == 0 or it == s.max_iterations:
                plan = (u[:, None] * kern * v[None, :]).astype(np.float64)
                if _violation(plan, a, b) <= s.tolerance:
                    break
        plan = (u[:, None] * kern * v[None, :]).astype(np.float64)
    if not np.all(np.isfinite(plan)):
        raise NumericalUnderflow("plan contains non-finite entries")
    with np.errstate(divide="ignore"):
        log_u, log_v = np.log(u.astype(np.float64)), np.log(v.astype(np.float64))
    return plan, it, _violation(plan, a, b), log_u, log_v


def sinkhorn(cost, settings=None, row_marginal=None, col_marginal=None, init_log_v=None):
    """Entropic OT plan for ``cost`` with the given marginals (uniform by default).

    Failing to reach ``settings.tolerance`` is reported through
    ``TransportPlan.converged``; it is not an error. The naive path raises
    :class:`NumericalUnderflow` when its scaling vectors leave the float range.
    ``init_log_v`` warm-starts the column potentials (log-domain only).
    """
    s = settings or SinkhornSettings()
    cost = as_matrix(cost, "cost")
    n, m = cost.shape
    if n == 0 or m == 0:
        raise DimensionMismatch("cost matrix is empty")
    a = _check_marginal(uniform(n) if row_marginal is None else row_marginal, n, "row_marginal")
    b = _check_marginal(uniform(m) if col_marginal is None else col_marginal, m, "col_marginal")
    if s.log_domain:
        if init_log_v is not None and np.shape(init_log_v) != (m,):
            init_log_v = None
        plan, it, viol, log_u, log_v = _sinkhorn_log(cost, a, b, s, init_log_v)
    else:
        plan, it, viol, log_u, log_v = _sinkhorn_naive(cost, a, b, s)
    return TransportPlan(
        plan=plan,
        row_marginal=a,
        col_marginal=b,
        temperature=s.temperature,
        iterations_run=it,
        marginal_violation=float(viol),
        converged=bool(viol <= s.tolerance),
        log_u=log_u,
        log_v=log_v,
    )


def plan_entropy(plan):
    """Shannon entropy ``-sum a log a`` of a plan (``0 log 0 = 0``)."""
    p = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def objective(plan, cost, temperature):
    """Regularized transport objective ``<A, C> - temperature * H(A)``."""
    p = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    return float(np.sum(p * cost) - temperature * plan_entropy(p))
