"""Path simulation: the fast variable, its time change and square-root diffusions.

All simulators are vectorised over paths and take either a
:class:`~fastrevert.grids.NoiseSource` or explicit Brownian increments of
shape ``(n_paths, n_steps)``; the increments used are stored on the returned
:class:`SamplePath`, so replaying them reproduces the path exactly.

Schemes
-------
drift_implicit
    ``x + dt (c L / eps) g(M x / eps) = x_prev + dt b + sqrt(c) dW`` solved by
    safeguarded Newton inside the bracket ``[min(0, rhs), max(0, rhs)]``.
    The left side is increasing in ``x`` so the root is unique.
explicit_em, tamed_em
    Euler-Maruyama and its tamed variant ``dt mu / (1 + dt |mu|)``.
full_truncation
    For square-root diffusions: drift and volatility evaluated at
    ``max(Y, 0)``. Reported values are ``max(Y, 0)``.

References
----------
.. [1] Hutzenthaler, M., Jentzen, A. and Kloeden, P. E., "Strong convergence
   of an explicit numerical method for SDEs with nonglobally Lipschitz
   continuous coefficients", Ann. Appl. Probab. 22 (2012).
.. [2] Lord, R., Koekkoek, R. and van Dijk, D., "A comparison of biased
   simulation schemes for stochastic volatility models", Quant. Finance 10
   (2010).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .grids import NoiseSource, TimeGrid
from .model import (Constant, CoefficientModel, CoefficientPaths, ReversionFunction,
                    ScalingConfig, sample_coefficients)

__all__ = [
    "SchemeError", "BlowUpError", "MisuseError", "StabilityWarning", "SchemeSelector",
    "SamplePath", "CirParams", "TimeChange", "SqrtDiffusion", "AdditiveDiffusion",
    "simulate_X", "implicit_step", "time_change_grid", "simulate_X_timechanged",
    "simulate_Y_pm", "y_pm_drift", "simulate_cir", "simulate_squared_bessel",
    "coupled_pair", "sqrt_process",
]

X_CHANNEL = "W"


class SchemeError(RuntimeError):
    """The implicit solve did not converge."""


class BlowUpError(FloatingPointError):
    """A simulated state became non-finite."""


class MisuseError(ValueError):
    """Inputs violate a documented precondition."""


class StabilityWarning(RuntimeWarning):
    """Explicit step size exceeds the linear stability limit."""


@dataclass(frozen=True)
class SchemeSelector:
    kind: str = "drift_implicit"
    tol: float = 1e-12
    max_iter: int = 100

    KINDS = ("drift_implicit", "explicit_em", "tamed_em")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown scheme {self.kind!r}; known: {self.KINDS}")
        if not self.tol > 0 or self.max_iter < 1:
            raise ValueError("tolerance must be positive and max_iter >= 1")


def _scheme(scheme) -> SchemeSelector:
    return scheme if isinstance(scheme, SchemeSelector) else SchemeSelector(scheme)


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Simulated trajectories on a common grid.

    Attributes
    ----------
    grid : TimeGrid
    values : ndarray, shape (n_paths, n_nodes)
    noise_increments : ndarray, shape (n_paths, n_steps)
        Brownian increments consumed, step ``j`` driving node ``j -> j+1``.
    channel_id, scheme_id : str
    coefficients : CoefficientPaths or None
        Coefficient values used (fast-variable simulations only).
    meta : dict
        Extra per-simulation data, e.g. the physical times of a time-changed
        path under ``"t_nodes"``.
    """

    grid: TimeGrid
    values: np.ndarray
    noise_increments: np.ndarray
    channel_id: str
    scheme_id: str
    coefficients: CoefficientPaths | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape[-1] != self.grid.nodes.size:
            raise ValueError("values do not match the grid")
        if self.noise_increments.shape[-1] != self.grid.n_steps:
            raise ValueError("noise increments do not match the grid")

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    def to_csv(self, path, path_index: int = 0) -> None:
        """Columns ``t, value, dW`` (``dW`` of the step leaving each node)."""
        v = self.values[path_index]
        dw = np.append(self.noise_increments[path_index], np.nan)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t,value,dW\n")
            for row in zip(self.grid.nodes, v, dw):
                fh.write(",".join(format(float(x), ".17g") for x in row) + "\n")

    def to_npz(self, path) -> None:
        np.savez(path, t=self.grid.nodes, values=self.values,
                 noise_increments=self.noise_increments,
                 channel_id=self.channel_id, scheme_id=self.scheme_id)


def _increments(grid, rng, increments, n_paths, channel, path_offset):
    if increments is not None:
        inc = np.atleast_2d(np.asarray(increments, dtype=float))
        if inc.shape[1] != grid.n_steps:
            raise ValueError(f"increments have {inc.shape[1]} steps, grid has {grid.n_steps}")
        return inc
    if rng is None:
        raise ValueError("either rng or increments is required")
    return rng.increments(channel, grid.dt, n_paths, path_offset)


# ---------------------------------------------------------------------------
# fast variable


def implicit_step(rf: ReversionFunction, a, s, rhs, scale: float, tol: float = 1e-12,
                  max_iter: int = 100, step: int | None = None) -> np.ndarray:
    """Solve ``x + a g(s x) = rhs`` for ``x`` (``a, s >= 0``), elementwise.

    Newton steps are kept inside the sign bracket ``[min(0, rhs), max(0, rhs)]``
    and replaced by bisection when they leave it. Convergence is declared
    when the update falls below ``tol * (|x| + scale)``.
    """
    rhs = np.asarray(rhs, dtype=float)
    a = np.broadcast_to(a, rhs.shape)
    s = np.broadcast_to(s, rhs.shape)
    lo = np.minimum(rhs, 0.0)
    hi = np.maximum(rhs, 0.0)
    x = rhs / (1.0 + a * s * rf.slope_at_origin())
    done = np.zeros(rhs.shape, dtype=bool)
    for _ in range(max_iter):
        phi = x + a * rf(s * x) - rhs
        pos = phi > 0
        hi = np.where(pos, np.minimum(hi, x), hi)
        lo = np.where(pos, lo, np.maximum(lo, x))
        dphi = 1.0 + a * s * rf.derivative(s * x)
        x_new = x - phi / dphi
        out = ~((x_new >= lo) & (x_new <= hi))
        x_new = np.where(out, 0.5 * (lo + hi), x_new)
        thresh = tol * (np.abs(x_new) + scale)
        done = (np.abs(x_new - x) <= thresh) | (phi == 0) | (hi - lo <= thresh)
        x = np.where(phi == 0, x, x_new)
        if done.all():
            return x
    where = "" if step is None else f" at step {step}"
    raise SchemeError(f"implicit solve did not converge in {max_iter} iterations{where} "
                      f"({int((~done).sum())} paths unresolved)")


def _check_finite(x, step):
    if not np.all(np.isfinite(x)):
        raise BlowUpError(f"non-finite state at step {step}")


def simulate_X(cm: CoefficientModel, rf: ReversionFunction, scaling: ScalingConfig,
               grid: TimeGrid, scheme="drift_implicit", rng: NoiseSource | None = None,
               n_paths: int = 1, coefficients: CoefficientPaths | None = None,
               increments=None, path_offset: int = 0) -> SamplePath:
    """Simulate ``dX = (b - (c L / eps) g(M X / eps)) dt + sqrt(c) dW`` from ``eps z0``.

    Coefficients are sampled from ``cm`` with ``rng`` unless given. Each step
    uses the coefficient values at its left node.
    """
    sel = _scheme(scheme)
    inc = _increments(grid, rng, increments, n_paths, X_CHANNEL, path_offset)
    n_paths = inc.shape[0]
    if coefficients is None:
        if rng is None:
            if not cm.is_deterministic:
                raise ValueError("stochastic coefficients need an rng")
            rng = NoiseSource(0)
        coefficients = sample_coefficients(cm, grid, rng, n_paths, path_offset)
    eps = scaling.epsilon
    b, c, L, M = (coefficients[n] for n in ("b", "c", "L", "M"))
    dt = grid.dt
    if sel.kind == "explicit_em":
        lin = np.max(dt * (c * L * M)[:, :-1]) * rf.slope_at_origin() / eps ** 2
        if lin > 2:
            warnings.warn(f"explicit step is beyond the linear stability limit "
                          f"(dt c L M g'(0) / eps^2 = {lin:.3g} > 2)", StabilityWarning,
                          stacklevel=2)
    x = np.full(n_paths, scaling.x0)
    out = np.empty((n_paths, grid.nodes.size))
    out[:, 0] = x
    sqc = np.sqrt(c)
    for j in range(grid.n_steps):
        h = dt[j]
        noise = sqc[:, j] * inc[:, j]
        if sel.kind == "drift_implicit":
            a = h * c[:, j] * L[:, j] / eps
            rhs = x + h * b[:, j] + noise
            x = implicit_step(rf, a, M[:, j] / eps, rhs, eps, sel.tol, sel.max_iter, j)
        else:
            mu = b[:, j] - c[:, j] * L[:, j] / eps * rf(M[:, j] * x / eps)
            if sel.kind == "tamed_em":
                x = x + h * mu / (1.0 + h * np.abs(mu)) + noise
            else:
                x = x + h * mu + noise
        _check_finite(x, j)
        out[:, j + 1] = x
    return SamplePath(grid, out, inc, X_CHANNEL, sel.kind, coefficients)


@dataclass(frozen=True, eq=False)
class TimeChange:
    """Cumulative clock ``xi(t) = int_0^t eps^-2 c ds`` and its inverse."""

    t_nodes: np.ndarray
    xi_nodes: np.ndarray

    @property
    def xi_total(self) -> float:
        return float(self.xi_nodes[-1])

    def __call__(self, xi):
        """Physical time ``u(xi)``, piecewise-linear inverse of the clock."""
        xi = np.asarray(xi, dtype=float)
        if np.any(xi < 0) or np.any(xi > self.xi_total * (1 + 1e-12)):
            raise ValueError("xi outside [0, xi_total]")
        return np.interp(xi, self.xi_nodes, self.t_nodes)

    def forward(self, t):
        return np.interp(t, self.t_nodes, self.xi_nodes)


def time_change_grid(c_values, grid: TimeGrid, epsilon: float) -> TimeChange:
    """Clock of the time change from ``c`` sampled on ``grid`` (trapezoid rule).

    Returns an object with ``xi_total`` and callable ``u_map``; the
    ``(xi_total, u_map)`` pair of the interface is ``(tc.xi_total, tc)``.
    """
    c = np.asarray(c_values, dtype=float).ravel()
    if c.size != grid.nodes.size:
        raise ValueError("c path does not match the grid")
    if np.any(c <= 0):
        raise ValueError("c must be positive")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    xi = np.zeros(c.size)
    xi[1:] = np.cumsum(0.5 * (c[1:] + c[:-1]) * grid.dt) / epsilon ** 2
    return TimeChange(grid.nodes, xi)


def simulate_X_timechanged(cm: CoefficientModel, rf: ReversionFunction,
                           scaling: ScalingConfig, xi_grid: TimeGrid | None = None,
                           rng: NoiseSource | None = None, n_steps: int | None = None,
                           n_paths: int = 1, scheme="drift_implicit", increments=None,
                           path_offset: int = 0, clock_steps: int = 10_000) -> SamplePath:
    """Simulate the time-changed, rescaled variable on ``[0, xi_total]``.

    ``dY = (eps b / c - L g(M Y)) dxi + dW`` with ``Y_0 = z0`` and coefficients
    read at physical time ``u(xi)``. The grid ends at ``xi_total``; nothing
    is simulated after it. Physical times of the nodes are in
    ``meta["t_nodes"]``.

    With constant ``c`` the clock is linear, ``u(xi) = eps^2 xi / c``, and when
    the normals of the ``"W"`` channel are shared with :func:`simulate_X` on
    the matching grid the two discrete recursions coincide.
    """
    sel = _scheme(scheme)
    eps = scaling.epsilon
    T = cm.horizon
    if isinstance(cm.c, Constant):
        xi_total = float(cm.c.value) * T / eps ** 2
        to_t = lambda xi: xi * eps ** 2 / float(cm.c.value)  # noqa: E731
        c_interp = None
    else:
        if cm.c.stochastic and n_paths != 1:
            raise MisuseError("stochastic c gives one clock per path; simulate paths one at a time")
        aux = TimeGrid.uniform(T, clock_steps)
        if cm.c.stochastic:
            if rng is None:
                raise ValueError("stochastic c needs an rng")
            c_aux = cm.c.sample(aux.nodes, rng.normals("coef:c", aux.n_steps, 1, path_offset))[0]
        else:
            c_aux = cm.c.sample(aux.nodes)[0]
        tc = time_change_grid(c_aux, aux, eps)
        xi_total, to_t = tc.xi_total, tc
        c_interp = (aux.nodes, c_aux)
    if xi_grid is None:
        if n_steps is None:
            raise ValueError("give xi_grid or n_steps")
        xi_grid = TimeGrid.uniform(xi_total, n_steps)
    elif xi_grid.horizon > xi_total * (1 + 1e-9):
        raise ValueError(f"xi grid ends at {xi_grid.horizon:g} beyond xi_total = {xi_total:g}")
    t_nodes = np.asarray(to_t(xi_grid.nodes), dtype=float)
    t_nodes[0] = 0.0
    t_grid = TimeGrid(t_nodes)
    sub = replace(cm, horizon=t_grid.horizon)
    if cm.c.stochastic:
        # reuse the clock's c path; other channels are sampled on the mapped grid
        coeff = sample_coefficients(replace(sub, c=Constant(1.0)), t_grid, rng, 1, path_offset)
        vals = dict(coeff.values)
        vals["c"] = np.interp(t_nodes, *c_interp)[None, :]
        coeff = CoefficientPaths(t_grid, vals, False)
    else:
        coeff = sample_coefficients(sub, t_grid, rng if rng is not None else NoiseSource(0),
                                    n_paths, path_offset)

    inc = _increments(xi_grid, rng, increments, n_paths, X_CHANNEL, path_offset)
    n_paths = inc.shape[0]
    b, c, L, M = (coeff[n] for n in ("b", "c", "L", "M"))
    dxi = xi_grid.dt
    y = np.full(n_paths, float(scaling.z0))
    out = np.empty((n_paths, xi_grid.nodes.size))
    out[:, 0] = y
    for j in range(xi_grid.n_steps):
        h = dxi[j]
        drift_b = eps * b[:, j] / c[:, j]
        if sel.kind == "drift_implicit":
            y = implicit_step(rf, h * L[:, j], M[:, j], y + h * drift_b + inc[:, j], 1.0,
                              sel.tol, sel.max_iter, j)
        else:
            mu = drift_b - L[:, j] * rf(M[:, j] * y)
            if sel.kind == "tamed_em":
                y = y + h * mu / (1.0 + h * np.abs(mu)) + inc[:, j]
            else:
                y = y + h * mu + inc[:, j]
        _check_finite(y, j)
        out[:, j + 1] = y
    return SamplePath(xi_grid, out, inc, X_CHANNEL, sel.kind, coeff,
                      {"t_nodes": t_nodes, "xi_total": xi_total})


# ---------------------------------------------------------------------------
# square-root diffusions


@dataclass(frozen=True)
class SqrtDiffusion:
    """Volatility ``sigma * sqrt(max(y, 0))``."""

    sigma: float

    def __call__(self, y):
        return self.sigma * np.sqrt(np.maximum(y, 0.0))


@dataclass(frozen=True)
class AdditiveDiffusion:
    """Constant volatility ``sigma``."""

    sigma: float

    def __call__(self, y):
        return np.full(np.shape(y), float(self.sigma))


def sqrt_process(drift: Callable, sigma: float, y0, grid: TimeGrid, increments: np.ndarray,
                 scheme: str = "full_truncation") -> np.ndarray:
    """Core stepper for ``dY = drift(t, Y) dt + sigma sqrt(Y) dB``.

    Returns the raw state array ``(n_paths, n_nodes)``; full truncation may
    leave it negative between nodes, callers clamp the reported values.
    """
    n_paths = increments.shape[0]
    y = np.broadcast_to(np.asarray(y0, dtype=float), (n_paths,)).copy()
    out = np.empty((n_paths, grid.nodes.size))
    out[:, 0] = y
    t, dt = grid.nodes, grid.dt
    diff = SqrtDiffusion(sigma)
    for j in range(grid.n_steps):
        if scheme == "full_truncation":
            yp = np.maximum(y, 0.0)
            y = y + drift(t[j], yp) * dt[j] + sigma * np.sqrt(yp) * increments[:, j]
        elif scheme == "drift_implicit":
            y = _monotone_implicit(drift, diff, t[j + 1], dt[j], y, increments[:, j])
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        _check_finite(y, j)
        out[:, j + 1] = y
    return out


def _monotone_implicit(drift, diffusion, t_next, h, y, dW, n_bisect: int = 64):
    """Drift-implicit step whose map is nondecreasing in ``y`` and in the drift.

    For ``sigma sqrt(y)`` volatility: ``Phi = max(sqrt(y) + sigma dW / 2, 0)^2``
    and ``z - h drift(z) = Phi - sigma^2 h / 4`` on ``z >= 0``; for additive
    volatility ``z - h drift(z) = y + sigma dW``. The root is located by a
    fixed number of bisections on a bracket shared by all inputs, returning
    the lower end, so ordered inputs give ordered outputs exactly.
    ``y`` may stack several coupled paths along axis 0.
    """
    if isinstance(diffusion, SqrtDiffusion):
        s = diffusion.sigma
        root = np.maximum(np.sqrt(np.maximum(y, 0.0)) + 0.5 * s * dW, 0.0)
        target = root * root - 0.25 * s * s * h
        floor = 0.0
    else:
        target = y + diffusion.sigma * dW
        floor = None

    def psi(z):
        return z - h * drift(t_next, z) - target

    span = np.max(np.abs(target)) + 1.0
    hi = np.full(target.shape, span)
    for _ in range(200):
        if np.all(psi(hi) >= 0):
            break
        hi = hi * 2.0
    else:
        raise SchemeError("no upper bracket for the implicit square-root step")
    if floor is None:
        lo = -hi
        for _ in range(200):
            if np.all(psi(lo) < 0):
                break
            lo = lo * 2.0
        else:
            raise SchemeError("no lower bracket for the implicit step")
    else:
        lo = np.zeros(target.shape)
        at_floor = psi(lo) >= 0
    hi = np.full(target.shape, hi.max())
    lo = np.full(target.shape, lo.min())
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        up = psi(mid) >= 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    if floor is not None:
        lo = np.where(at_floor, 0.0, lo)
    return lo


def y_pm_drift(rf: ReversionFunction, l: float, m: float, delta: float, sign: str):
    """Drift ``y -> 1 - 2 l' sqrt(y) g(m' sqrt(y))`` of the sandwich process."""
    if sign == "+":
        lp, mp = l - delta, m - delta
    elif sign == "-":
        lp, mp = l + delta, m + delta
    else:
        raise ValueError("sign must be '+' or '-'")
    if delta < 0 or not (lp > 0 and mp > 0):
        raise ValueError("inadmissible (l, m, delta)")

    def drift(t, y):
        r = np.sqrt(np.maximum(y, 0.0))
        return 1.0 - 2.0 * lp * r * rf(mp * r)

    return drift


def _clamped_path(grid, raw, inc, channel, scheme, meta=None):
    return SamplePath(grid, np.maximum(raw, 0.0), inc, channel, scheme, None, meta or {})


def simulate_Y_pm(rf: ReversionFunction, y0: float, l: float, m: float, delta: float,
                  sign: str, grid: TimeGrid, rng: NoiseSource | None = None,
                  n_paths: int = 1, increments=None, scheme: str = "full_truncation",
                  path_offset: int = 0) -> SamplePath:
    """Sandwich diffusion ``dY = (1 - 2 l' sqrt(Y) g(m' sqrt(Y))) dt + 2 sqrt(Y) dB``."""
    if y0 < 0:
        raise ValueError("y0 must be nonnegative")
    inc = _increments(grid, rng, increments, n_paths, "B", path_offset)
    raw = sqrt_process(y_pm_drift(rf, l, m, delta, sign), 2.0, y0, grid, inc, scheme)
    return _clamped_path(grid, raw, inc, "B", scheme)


@dataclass(frozen=True)
class CirParams:
    """``dY = nu (theta - Y) dt + sigma sqrt(Y) dB`` with ``2 nu theta / sigma^2 < 1``."""

    nu: float
    theta: float
    sigma: float
    y0: float

    def __post_init__(self):
        if not all(v > 0 for v in (self.nu, self.theta, self.sigma, self.y0)):
            raise ValueError("nu, theta, sigma and y0 must be positive")
        if not 2 * self.nu * self.theta / self.sigma ** 2 < 1:
            raise ValueError(f"2 nu theta / sigma^2 = {self.feller_ratio:g} must be < 1")

    @property
    def gamma(self) -> float:
        return 2 * self.nu / self.sigma ** 2

    @property
    def feller_ratio(self) -> float:
        return 2 * self.nu * self.theta / self.sigma ** 2


def simulate_cir(params: CirParams, grid: TimeGrid, rng: NoiseSource | None = None,
                 n_paths: int = 1, increments=None, scheme: str = "full_truncation",
                 path_offset: int = 0) -> SamplePath:
    """CIR paths, full truncation by default; values clamped at 0."""
    inc = _increments(grid, rng, increments, n_paths, "B", path_offset)
    nu, th = params.nu, params.theta
    raw = sqrt_process(lambda t, y: nu * (th - y), params.sigma, params.y0, grid, inc, scheme)
    return _clamped_path(grid, raw, inc, "B", scheme)


def simulate_squared_bessel(y0: float, grid: TimeGrid, rng: NoiseSource | None = None,
                            dim: float = 1.0, n_paths: int = 1, increments=None,
                            scheme: str = "full_truncation", path_offset: int = 0) -> SamplePath:
    """Squared Bessel process ``dY = dim dt + 2 sqrt(Y) dB``."""
    if y0 < 0 or dim < 0:
        raise ValueError("y0 and dim must be nonnegative")
    inc = _increments(grid, rng, increments, n_paths, "B", path_offset)
    raw = sqrt_process(lambda t, y: np.full(np.shape(y), float(dim)), 2.0, y0, grid, inc, scheme)
    return _clamped_path(grid, raw, inc, "B", scheme)


def coupled_pair(drift_low: Callable, drift_high: Callable, grid: TimeGrid, y0_low: float,
                 y0_high: float, rng: NoiseSource | None = None, diffusion=SqrtDiffusion(2.0),
                 n_paths: int = 1, increments=None, scheme: str = "drift_implicit",
                 probe_states=None, path_offset: int = 0):
    """Two diffusions with ordered drifts driven by the same increments.

    Parameters
    ----------
    drift_low, drift_high : callable ``(t, y) -> drift``
        Must satisfy ``drift_low <= drift_high`` on the probe set.
    diffusion : SqrtDiffusion or AdditiveDiffusion
        Shared volatility.
    scheme : {"drift_implicit", "full_truncation"}
        The implicit scheme has a step map nondecreasing in state and drift,
        so ordering is preserved at every node.

    Raises
    ------
    MisuseError
        If the drifts are not ordered on the probe set or ``y0_low > y0_high``.
    """
    if y0_low > y0_high:
        raise MisuseError("y0_low must not exceed y0_high")
    if probe_states is None:
        probe_states = np.linspace(0.0, 10.0, 201) if isinstance(diffusion, SqrtDiffusion) \
            else np.linspace(-10.0, 10.0, 401)
    for t in grid.nodes[:: max(1, grid.n_steps // 10)]:
        gap = drift_high(t, probe_states) - drift_low(t, probe_states)
        if np.any(gap < -1e-12 * np.maximum(1.0, np.abs(drift_high(t, probe_states)))):
            raise MisuseError(f"drift_low exceeds drift_high at t = {t:g}")
    inc = _increments(grid, rng, increments, n_paths, "B", path_offset)
    n = inc.shape[0]
    sqrt_type = isinstance(diffusion, SqrtDiffusion)
    y = np.concatenate([np.full(n, float(y0_low)), np.full(n, float(y0_high))])
    out = np.empty((2 * n, grid.nodes.size))
    out[:, 0] = y
    t, dt = grid.nodes, grid.dt

    def drift(tt, z):
        # broadcast so that constant drifts may return scalars
        return np.concatenate([np.broadcast_to(drift_low(tt, z[:n]), (n,)),
                               np.broadcast_to(drift_high(tt, z[n:]), (n,))])

    for j in range(grid.n_steps):
        dW = np.concatenate([inc[:, j], inc[:, j]])
        if scheme == "drift_implicit":
            y = _monotone_implicit(drift, diffusion, t[j + 1], dt[j], y, dW)
        elif scheme == "full_truncation":
            yp = np.maximum(y, 0.0) if sqrt_type else y
            y = y + drift(t[j], yp) * dt[j] + diffusion(yp) * dW
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        _check_finite(y, j)
        out[:, j + 1] = y
    if sqrt_type:
        out = np.maximum(out, 0.0)
    low = SamplePath(grid, out[:n], inc, "B", scheme)
    high = SamplePath(grid, out[n:], inc, "B", scheme)
    return low, high
