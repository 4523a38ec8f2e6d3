"""Stationary averages of the fast variable by quadrature.

The fast variable, frozen at coefficients ``(K, L, M)``, has stationary
density proportional to ``exp(-2 (L/M) G(y))``; the averaged observable is

    w(k, l, m) = int f((k/m) y) exp(-2 (l/m) G(y)) dy / int exp(-2 (l/m) G(y)) dy.

Both integrands are even, so everything is computed on ``[0, X]`` where the
cut ``X`` carries a certificate: for ``y >= X`` convexity of ``G`` on the half
line gives ``G(y) >= G(X) + g(X) (y - X)``, so the discarded tail is bounded
by an elementary exponential integral.

References
----------
.. [1] Karlin, S. and Taylor, H. M., "A Second Course in Stochastic
   Processes", Academic Press, 1981, ch. 15 (speed measure, scale function).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .model import CoefficientPaths, ObservableFunction, ReversionFunction

__all__ = [
    "DivergenceError", "QuadratureSpec", "LimitCurve", "stationary_weight",
    "limit_average", "limit_average_details", "limit_average_bracket",
    "bracket_parameters", "speed_density_pm", "speed_measure_mass",
    "truncation_point", "limit_curve", "write_limit_curve_csv",
]


class DivergenceError(ArithmeticError):
    """No finite truncation point certifies the requested tail mass."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and truncation policy.

    Attributes
    ----------
    rel_tol, abs_tol : float
        Panel tolerances; ``abs_tol`` also caps the certified tail mass
        relative to the normalising integral.
    max_cut : float
        Largest truncation point tried before giving up.
    cut_stretch : float
        Multiplier applied to the certified cut (1 = the certified point).
    half_line : bool
        Integrate on ``[0, X]`` and double (default) or on ``[-X, X]``.
    limit : int
        Maximum number of adaptive panels.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_cut: float = 1e6
    cut_stretch: float = 1.0
    half_line: bool = True
    limit: int = 10_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_cut > 0 or not self.cut_stretch >= 1:
            raise ValueError("max_cut > 0 and cut_stretch >= 1 required")


DEFAULT_SPEC = QuadratureSpec()


def stationary_weight(rf: ReversionFunction, l_over_m: float, y):
    """``exp(-2 * l_over_m * G(y))``; underflows gracefully to 0."""
    if not l_over_m > 0:
        raise ValueError("l_over_m must be positive")
    with np.errstate(over="ignore", under="ignore"):
        out = np.exp(-2.0 * l_over_m * rf.antiderivative(y))
    if np.any(np.isnan(out)):
        raise ArithmeticError("stationary weight is NaN; check G")
    return out


def _tail_bound(rf, rate, scale, C, qp, X):
    """Upper bound on ``int_X^inf C ((scale y)^qp + 1) exp(-2 rate G(y)) dy``."""
    gX = float(rf(np.float64(X)))
    lam = 2.0 * rate * gX
    if not lam > 0:
        return math.inf
    log_w = -2.0 * rate * float(rf.antiderivative(np.float64(X)))
    # (X + u)^qp <= c_q (X^qp + u^qp)
    c_q = max(1.0, 2.0 ** (qp - 1.0))
    poly = 1.0 / lam
    if scale > 0 and qp > 0:
        poly += scale ** qp * c_q * (X ** qp / lam + math.gamma(qp + 1.0) / lam ** (qp + 1.0))
    elif scale > 0:
        poly += 1.0 / lam
    if log_w < -745:
        return 0.0
    return C * poly * math.exp(log_w)


def _mass_floor(rf, rate, X):
    # G increasing on [0, inf) => int_0^X w >= x1 * w(x1) for any x1 <= X
    x1 = X * 0.5 ** np.arange(0, 80)
    vals = x1 * stationary_weight(rf, rate, x1)
    return float(vals.max())


def truncation_point(rf: ReversionFunction, rate: float, scale: float = 0.0,
                     C: float = 1.0, q_prime: float = 0.0,
                     spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Certified cut ``X`` for ``int_0^inf C((scale y)^q' + 1) exp(-2 rate G(y)) dy``.

    The discarded tail is at most ``spec.abs_tol`` times a lower bound of
    ``int_0^X exp(-2 rate G)``. Starting from ``X = 1`` the cut is halved while
    the certificate still holds, otherwise doubled.

    Raises
    ------
    DivergenceError
        If no cut below ``spec.max_cut`` works.
    """
    if not rate > 0:
        raise ValueError("rate must be positive")

    def ok(X):
        with np.errstate(over="ignore", under="ignore"):
            return _tail_bound(rf, rate, scale, C, q_prime, X) <= spec.abs_tol * _mass_floor(rf, rate, X)

    X = 1.0
    if ok(X):
        while X > 1e-8 and ok(0.5 * X):
            X *= 0.5
    else:
        while not ok(X):
            X *= 2.0
            if X > spec.max_cut:
                raise DivergenceError(
                    f"no truncation point below {spec.max_cut:g} certifies the tail "
                    f"(rate={rate:g}, scale={scale:g}, q'={q_prime:g})")
    return X * spec.cut_stretch


@dataclass(frozen=True)
class AverageDetails:
    value: float
    numerator: float
    denominator: float
    cut: float
    error_estimate: float


def _panel_points(of, scale, cut, half_line):
    pts = []
    if scale > 0:
        pts = [a / scale for a in of.breakpoints if 0 < a / scale < cut]
    if not half_line:
        pts = sorted([-p for p in pts] + [0.0] + pts)
    return pts or None


def limit_average_details(rf: ReversionFunction, of: ObservableFunction, k: float,
                          l: float, m: float, spec: QuadratureSpec = DEFAULT_SPEC) -> AverageDetails:
    """:func:`limit_average` together with its integrals, cut and error estimate."""
    if not (l > 0 and m > 0):
        raise ValueError("l and m must be positive")
    if not k >= 0:
        raise ValueError("k must be nonnegative")
    rate, scale = l / m, k / m
    if of.constant_value is not None or scale == 0.0:
        v = float(of(np.array([0.0]))[0])
        return AverageDetails(v, math.nan, math.nan, 0.0, 0.0)
    cut = truncation_point(rf, rate, scale, of.C_f, of.q_prime, spec)

    def integrand(y):
        w = stationary_weight(rf, rate, y)
        return np.array([float(of(scale * y)) * w, w])

    lo = 0.0 if spec.half_line else -cut
    res, err = integrate.quad_vec(
        integrand, lo, cut, epsabs=spec.abs_tol, epsrel=spec.rel_tol, norm="max",
        limit=spec.limit, points=_panel_points(of, scale, cut, spec.half_line))
    num, den = float(res[0]), float(res[1])
    if spec.half_line:
        num, den = 2.0 * num, 2.0 * den
    if not (math.isfinite(num) and den > 0):
        raise DivergenceError(f"non-finite stationary integrals (num={num}, den={den})")
    return AverageDetails(num / den, num, den, cut, float(err) / den)


def limit_average(rf: ReversionFunction, of: ObservableFunction, k: float, l: float,
                  m: float, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Stationary average ``w(k, l, m)`` of ``f((k/m) Y)``, ``Y ~ exp(-2(l/m)G)``.

    Examples
    --------
    >>> from fastrevert.model import reversion_from_name, observable_from_name
    >>> g = reversion_from_name("linear"); f = observable_from_name("even_power", power=2)
    >>> round(limit_average(g, f, 1.0, 1.0, 1.0), 12)
    0.5
    """
    return limit_average_details(rf, of, k, l, m, spec).value


def bracket_parameters(k: float, l: float, m: float, delta: float, sign: str):
    """Shifted ``(k, l, m)`` defining the upper (``"+"``) or lower (``"-"``) bracket."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if sign == "+":
        if not (l - delta > 0 and m - delta > 0):
            raise ValueError("upper bracket needs l - delta > 0 and m - delta > 0")
        return k + delta, l - delta, m - delta
    if sign == "-":
        if delta > 1:
            raise ValueError("lower bracket needs delta <= 1")
        return k * (1.0 - delta), l + delta, m + delta
    raise ValueError("sign must be '+' or '-'")


def limit_average_bracket(rf: ReversionFunction, of: ObservableFunction, k: float,
                          l: float, m: float, delta: float, sign: str,
                          spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Upper or lower bracket of ``w(k, l, m)`` with band width ``delta``.

    ``"+"`` evaluates the average at ``(k+delta, l-delta, m-delta)``, ``"-"``
    at ``(k(1-delta), l+delta, m+delta)``. For ``f`` nondecreasing on the
    half line the lower bracket is below ``w`` and the upper one above it,
    since the stationary law of ``|Y|`` is stochastically increasing in
    ``m/l`` and the argument scale ``k/m`` grows in the same direction.
    """
    return limit_average(rf, of, *bracket_parameters(k, l, m, delta, sign), spec=spec)


def _pm_params(l, m, delta, sign):
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if sign == "+":
        lp, mp = l - delta, m - delta
    elif sign == "-":
        lp, mp = l + delta, m + delta
    else:
        raise ValueError("sign must be '+' or '-'")
    if not (lp > 0 and mp > 0):
        raise ValueError("shifted l and m must be positive")
    return lp, mp


def speed_density_pm(rf: ReversionFunction, l: float, m: float, delta: float,
                     sign: str, y):
    """Speed density of the sandwich process ``Y^+`` or ``Y^-``.

    ``nu(y) = 0.5 y^{-1/2} exp(-2 (l'/m') [G(m' sqrt(y)) - G(m')])`` with
    ``(l', m') = (l -+ delta, m -+ delta)``. Infinite at ``y = 0``.

    Raises
    ------
    ValueError
        If any ``y < 0``.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(np.isnan(y)):
        raise ValueError("speed density is defined for y >= 0 only")
    lp, mp = _pm_params(l, m, delta, sign)
    r = lp / mp
    root = np.sqrt(y)
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        expo = -2.0 * r * (rf.antiderivative(mp * root) - rf.antiderivative(np.float64(mp)))
        return 0.5 * np.exp(expo) / root


def speed_measure_mass(rf: ReversionFunction, l: float, m: float, delta: float,
                       sign: str, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Total mass of :func:`speed_density_pm`.

    The substitution ``y = x^2`` removes the ``y^{-1/2}`` singularity:
    the mass equals ``(1/m') int_0^inf exp(-2 (l'/m') [G(z) - G(m')]) dz``.
    """
    lp, mp = _pm_params(l, m, delta, sign)
    r = lp / mp
    cut = truncation_point(rf, r, spec=spec)
    shift = float(rf.antiderivative(np.float64(mp)))

    def integrand(z):
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(-2.0 * r * (rf.antiderivative(z) - shift))

    val, _ = integrate.quad_vec(integrand, 0.0, cut, epsabs=spec.abs_tol,
                                epsrel=spec.rel_tol, limit=spec.limit)
    return float(val) / mp


# ---------------------------------------------------------------------------
# limit curve


@dataclass(frozen=True, eq=False)
class LimitCurve:
    """Pointwise averages ``w_t`` and their cumulative ``int_0^t H w ds``.

    Arrays have shape ``(n_paths, n_nodes)``.
    """

    times: np.ndarray
    w_values: np.ndarray
    rhs_integral: np.ndarray


def cumulative_trapezoid(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid along the last axis, starting at exactly 0."""
    out = np.zeros(values.shape)
    out[..., 1:] = np.cumsum(0.5 * (values[..., 1:] + values[..., :-1]) * np.diff(times), axis=-1)
    return out


def limit_curve(rf: ReversionFunction, of: ObservableFunction, coeff_paths: CoefficientPaths,
                spec: QuadratureSpec = DEFAULT_SPEC, cache: dict | None = None) -> LimitCurve:
    """Right-hand side curve of the averaging limit along sampled coefficients.

    ``limit_average`` is called once per distinct ``(K, L, M)`` triple; pass a
    dict as ``cache`` to share evaluations across calls (one cache per worker).
    """
    cache = {} if cache is None else cache
    K, L, M, H = (np.asarray(coeff_paths[n]) for n in ("K", "L", "M", "H"))
    t = coeff_paths.grid.nodes
    if coeff_paths.deterministic and coeff_paths.n_paths > 1:
        single = limit_curve(rf, of, coeff_paths.path(0), spec, cache)
        shape = (coeff_paths.n_paths, t.size)
        return LimitCurve(t, np.broadcast_to(single.w_values, shape),
                          np.broadcast_to(single.rhs_integral, shape))
    trip = np.stack([K, L, M], axis=-1).reshape(-1, 3)
    uniq, inverse = np.unique(trip, axis=0, return_inverse=True)
    vals = np.empty(len(uniq))
    for i, (k, l, m) in enumerate(uniq):
        key = (float(k), float(l), float(m))
        if key not in cache:
            cache[key] = limit_average(rf, of, *key, spec=spec)
        vals[i] = cache[key]
    w = vals[np.ravel(inverse)].reshape(K.shape)
    return LimitCurve(t, w, cumulative_trapezoid(H * w, t))


def write_limit_curve_csv(curve: LimitCurve, path, path_index: int = 0) -> None:
    """CSV with columns ``t, w, rhs_integral`` in 17-significant-digit form."""
    w = np.atleast_2d(curve.w_values)[path_index]
    r = np.atleast_2d(curve.rhs_integral)[path_index]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,w,rhs_integral\n")
        for row in zip(curve.times, w, r):
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")
