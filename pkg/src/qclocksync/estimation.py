"""Phase and beat-envelope recovery from finite measurement counts.

The clock frequencies are exactly known constants (they define the species),
so only phases are fitted. The single-tone fit is a weighted linear least
squares in the (a, b, c) parametrization p(t) = a cos(w t) + b sin(w t) + c,
which is convex and has no initialization sensitivity. The beat-envelope fit
profiles the single nonlinear fast-phase parameter over a grid and polishes
it with bounded scalar minimization; for each candidate fast phase the
envelope parameters are an exact linear subproblem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .ensemble import PopulationSeries
from .errors import EstimationError, InconclusiveError, RankDeficientError
from .quantum import TWO_PI, ClockSpecies, normalize_phase


@dataclass(frozen=True)
class PhaseEstimate:
    """A fitted phase (radians) with 1-standard-error uncertainty."""

    phase: float
    sigma: float
    n_samples_used: int
    residual: float  # weighted sum of squared residuals


class BeatSeries:
    """Per-time difference of two empirical oscillation estimates."""

    __slots__ = ("times", "diff", "sigma")

    def __init__(self, times, diff, sigma):
        self.times = np.asarray(times, dtype=np.float64)
        self.diff = np.asarray(diff, dtype=np.float64)
        self.sigma = np.asarray(sigma, dtype=np.float64)
        n = self.times.shape[0]
        if self.diff.shape != (n,) or self.sigma.shape != (n,):
            raise ValueError("beat series arrays must have matching lengths")
        if np.any(np.abs(self.diff) > 1.0 + 1e-12):
            raise ValueError("beat differences must lie in [-1, 1]")
        if np.any(self.sigma < 0):
            raise ValueError("per-point sigma must be nonnegative")

    def __len__(self) -> int:
        return self.times.shape[0]


def _binomial_variance(count_pos: np.ndarray, batch: np.ndarray) -> np.ndarray:
    # Shrunk proportion keeps the variance strictly positive at p_hat in {0, 1}
    # without visibly biasing the weights at realistic batch sizes.
    p_shrunk = (count_pos + 0.5) / (batch + 1.0)
    return p_shrunk * (1.0 - p_shrunk) / batch


def _weighted_lstsq(x: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Solve min_b sum w (y - X b)^2; returns (beta, covariance, chi2)."""
    sw = np.sqrt(w)
    xw = x * sw[:, None]
    yw = y * sw
    xtx = xw.T @ xw
    if np.linalg.matrix_rank(xtx, tol=None) < x.shape[1]:
        raise RankDeficientError("design matrix is rank deficient")
    beta = np.linalg.solve(xtx, xw.T @ yw)
    cov = np.linalg.inv(xtx)
    resid = yw - xw @ beta
    return beta, cov, float(resid @ resid)


def estimate_phase(series: PopulationSeries, species: ClockSpecies) -> PhaseEstimate:
    """Fit p_hat(t) = (1 + cos(w t + phase))/2 by weighted linear least squares.

    The constant term is fitted rather than pinned at 1/2; a fitted constant
    far from 1/2 inflates the reported residual and flags sampling bugs.
    """
    if np.any(series.batch_size <= 0):
        raise EstimationError("series contains empty batches")
    t = series.times
    if np.unique(t).shape[0] < 3:
        raise RankDeficientError("phase fit needs at least 3 distinct sample times")
    y = series.p_hat()
    w = 1.0 / _binomial_variance(series.count_pos, series.batch_size)
    wt = species.omega * t
    x = np.column_stack([np.cos(wt), np.sin(wt), np.ones_like(t)])
    beta, cov, chi2 = _weighted_lstsq(x, y, w)
    a, b, _c = beta
    r2 = a * a + b * b
    if r2 <= 0.0:
        raise EstimationError("oscillation amplitude is zero; phase undefined")
    phase = math.atan2(-b, a)
    # delta method on phase = atan2(-b, a)
    grad = np.array([b / r2, -a / r2, 0.0])
    var = float(grad @ cov @ grad)
    return PhaseEstimate(
        phase=normalize_phase(phase),
        sigma=math.sqrt(max(var, 0.0)),
        n_samples_used=len(series),
        residual=chi2,
    )


def beat_difference(series1: PopulationSeries, series2: PopulationSeries) -> BeatSeries:
    """Pointwise p_hat_1 - p_hat_2 on a shared time grid, with propagated sigma."""
    if not np.array_equal(series1.times, series2.times):
        raise EstimationError("beat difference requires identical time grids")
    diff = series1.p_hat() - series2.p_hat()
    var = (_binomial_variance(series1.count_pos, series1.batch_size)
           + _binomial_variance(series2.count_pos, series2.batch_size))
    return BeatSeries(series1.times, diff, np.sqrt(var))


def _beat_weights(beats: BeatSeries) -> np.ndarray:
    if np.all(beats.sigma == 0.0):
        return np.ones_like(beats.sigma)
    floor = float(np.max(beats.sigma)) * 1e-9
    return 1.0 / np.maximum(beats.sigma, floor) ** 2


def envelope_phase(beats: BeatSeries, omega1: float, omega2: float) -> PhaseEstimate:
    """Phase of the slow beat envelope, canonicalized into [0, pi).

    Model: diff(t) = E sin(w_e t + psi_env) sin(w_f t + psi_fast) with
    w_e = |omega1 - omega2|/2 and w_f = (omega1 + omega2)/2. For fixed
    psi_fast the model is linear in (E sin psi_env, E cos psi_env), so
    psi_fast is profiled over [0, pi) and refined; psi_env comes from the
    linear subproblem at the optimum. The (psi_env, psi_fast) ->
    (psi_env + pi, psi_fast + pi) ambiguity is resolved on psi_env alone,
    which keeps the returned phase independent of any basis-phase offset
    hiding in psi_fast.
    """
    if omega1 == omega2:
        raise EstimationError("envelope extraction needs two distinct frequencies")
    if len(beats) < 5:
        raise EstimationError("too few points for an envelope fit")
    w_e = abs(omega1 - omega2) / 2.0
    w_f = (omega1 + omega2) / 2.0
    t = beats.times
    max_gap = float(np.max(np.diff(t)))
    if max_gap >= math.pi / (omega1 + omega2):
        raise EstimationError(
            f"grid spacing {max_gap:.4g} s does not resolve the fast oscillation"
        )
    w = _beat_weights(beats)
    ce, se = np.cos(w_e * t), np.sin(w_e * t)

    def linear_fit(psi_fast: float):
        s = np.sin(w_f * t + psi_fast)
        x = np.column_stack([ce * s, se * s])
        return _weighted_lstsq(x, beats.diff, w)

    def chi2(psi_fast: float) -> float:
        try:
            return linear_fit(psi_fast)[2]
        except RankDeficientError:
            return math.inf

    grid = np.linspace(0.0, math.pi, 97)[:-1]
    chis = np.array([chi2(p) for p in grid])
    k = int(np.argmin(chis))
    step = grid[1] - grid[0]
    res = minimize_scalar(chi2, bounds=(grid[k] - step, grid[k] + step), method="bounded",
                          options={"xatol": 1e-12})
    psi_fast = float(res.x)
    beta, _cov2, chi2_min = linear_fit(psi_fast)
    p_coef, q_coef = beta  # E sin(psi_env), E cos(psi_env)
    amp = math.hypot(p_coef, q_coef)
    if amp == 0.0:
        raise EstimationError("envelope amplitude is zero; phase undefined")
    noise_floor = float(np.median(beats.sigma))
    if noise_floor > 0.0 and amp < 3.0 * noise_floor:
        raise InconclusiveError(
            f"envelope amplitude {amp:.3g} below noise floor 3 x {noise_floor:.3g}"
        )

    # full covariance over (P, Q, psi_fast) at the optimum
    s = np.sin(w_f * t + psi_fast)
    cfast = np.cos(w_f * t + psi_fast)
    j = np.column_stack([ce * s, se * s, (p_coef * ce + q_coef * se) * cfast])
    sw = np.sqrt(w)
    jtj = (j * sw[:, None]).T @ (j * sw[:, None])
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj)
    grad = np.array([q_coef / amp**2, -p_coef / amp**2, 0.0])
    var = float(grad @ cov @ grad)

    psi_env = math.atan2(p_coef, q_coef)  # envelope E sin(w_e t + psi_env)
    psi_env = normalize_phase(psi_env)
    if psi_env >= math.pi:  # fold the sign ambiguity using psi_env only
        psi_env -= math.pi
    return PhaseEstimate(
        phase=psi_env,
        sigma=math.sqrt(max(var, 0.0)),
        n_samples_used=len(beats),
        residual=chi2_min,
    )


def first_envelope_maximum(beats: BeatSeries, omega1: float, omega2: float) -> tuple[float, float]:
    """Time of the first maximum of the fitted envelope magnitude, with sigma.

    For envelope E sin(w_e t + psi_env) the first magnitude maximum after the
    collapse epoch sits where the argument reaches pi/2 (mod pi); noiseless
    beats give exactly t = pi / |omega1 - omega2|.
    """
    est = envelope_phase(beats, omega1, omega2)
    w_e = abs(omega1 - omega2) / 2.0
    # wrap psi_env into (-pi/2, pi/2] so the maximum lands in (0, pi/w_e]
    psi = est.phase if est.phase <= math.pi / 2.0 else est.phase - math.pi
    t_max = (math.pi / 2.0 - psi) / w_e
    sigma = est.sigma / w_e
    t_lo, t_hi = float(beats.times[0]), float(beats.times[-1])
    if not (t_lo <= t_max <= t_hi):
        raise InconclusiveError(
            f"first envelope maximum {t_max:.6g} s lies outside the sampled "
            f"window [{t_lo:.6g}, {t_hi:.6g}] s"
        )
    return t_max, sigma
