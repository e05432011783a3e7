"""Damped least squares and the physics fits built on it.

:func:`least_squares` is a small Levenberg-Marquardt solver (Marquardt
diagonal scaling, x10 / /10 damping updates, bounds by projection, central
difference Jacobian). Uncertainties come from the linearized covariance
``s^2 (J^T J)^-1`` with ``s^2`` the reduced chi-square.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .spincore import (ARSENIC_75, DEFAULT_CONSTANTS, MAGIC_ANGLE, PhysicalConstants, SpinSystem,
                       PerturbationWarning, axial_hamiltonian, central_shift_second, chemical_shift,
                       spin_operators, transition_frequencies)

__all__ = [
    "FitProblem",
    "FitResult",
    "least_squares",
    "fit_gn",
    "fit_fq_angular",
    "fit_scaling",
    "angular_model",
]


@dataclass
class FitProblem:
    model: Callable[[np.ndarray, np.ndarray], np.ndarray]
    names: Sequence[str]
    p0: Sequence[float]
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray | None = None
    lower: Sequence[float] | None = None
    upper: Sequence[float] | None = None
    model_id: str = "custom"

    def __post_init__(self):
        self.p0 = np.asarray(self.p0, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        p = self.p0.size
        self.lower = np.full(p, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(p, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if len(self.names) != p:
            raise ValueError("one name per parameter required")
        if np.any(self.p0 < self.lower) or np.any(self.p0 > self.upper):
            raise ValueError("initial values must lie inside the bounds")
        if self.y.size < p:
            raise ValueError(f"{self.y.size} data points cannot determine {p} parameters")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("data must be finite")
        if self.sigma is not None:
            self.sigma = np.broadcast_to(np.asarray(self.sigma, float), self.y.shape)
            if np.any(self.sigma <= 0):
                raise ValueError("sigma must be positive")

    def residuals(self, p: np.ndarray) -> np.ndarray:
        r = self.model(self.x, p) - self.y
        return r / self.sigma if self.sigma is not None else r


@dataclass
class FitResult:
    model: str
    estimates: dict[str, float]
    sigmas: dict[str, float]
    residual: float
    n_iter: int
    converged: bool
    message: str = ""
    covariance: np.ndarray | None = None
    extras: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(v):
            v = float(v)
            return v if math.isfinite(v) else None

        out = {
            "model": self.model,
            "estimates": {k: clean(v) for k, v in self.estimates.items()},
            "sigmas": {k: clean(v) for k, v in self.sigmas.items()},
            "residual": clean(self.residual),
            "converged": bool(self.converged),
            "n_iter": int(self.n_iter),
        }
        if self.extras:
            out["derived"] = {k: clean(v) for k, v in self.extras.items()}
        if self.message:
            out["message"] = self.message
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jacobian(problem: FitProblem, p: np.ndarray) -> np.ndarray:
    cols = []
    for i in range(p.size):
        h = max(1e-6 * abs(p[i]), 1e-9)
        up, dn = p.copy(), p.copy()
        up[i] += h
        dn[i] -= h
        cols.append((problem.residuals(up) - problem.residuals(dn)) / (2 * h))
    return np.column_stack(cols)


def least_squares(problem: FitProblem, max_iter: int = 200, ftol: float = 1e-10,
                  gtol: float = 1e-8) -> FitResult:
    """Levenberg-Marquardt minimization of the squared residual norm."""
    p = problem.p0.copy()
    lo, hi = problem.lower, problem.upper
    r = problem.residuals(p)
    if not np.all(np.isfinite(r)):
        raise ValueError("model is not finite at the initial point")
    loss = float(r @ r)
    lam = 1e-3
    converged = False
    message = "maximum iterations reached"
    it = 0
    for it in range(1, max_iter + 1):
        J = _jacobian(problem, p)
        g = J.T @ r
        if np.linalg.norm(g) < gtol or loss == 0.0:
            converged, message = True, "gradient below tolerance"
            break
        A = J.T @ J
        d = np.diag(A).copy()
        d[d == 0] = 1.0
        improved = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = np.clip(p + step, lo, hi)
            r_new = problem.residuals(trial)
            loss_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if loss_new < loss:
                improved = True
                break
            lam *= 10
        if not improved:
            converged, message = True, "no further decrease possible"
            break
        rel = (loss - loss_new) / max(loss, 1e-300)
        p, r, loss = trial, r_new, loss_new
        lam = max(lam / 10, 1e-12)
        if rel < ftol:
            converged, message = True, "relative loss change below tolerance"
            break

    J = _jacobian(problem, p)
    A = J.T @ J
    dof = problem.y.size - p.size
    s2 = loss / dof if dof > 0 else np.nan
    cond = np.linalg.cond(A) if A.size else 0.0
    if not np.isfinite(cond) or cond > 1e14:
        cov = np.linalg.pinv(A) * s2
        message += "; singular normal equations"
    else:
        cov = np.linalg.inv(A) * s2
    sig = np.sqrt(np.clip(np.diag(cov), 0, None)) if dof > 0 else np.full(p.size, np.nan)
    names = list(problem.names)
    return FitResult(
        model=problem.model_id,
        estimates=dict(zip(names, map(float, p))),
        sigmas=dict(zip(names, map(float, sig))),
        residual=math.sqrt(loss),
        n_iter=it,
        converged=converged,
        message=message,
        covariance=cov,
    )


def fit_gn(spectra, B0s: Sequence[float], sys: SpinSystem = ARSENIC_75,
           k: PhysicalConstants = DEFAULT_CONSTANTS, **peak_kw) -> FitResult:
    """Fit f0 = mu_n * g_n * B0 / h to the single dip of each unstrained spectrum."""
    from .endor import peak_positions

    if len(spectra) != len(B0s):
        raise ValueError("one field value per spectrum required")
    centers = []
    for spec in spectra:
        peaks = peak_positions(spec, **peak_kw)
        if len(peaks) != 1:
            raise ValueError(f"g_n fit needs single-dip spectra, found {len(peaks)} dips")
        centers.append(peaks[0].center)
    B = np.asarray(B0s, float)
    f = np.asarray(centers)
    scale = k.mu_n / k.h
    g0 = float(np.sum(f * B) / np.sum(B * B) / scale)
    prob = FitProblem(model=lambda x, p: scale * p[0] * x, names=("g_n",), p0=(g0,), x=B, y=f,
                      model_id="larmor_gn")
    res = least_squares(prob)
    g, sg = res.estimates["g_n"], res.sigmas["g_n"]
    res.extras = {"chemical_shift": chemical_shift(g, sys.g_n_free),
                  "chemical_shift_sigma": sg / sys.g_n_free}
    return res


def angular_model(theta: np.ndarray, f_Q: float, f0: float, transition: str, I: float = 1.5) -> np.ndarray:
    """Exact-diagonalization line shift (Hz) of ``transition`` against tilt angle."""
    Ix = spin_operators(I)[0]
    out = np.empty(len(theta))
    for i, th in enumerate(theta):
        table = transition_frequencies(axial_hamiltonian(I, f0, f_Q, th), Ix)
        out[i] = table.by_label(transition).frequency - f0
    return out


def _near_zero_set(theta: np.ndarray, zeros: Sequence[float], tol: float) -> bool:
    t = np.mod(theta, math.pi)
    t = np.minimum(t, math.pi - t)
    return bool(np.all(np.min(np.abs(t[:, None] - np.asarray(zeros)[None, :]), axis=1) < tol))


def fit_fq_angular(theta: Sequence[float], shift: Sequence[float], order: int, f0: float,
                   transition: str | None = None, sigma=None, I: float = 1.5) -> FitResult:
    """Fit f_Q to line shifts measured against the field/EFG angle (radians).

    ``order=1`` fits a satellite line (default "outer+"); ``order=2`` fits the
    central line, which only sees second-order shifts and determines |f_Q|.
    """
    theta = np.asarray(theta, float)
    shift = np.asarray(shift, float)
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if theta.size < 4:
        raise ValueError("need at least 4 angles")
    if np.ptp(theta) < math.radians(60) - 1e-12:
        raise ValueError("angles must span at least 60 degrees")
    transition = transition or ("outer+" if order == 1 else "inner")
    tol = math.radians(3)
    if order == 1 and _near_zero_set(theta, [MAGIC_ANGLE], tol):
        raise ValueError("degenerate angle set: all angles near the magic angle")
    if order == 2 and _near_zero_set(theta, [0.0, math.acos(1 / 3)], tol):
        raise ValueError("degenerate angle set: all angles near second-order zeros")

    if order == 1:
        m_hi = {"outer+": 1.5, "outer-": -0.5, "inner": 0.5}.get(transition, 1.5)
        basis = -3.0 / (4 * I * (2 * I - 1)) * (2 * m_hi - 1) * 0.5 * (3 * np.cos(theta) ** 2 - 1)
        denom = float(basis @ basis)
        p0 = float(basis @ shift / denom) if denom else 0.0
        lower, upper = -np.inf, np.inf
    else:
        unit = np.array([central_shift_second(1.0, f0, th, I) for th in theta])
        denom = float(unit @ unit)
        ratio = float(unit @ shift / denom) if denom else 0.0
        p0 = math.sqrt(max(ratio, 0.0))
        lower, upper = 0.0, np.inf

    def model(x, p):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PerturbationWarning)
            return angular_model(x, p[0], f0, transition, I)

    prob = FitProblem(model=model, names=("f_Q",), p0=(p0,), x=theta, y=shift, sigma=sigma,
                      lower=(lower,), upper=(upper,), model_id=f"angular_order{order}")
    return least_squares(prob)


def fit_scaling(points: Sequence[tuple[float, float]]) -> FitResult:
    """Power law T2 = T2_1 * n**exponent by a log-log linear fit."""
    arr = np.asarray(points, float)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError("need at least two (n, T2) points")
    n, T2 = arr[:, 0], arr[:, 1]
    if np.any(n < 1) or np.any(T2 <= 0):
        raise ValueError("pulse counts must be >= 1 and T2 positive")
    x, y = np.log(n), np.log(T2)
    slope, icpt = np.polyfit(x, y, 1) if np.ptp(x) > 0 else (0.0, float(y.mean()))
    prob = FitProblem(model=lambda xx, p: p[0] + p[1] * xx, names=("log_prefactor", "exponent"),
                      p0=(icpt, slope), x=x, y=y, model_id="power_law")
    res = least_squares(prob)
    res.extras = {"prefactor": math.exp(res.estimates["log_prefactor"])}
    return res
