"""Large-frequency bound state of the stationary equation

    0 = -Lap phi + omega phi - phi^7,

built two independent ways: Newton iteration on the even real subspace
(:func:`solve_profile`) and the anti-continuous power-series system in the
coupling ``a = 1/omega`` (:func:`series_solve` + :func:`assemble_from_series`).
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import (
    ClosureDominant,
    NoConvergence,
    PreconditionViolation,
    SingularJacobian,
    WeightTooLarge,
)
from .lattice import Boundary, LatticeField, Window, laplacian_values, weighted_norm

OMEGA_MIN = 5.0
A_MAX = 0.2


@dataclass(frozen=True, eq=False)
class SolitonProfile:
    omega: float
    window: Window
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    residual_norm: float
    dphi_residual: float
    d2phi_residual: float
    q_prime: float
    iterations: int = 0

    def field(self, which: str = "phi") -> LatticeField:
        return LatticeField(self.window, getattr(self, which))

    def embed(self, window: Window) -> "SolitonProfile":
        """Zero-pad (or crop) the profile onto another window.

        Cropping is only sensible when the discarded tail is negligible;
        residuals are carried over unchanged.
        """
        def pad(a):
            out = np.zeros(window.size)
            n = min(window.N, self.window.N)
            out[window.N - n : window.N + n + 1] = a[self.window.N - n : self.window.N + n + 1]
            return out

        return SolitonProfile(
            self.omega, window, pad(self.phi), pad(self.dphi), pad(self.d2phi),
            self.residual_norm, self.dphi_residual, self.d2phi_residual, self.q_prime, self.iterations,
        )

    def header(self) -> dict:
        return {"omega": self.omega, "residual_norm": self.residual_norm, "q_prime": self.q_prime}


def core_half_width(omega: float, floor: float = 1e-22) -> int:
    """Smallest N for which the profile tail ``~omega^{-N}`` is below ``floor``."""
    return int(max(4, math.ceil(math.log(1.0 / floor) / math.log(max(omega, 2.0))) + 2))


def _even_to_full(h: np.ndarray) -> np.ndarray:
    return np.concatenate([h[:0:-1], h])


def _even_operator(n: int, diag: np.ndarray, boundary: Boundary) -> np.ndarray:
    """Matrix of ``-Lap + diag`` restricted to even fields, unknowns at x = 0..n."""
    J = np.zeros((n + 1, n + 1))
    idx = np.arange(n + 1)
    J[idx, idx] = 2.0 + diag
    J[idx[:-1], idx[:-1] + 1] = -1.0
    J[idx[1:], idx[1:] - 1] = -1.0
    J[0, 1] = -2.0
    if boundary == Boundary.PERIODIC:
        # x = n neighbours -n = n by evenness
        J[n, n] -= 1.0
    return J


def stationary_residual(phi: np.ndarray, omega: float, boundary: Boundary) -> np.ndarray:
    return -laplacian_values(phi, boundary) + omega * phi - phi**7


def _lu(J):
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            lu = sla.lu_factor(J)
        except (sla.LinAlgError, sla.LinAlgWarning) as exc:
            raise SingularJacobian(str(exc)) from exc
    rcond = sla.lapack.dgecon(lu[0], np.linalg.norm(J, 1), norm="1")[0]
    if not rcond > 1e-13:
        raise SingularJacobian(f"linearization is numerically singular (rcond = {rcond:.2e})")
    return lu


def solve_profile(
    omega: float,
    window: Window,
    tol: float = 1e-10,
    omega_min: float = OMEGA_MIN,
    max_iter: int = 60,
) -> SolitonProfile:
    """Newton solve of the stationary equation from ``omega^{1/6} delta_0``.

    The omega-derivatives come from the linearized operator
    ``L = -Lap + omega - 7 phi^6``::

        L dphi  = -phi
        L d2phi = -2 dphi + 42 phi^5 dphi^2
    """
    if not omega >= omega_min:
        raise PreconditionViolation(f"omega = {omega} below admissible threshold {omega_min}")
    if not 0 < tol <= 1e-6:
        raise PreconditionViolation(f"tol must lie in (0, 1e-6], got {tol}")
    n, bd = window.N, window.boundary
    h = np.zeros(n + 1)
    h[0] = omega ** (1.0 / 6.0)
    full = _even_to_full(h)
    res = stationary_residual(full, omega, bd)
    rnorm = float(np.linalg.norm(res))
    it = 0
    while rnorm > tol:
        if it >= max_iter:
            raise NoConvergence(f"profile Newton stalled at residual {rnorm:.3e} after {it} iterations (omega={omega})")
        J = _even_operator(n, omega - 7.0 * h**6, bd)
        step = sla.lu_solve(_lu(J), -res[n:])
        lam = 1.0
        while True:
            trial = h + lam * step
            tfull = _even_to_full(trial)
            tres = stationary_residual(tfull, omega, bd)
            tnorm = float(np.linalg.norm(tres))
            if tnorm < rnorm or lam < 1e-4:
                break
            lam *= 0.5
        if tnorm >= rnorm and rnorm <= 1e3 * tol:
            # roundoff floor just above tol
            break
        h, full, res, rnorm = trial, tfull, tres, tnorm
        it += 1
    if rnorm > tol:
        raise NoConvergence(f"profile residual {rnorm:.3e} above tolerance {tol:.1e} (omega={omega})")
    lu = _lu(_even_operator(n, omega - 7.0 * h**6, bd))
    dh = sla.lu_solve(lu, -h)
    d2h = sla.lu_solve(lu, -2.0 * dh + 42.0 * h**5 * dh**2)
    phi, dphi, d2phi = full, _even_to_full(dh), _even_to_full(d2h)

    def lin(v):
        return -laplacian_values(v, bd) + (omega - 7.0 * phi**6) * v

    r1 = float(np.linalg.norm(lin(dphi) + phi))
    r2 = float(np.linalg.norm(lin(d2phi) + 2.0 * dphi - 42.0 * phi**5 * dphi**2))
    for a in (phi, dphi, d2phi):
        a.setflags(write=False)
    return SolitonProfile(
        omega=float(omega), window=window, phi=phi, dphi=dphi, d2phi=d2phi,
        residual_norm=rnorm, dphi_residual=r1, d2phi_residual=r2,
        q_prime=float(np.dot(dphi, phi)), iterations=it,
    )


# anti-continuous series ----------------------------------------------------

_BINOM7 = np.array([comb(7, n) for n in range(8)], dtype=float)


@dataclass(frozen=True, eq=False)
class SeriesSolution:
    a: float
    J: int
    psi: np.ndarray
    residual_norm: float
    closure_term: float
    iterations: int = 0


def series_seed(J: int) -> np.ndarray:
    psi = np.ones(J + 1)
    psi[0] = 1.0 / 3.0
    return psi


def series_residual(psi: np.ndarray, a: float) -> np.ndarray:
    """Truncated system F_0..F_J with the closure ``psi_{J+1} = psi_J``."""
    J = len(psi) - 1
    ext = np.append(psi, psi[J])
    F = np.empty(J + 1)
    p0 = psi[0]
    n = np.arange(1, 8)
    poly = np.sum(_BINOM7[1:] * a ** (n - 1) * p0**n)
    F[0] = 2.0 - 2.0 * a * ext[1] + 2.0 * a * p0 + p0 - poly
    F[1] = -1.0 - a * p0 + 2.0 * a * ext[1] - a * a * ext[2] + ext[1] - a**6 * ext[1] ** 7
    j = np.arange(2, J + 1)
    F[2:] = -ext[j - 1] + 2.0 * a * ext[j] - a * a * ext[j + 1] + ext[j] - a ** (6 * j) * ext[j] ** 7
    return F


def series_jacobian(psi: np.ndarray, a: float) -> np.ndarray:
    J = len(psi) - 1
    D = np.zeros((J + 1, J + 1))
    p0 = psi[0]
    n = np.arange(1, 8)
    D[0, 0] = 2.0 * a + 1.0 - np.sum(_BINOM7[1:] * n * a ** (n - 1) * p0 ** (n - 1))
    D[0, 1] = -2.0 * a
    D[1, 0] = -a
    D[1, 1] = 2.0 * a + 1.0 - 7.0 * a**6 * psi[1] ** 6
    if J >= 2:
        D[1, 2] = -a * a
    for j in range(2, J + 1):
        D[j, j - 1] = -1.0
        D[j, j] = 2.0 * a + 1.0 - 7.0 * a ** (6 * j) * psi[j] ** 6
        if j < J:
            D[j, j + 1] = -a * a
    D[J, J] -= a * a  # closure psi_{J+1} = psi_J
    return D


def series_solve(a: float, J: int = 10, tol: float = 1e-13, a_max: float = A_MAX, max_iter: int = 50) -> SeriesSolution:
    """Newton on the truncated anti-continuous system, seeded at ``(1/3, 1, 1, ...)``.

    The closure monitor is the neglected coupling in physical units,
    ``|a|^{J+2} |psi_J|``: it must stay below ``tol`` or the truncation
    would visibly distort the assembled profile.
    """
    if abs(a) > a_max:
        raise PreconditionViolation(f"|a| = {abs(a)} exceeds a_max = {a_max}")
    if J < 3:
        raise PreconditionViolation(f"truncation index J must be >= 3, got {J}")
    psi = series_seed(J)
    F = series_residual(psi, a)
    it = 0
    while np.max(np.abs(F)) > tol:
        if it >= max_iter:
            raise NoConvergence(f"series Newton residual {np.max(np.abs(F)):.3e} after {it} iterations")
        psi = psi + np.linalg.solve(series_jacobian(psi, a), -F)
        F = series_residual(psi, a)
        it += 1
    closure = abs(a) ** (J + 2) * abs(psi[J])
    if closure > tol:
        raise ClosureDominant(f"closure term {closure:.3e} exceeds tol {tol:.1e}; increase J")
    psi.setflags(write=False)
    return SeriesSolution(a=float(a), J=J, psi=psi, residual_norm=float(np.max(np.abs(F))), closure_term=closure, iterations=it)


def assemble_from_series(s: SeriesSolution, window: Window) -> LatticeField:
    if not s.a > 0:
        raise PreconditionViolation("assembly needs a > 0 (omega = 1/a)")
    omega = 1.0 / s.a
    v = np.zeros(window.size)
    n = window.N
    v[n] = 1.0 + s.a * s.psi[0]
    for j in range(1, min(len(s.psi) - 1, n) + 1):
        v[n + j] = v[n - j] = s.a**j * s.psi[j]
    return LatticeField(window, omega ** (1.0 / 6.0) * v)


# asymptotic checks ---------------------------------------------------------

@dataclass
class AsymptoticsReport:
    a_weight: float
    omega: list = field(default_factory=list)
    R1: list = field(default_factory=list)
    R2: list = field(default_factory=list)
    slope: list = field(default_factory=list)
    decay: dict = field(default_factory=dict)  # omega -> (x, log phi)

    @property
    def R1_spread(self) -> float:
        return max(self.R1) / min(self.R1)

    @property
    def R2_spread(self) -> float:
        return max(self.R2) / min(self.R2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["omega", "R1", "R2", "decay_slope"])
        for row in zip(self.omega, self.R1, self.R2, self.slope):
            w.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue()


def decay_slope(profile: SolitonProfile, xmax: int = 8) -> float:
    """Mean of ``log(phi(x)/phi(x+1)) / log(omega)`` over ``1 <= x <= xmax``."""
    n = profile.window.N
    if n < xmax + 1:
        raise PreconditionViolation(f"window half width {n} too small for decay fit up to x={xmax + 1}")
    p = profile.phi[n + 1 : n + xmax + 2]
    return float(np.mean(np.log(p[:-1] / p[1:])) / math.log(profile.omega))


def verify_asymptotics(
    omega_grid: Sequence[float],
    a_weight: float = 1.0,
    window: Window | None = None,
    tol: float = 1e-9,
    omega_min: float = OMEGA_MIN,
) -> AsymptoticsReport:
    grid = [float(w) for w in omega_grid]
    if grid != sorted(grid):
        raise PreconditionViolation("omega grid must be sorted ascending")
    if math.exp(a_weight) >= grid[0]:
        raise WeightTooLarge(
            f"exp({a_weight}) = {math.exp(a_weight):.4g} >= omega = {grid[0]}; weighted tail diverges with N"
        )
    window = window or Window(40)
    rep = AsymptoticsReport(a_weight=a_weight)
    d0 = np.zeros(window.size)
    d0[window.N] = 1.0
    for om in grid:
        p = solve_profile(om, window, tol=tol, omega_min=omega_min)
        ref = [om ** (1 / 6) * d0, (1 / 6) * om ** (-5 / 6) * d0, -(5 / 36) * om ** (-11 / 6) * d0]
        derivs = [p.phi, p.dphi, p.d2phi]
        r1 = r2 = 0.0
        for j, (d, r) in enumerate(zip(derivs, ref)):
            r1 += om**j * weighted_norm(LatticeField(window, d - r), 2, a_weight)
            off = d.copy()
            off[window.N] = 0.0
            r2 += om**j * weighted_norm(LatticeField(window, off), 2, a_weight)
        rep.omega.append(om)
        rep.R1.append(om ** (5 / 6) * r1)
        rep.R2.append(om ** (5 / 6) * r2)
        rep.slope.append(decay_slope(p))
        xs = np.arange(0, min(window.N, 12) + 1)
        rep.decay[om] = (xs, np.log(p.phi[window.N + xs]))
    return rep


def q_prime_scan(omega_grid: Sequence[float], window: Window | None = None, tol: float = 1e-9) -> list[tuple[float, float]]:
    """Rows ``(omega, q'(omega) omega^{2/3})``; the leading-order limit is 1/6."""
    rows = []
    for om in omega_grid:
        w = window or Window(core_half_width(om))
        p = solve_profile(om, w, tol=tol)
        rows.append((float(om), p.q_prime * om ** (2.0 / 3.0)))
    return rows
