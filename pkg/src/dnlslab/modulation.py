"""Modulation decomposition ``u = e^{i theta} phi_omega + xi`` and its dynamics.

Conventions: ``<u, v> = Re sum u conj(v)``, ``Omega(u, v) = <i u, v>``,
``phi[theta, omega] = e^{i theta} phi_omega``. The tangent fields are

    d_theta phi = i phi[theta, omega]         d_omega phi = e^{i theta} phi'
    d_theta^2 phi = -phi[theta, omega]        d_theta d_omega phi = i e^{i theta} phi'
    d_omega^2 phi = e^{i theta} phi''

and ``q'(omega) = <phi', phi>``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateProfile,
    NearSingularA,
    NoConvergence,
    NumericalFailure,
    PreconditionViolation,
    ProfileFailure,
    TubeExit,
)
from .lattice import Boundary, LatticeField, Window, laplacian_values, symplectic_values
from .linear import free_propagate_values
from .soliton import SolitonProfile, core_half_width, solve_profile

TOL_ORTH = 1e-10
DET_GUARD = 0.1


class ProfileCache:
    """Profiles on a small core window, embedded into ``window`` on demand.

    Keys are ``omega`` rounded to 12 significant digits; a miss solves at
    the requested ``omega`` itself.
    """

    def __init__(self, window: Window, tol: float = 1e-12, core: int | None = None):
        self.window, self.tol, self.core = window, tol, core
        self._store: dict[float, SolitonProfile] = {}
        self.solves = 0

    @staticmethod
    def key(omega: float) -> float:
        return float(f"{omega:.11e}")

    def get(self, omega: float) -> SolitonProfile:
        k = self.key(omega)
        core = self._store.get(k)
        if core is None:
            n = self.core or core_half_width(omega)
            n = min(n, self.window.N)
            try:
                core = solve_profile(omega, Window(n, Boundary.DIRICHLET), tol=self.tol)
            except NumericalFailure as exc:
                raise ProfileFailure(f"profile solve failed at omega = {omega}: {exc}") from exc
            except PreconditionViolation as exc:
                raise ProfileFailure(f"omega = {omega} is not admissible: {exc}") from exc
            self._store[k] = core
            self.solves += 1
        if core.omega != omega:
            # second-order shift inside the quantization cell (error ~ 1e-36 relative)
            d = omega - core.omega
            phi = core.phi + d * core.dphi + 0.5 * d * d * core.d2phi
            dphi = core.dphi + d * core.d2phi
            core = SolitonProfile(omega, core.window, phi, dphi, core.d2phi, core.residual_norm,
                                  core.dphi_residual, core.d2phi_residual, float(np.dot(dphi, phi)), 0)
        return core.embed(self.window)

    def __len__(self):
        return len(self._store)


@dataclass(frozen=True)
class Tangents:
    """Tangent and second-derivative fields of ``phi[theta, omega]``."""

    phi: np.ndarray
    d_th: np.ndarray
    d_om: np.ndarray
    d_thth: np.ndarray
    d_thom: np.ndarray
    d_omom: np.ndarray

    @classmethod
    def at(cls, theta: float, prof: SolitonProfile) -> "Tangents":
        g = np.exp(1j * theta)
        phi = g * prof.phi
        dom = g * prof.dphi
        return cls(phi, 1j * phi, dom, -phi, 1j * dom, g * prof.d2phi)


def _omega(u, v):
    return symplectic_values(u, v)


def _rinner(u, v):
    return float(np.real(np.vdot(v, u)))


@dataclass(frozen=True, eq=False)
class ModulationState:
    theta_unwrapped: float
    omega: float
    xi: LatticeField
    eta: LatticeField
    profile: SolitonProfile
    orth_residuals: tuple[float, float]
    iterations: int = 0

    @property
    def theta(self) -> float:
        return self.theta_unwrapped % (2 * math.pi)

    @property
    def window(self) -> Window:
        return self.xi.window

    def tangents(self) -> Tangents:
        return Tangents.at(self.theta_unwrapped, self.profile)


def orthogonality(xi: np.ndarray, tg: Tangents) -> np.ndarray:
    return np.array([_omega(xi, tg.d_th), _omega(xi, tg.d_om)])


def decomposition_jacobian(xi: np.ndarray, tg: Tangents, q_prime: float) -> np.ndarray:
    """Derivative of the orthogonality map in ``(theta, omega)`` at fixed ``u``."""
    c = _omega(xi, tg.d_thom)
    return np.array([
        [_omega(xi, tg.d_thth), -q_prime + c],
        [q_prime + c, _omega(xi, tg.d_omom)],
    ])


def decompose(
    u: LatticeField,
    theta_init: float,
    omega_init: float,
    tol: float | None = None,
    cache: ProfileCache | None = None,
    max_iter: int = 30,
) -> ModulationState:
    """Newton on ``(Omega(u - phi, d_theta phi), Omega(u - phi, d_omega phi)) = 0``.

    ``tol`` is absolute on both pairings (default ``1e-10 ||u||``). After the
    tolerance is met the iteration keeps polishing while the update still
    shrinks, so returned parameters sit at the roundoff floor.
    """
    if cache is None:
        cache = ProfileCache(u.window)
    elif cache.window != u.window:
        raise PreconditionViolation("profile cache window does not match the field window")
    v = u.values
    if tol is None:
        tol = TOL_ORTH * max(float(np.linalg.norm(v)), 1e-300)
    theta, omega = float(theta_init), float(omega_init)
    last_step = math.inf
    it = 0
    while True:
        prof = cache.get(omega)
        tg = Tangents.at(theta, prof)
        xi = v - tg.phi
        F = orthogonality(xi, tg)
        fn = float(np.max(np.abs(F)))
        if fn == 0.0:
            break
        J = decomposition_jacobian(xi, tg, prof.q_prime)
        try:
            step = -np.linalg.solve(J, F)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence(f"singular decomposition Jacobian: {exc}") from exc
        size = abs(step[0]) + abs(step[1]) / omega
        if fn <= tol and (size >= 0.5 * last_step or size < 1e-15):
            break
        if it >= max_iter:
            raise NoConvergence(f"decomposition stalled at residual {fn:.3e} after {it} iterations")
        theta += step[0]
        omega += step[1]
        if not (omega > 0 and math.isfinite(omega) and math.isfinite(theta)):
            raise NoConvergence(f"Newton left the admissible region (omega = {omega})")
        last_step = size
        it += 1
    if fn > tol:
        raise NoConvergence(f"orthogonality residual {fn:.3e} above {tol:.1e}")
    eta = xi.copy()
    eta[u.N] = 0.0
    return ModulationState(theta, omega, LatticeField(u.window, xi), LatticeField(u.window, eta), prof,
                           (float(F[0]), float(F[1])), it)


def state_from(theta: float, omega: float, u: LatticeField, cache: ProfileCache) -> ModulationState:
    """State at prescribed parameters without solving (for diagnostics)."""
    prof = cache.get(omega)
    tg = Tangents.at(theta, prof)
    xi = u.values - tg.phi
    eta = xi.copy()
    eta[u.N] = 0.0
    F = orthogonality(xi, tg)
    return ModulationState(theta, omega, LatticeField(u.window, xi), LatticeField(u.window, eta), prof,
                           (float(F[0]), float(F[1])))


def correction_Q(theta: float, omega: float, profile: SolitonProfile, eta: LatticeField) -> LatticeField:
    """Restore both orthogonality conditions by changing ``eta`` at the origin only."""
    N = eta.N
    if abs(eta.values[N]) > 1e-14 * max(float(np.max(np.abs(eta.values))), 1e-300):
        raise PreconditionViolation("correction_Q requires eta(0) = 0")
    p0, dp0 = profile.phi[profile.window.N], profile.dphi[profile.window.N]
    if p0 == 0.0 or dp0 == 0.0:
        raise DegenerateProfile("profile or its omega-derivative vanishes at the origin")
    tg = Tangents.at(theta, profile.embed(eta.window) if profile.window != eta.window else profile)
    a = _omega(eta.values, tg.d_th)
    b = _omega(eta.values, tg.d_om)
    out = eta.values.copy()
    out[N] += np.exp(1j * theta) * (-a / p0 + 1j * b / dp0)
    return LatticeField(eta.window, out)


def remainder_values(phi: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``|phi+xi|^6 (phi+xi) - |phi|^6 phi - 4|phi|^6 xi - 3|phi|^4 phi^2 conj(xi) - |xi|^6 xi``.

    Evaluated in a regrouped form in which the cancelling linear terms are
    removed algebraically, so small ``xi`` loses no digits.
    """
    p2 = np.abs(phi) ** 2
    s2 = np.abs(xi) ** 2
    d = 2.0 * np.real(np.conj(phi) * xi) + s2
    w = phi + xi
    return (3.0 * p2**2 * s2 * phi + 3.0 * p2**2 * d * xi + 3.0 * p2 * d**2 * w + d**3 * w
            - s2**3 * xi)


def remainder_identity_values(phi: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """The defining identity evaluated literally (reference for tests)."""
    w = phi + xi
    return (np.abs(w) ** 6 * w - np.abs(phi) ** 6 * phi - 4 * np.abs(phi) ** 6 * xi
            - 3 * np.abs(phi) ** 4 * phi**2 * np.conj(xi) - np.abs(xi) ** 6 * xi)


def _profile_on(profile: SolitonProfile, window: Window) -> SolitonProfile:
    return profile if profile.window == window else profile.embed(window)


def remainder_f(theta: float, omega: float, profile: SolitonProfile, xi: LatticeField) -> LatticeField:
    prof = _profile_on(profile, xi.window)
    return LatticeField(xi.window, remainder_values(np.exp(1j * theta) * prof.phi, xi.values))


def linearized_values(phi: np.ndarray, u: np.ndarray, boundary: Boundary) -> np.ndarray:
    p2 = np.abs(phi) ** 2
    return -laplacian_values(u, boundary) - 4.0 * p2**3 * u - 3.0 * p2**2 * phi**2 * np.conj(u)


def linearized_apply(theta: float, omega: float, profile: SolitonProfile, u: LatticeField) -> LatticeField:
    """``-Lap u - 4|phi|^6 u - 3|phi|^4 phi^2 conj(u)`` (real-linear only)."""
    prof = _profile_on(profile, u.window)
    phi = np.exp(1j * theta) * prof.phi
    return LatticeField(u.window, linearized_values(phi, u.values, u.window.boundary))


@dataclass(frozen=True)
class ModulationMatrix:
    A: np.ndarray
    rhs: np.ndarray
    solution: np.ndarray
    det: float
    q_prime: float
    corrections: np.ndarray

    @property
    def det_ratio(self) -> float:
        return self.det / self.q_prime**2


def modulation_rates(state: ModulationState, det_guard: float = DET_GUARD) -> ModulationMatrix:
    """Solve the 2x2 system for ``(theta' - omega, omega'/omega)``.

    ``A = [[q' + c, omega Omega(Q eta, d_omega^2 phi)],
           [-Omega(Q eta, d_theta^2 phi)/omega, q' - c]]``, ``c = Omega(Q eta, d_theta d_omega phi)``,
    right side ``(<g, d_omega phi>, -<g, d_theta phi>/omega)`` with
    ``g = f + |xi|^6 xi``.
    """
    th, om, prof = state.theta_unwrapped, state.omega, state.profile
    tg = state.tangents()
    qeta = correction_Q(th, om, prof, state.eta).values
    c = _omega(qeta, tg.d_thom)
    e_omom = _omega(qeta, tg.d_omom)
    e_thth = _omega(qeta, tg.d_thth)
    qp = prof.q_prime
    A = np.array([[qp + c, om * e_omom], [-e_thth / om, qp - c]])
    xi = state.xi.values
    g = remainder_values(tg.phi, xi) + np.abs(xi) ** 6 * xi
    rhs = np.array([_rinner(g, tg.d_om), -_rinner(g, tg.d_th) / om])
    det = float(np.linalg.det(A))
    if not det > det_guard * qp**2:
        raise NearSingularA(f"det A / q'^2 = {det / qp**2:.3e} below guard {det_guard}")
    sol = np.linalg.solve(A, rhs)
    return ModulationMatrix(A, rhs, sol, det, qp, np.array([c, om * e_omom, e_thth / om]))


# tracking -------------------------------------------------------------------

def _trapz_step(prev, cur, dt):
    return 0.5 * dt * (prev + cur)


@dataclass
class TrackResult:
    window: Window
    columns: dict
    snapshots: dict = field(default_factory=dict)
    exit_index: int | None = None
    failure: str | None = None

    def array(self, key) -> np.ndarray:
        return np.asarray(self.columns[key])

    @property
    def times(self) -> np.ndarray:
        return self.array("t")

    def __len__(self):
        return len(self.columns["t"])

    def finite_difference_rates(self) -> dict:
        """Centered differences vs the Simpson mean of the model rates on each stencil.

        On samples ``t_{k-1}, t_k, t_{k+1}`` spaced by ``h``:
        ``(theta_{k+1} - theta_{k-1})/2h - S[omega]`` against ``S[rate_theta]``
        and ``(log omega_{k+1} - log omega_{k-1})/2h`` against
        ``S[rate_omega]``, where ``S`` is the Simpson average over the
        stencil. Both sides then approximate the same interval mean, with
        an O(h^4) quadrature error instead of the O(h^2) of a pointwise
        comparison, which matters because the rates oscillate at about the
        soliton frequency.
        """
        t = self.times
        if len(t) < 3:
            return {"t": t[:0], "fd": np.zeros((0, 2)), "model": np.zeros((0, 2))}
        h = np.diff(t)
        if not np.allclose(h, h[0], rtol=1e-9, atol=0):
            raise PreconditionViolation("finite-difference rates need uniform sampling")
        h = h[0]
        th, om = self.array("theta_unwrapped"), self.array("omega")
        rt, ro = self.array("rate_theta"), self.array("rate_omega")

        def simpson(g):
            return (g[:-2] + 4 * g[1:-1] + g[2:]) / 6.0

        fd = np.column_stack([(th[2:] - th[:-2]) / (2 * h) - simpson(om), (np.log(om[2:]) - np.log(om[:-2])) / (2 * h)])
        model = np.column_stack([simpson(rt), simpson(ro)])
        return {"t": t[1:-1], "fd": fd, "model": model}

    def rate_mismatch(self, t_min: float = -math.inf, t_max: float = math.inf) -> float:
        """``||fd - model|| / ||model||`` in l^2 over samples in ``[t_min, t_max]``."""
        r = self.finite_difference_rates()
        sel = (r["t"] >= t_min) & (r["t"] <= t_max)
        num = np.linalg.norm(r["fd"][sel] - r["model"][sel])
        den = np.linalg.norm(r["model"][sel])
        return float(num / den) if den > 0 else (0.0 if num == 0 else math.inf)

    def rate_residual(self) -> np.ndarray:
        """Per-sample ``|fd - model|`` (NaN at the two end samples)."""
        out = np.full(len(self), np.nan)
        r = self.finite_difference_rates()
        if len(r["t"]):
            out[1:-1] = np.linalg.norm(r["fd"] - r["model"], axis=1)
        return out

    def to_csv(self, dest=None) -> str:
        cols = ["t", "theta_unwrapped", "omega", "xi_l2", "xi_l2wm1", "rate_theta", "rate_omega",
                "rate_residual", "detA", "eta_l2wm1", "stz_running", "XT_running"]
        data = dict(self.columns)
        data["rate_residual"] = self.rate_residual()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in zip(*(data[c] for c in cols)):
            w.writerow([f"{float(x):.17g}" for x in row])
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w") as fh:
                fh.write(text)
        return text


_RICHARDSON = {
    1: (1.0,),
    2: (-1.0 / 3.0, 4.0 / 3.0),
    3: (1.0 / 45.0, -20.0 / 45.0, 64.0 / 45.0),
}


def richardson_track(tracks) -> TrackResult:
    """Combine tracks from step sizes ``dt, dt/2, dt/4, ...`` (same sample times).

    The Strang global error expands in even powers of ``dt``; two levels
    cancel the ``dt^2`` term, three levels also the ``dt^4`` term. The
    phase, ``log omega`` and both model rates are extrapolated samplewise.
    """
    tracks = list(tracks)
    if len(tracks) not in _RICHARDSON:
        raise PreconditionViolation(f"supported levels: {sorted(_RICHARDSON)}")
    n = min(len(tr) for tr in tracks)
    t = tracks[0].times[:n]
    for tr in tracks[1:]:
        if not np.allclose(tr.times[:n], t, rtol=0, atol=1e-9):
            raise PreconditionViolation("tracks must share their sample times")
    w = _RICHARDSON[len(tracks)]

    def comb(key, f=lambda a: a):
        return sum(c * f(tr.array(key)[:n]) for c, tr in zip(w, tracks))

    cols = {
        "t": list(t),
        "theta_unwrapped": list(comb("theta_unwrapped")),
        "omega": list(np.exp(comb("omega", np.log))),
        "rate_theta": list(comb("rate_theta")),
        "rate_omega": list(comb("rate_omega")),
    }
    return TrackResult(tracks[0].window, cols)


class Tracker:
    """Online decomposition of successive samples, warm-started in time.

    Usable as an ``evolve`` hook. ``keep`` is a collection of sample times
    whose full states are retained for scattering extraction.
    """

    COLUMNS = ("t", "theta_unwrapped", "omega", "xi_l2", "xi_l2wm1", "eta_l2wm1", "rate_theta", "rate_omega",
               "detA", "orth_theta", "orth_omega", "stz_running", "XT_running")

    def __init__(self, window: Window, theta0: float, omega0: float, cache: ProfileCache | None = None,
                 keep=(), tol: float | None = None, rates: bool = True):
        self.window = window
        self.cache = cache or ProfileCache(window)
        self.theta, self.omega = float(theta0), float(omega0)
        self.tol = tol
        self.rates = rates
        self.keep = {round(float(t), 9) for t in keep}
        self.columns = {c: [] for c in self.COLUMNS}
        self.snapshots: dict[float, ModulationState] = {}
        self._wm1 = np.exp(-2.0 * np.abs(window.sites))
        self._prev = None
        self._acc = {"l6": 0.0, "l2w": 0.0, "sup": 0.0}

    def __call__(self, t: float, values: np.ndarray):
        n = len(self.columns["t"])
        if n:
            guess = self.theta + self.omega * (t - self.columns["t"][-1])
        else:
            guess = self.theta
        u = LatticeField(self.window, values)
        try:
            st = decompose(u, guess, self.omega, tol=self.tol, cache=self.cache)
            mm = modulation_rates(st) if self.rates else None
        except NumericalFailure as exc:
            raise TubeExit(f"decomposition failed at t = {t:.6g}: {exc}", index=n, partial=self.result()) from exc
        self.theta, self.omega = st.theta_unwrapped, st.omega
        xi, eta = st.xi.values, st.eta.values
        xi_l2 = float(np.linalg.norm(xi))
        xi_w = float(np.sqrt(np.sum(np.abs(xi) ** 2 * self._wm1)))
        eta_w = float(np.sqrt(np.sum(np.abs(eta) ** 2 * self._wm1)))
        eta_inf = float(np.max(np.abs(eta)))
        cur = (eta_inf**6, eta_w**2)
        if self._prev is not None:
            dt = t - self._prev[0]
            self._acc["l6"] += _trapz_step(self._prev[1], cur[0], dt)
            self._acc["l2w"] += _trapz_step(self._prev[2], cur[1], dt)
        self._prev = (t, *cur)
        self._acc["sup"] = max(self._acc["sup"], float(np.linalg.norm(eta)))
        stz = max(self._acc["sup"], self._acc["l6"] ** (1 / 6))
        row = {
            "t": t, "theta_unwrapped": st.theta_unwrapped, "omega": st.omega, "xi_l2": xi_l2, "xi_l2wm1": xi_w,
            "eta_l2wm1": eta_w,
            "rate_theta": mm.solution[0] if mm else math.nan, "rate_omega": mm.solution[1] if mm else math.nan,
            "detA": mm.det if mm else math.nan, "orth_theta": st.orth_residuals[0], "orth_omega": st.orth_residuals[1],
            "stz_running": stz, "XT_running": max(stz, math.sqrt(self._acc["l2w"])),
        }
        for k, v in row.items():
            self.columns[k].append(float(v))
        if round(float(t), 9) in self.keep:
            self.snapshots[round(float(t), 9)] = st

    def result(self) -> TrackResult:
        return TrackResult(self.window, {k: list(v) for k, v in self.columns.items()}, dict(self.snapshots))


def track(trajectory, theta0: float, omega0: float, cache: ProfileCache | None = None, keep=None,
          rates: bool = True) -> TrackResult:
    """Decompose every stored state of ``trajectory`` (warm-started).

    On a decomposition failure raises :class:`TubeExit` carrying the partial
    :class:`TrackResult` and the failing sample index.
    """
    keep = trajectory.times if keep is None else keep
    tr = Tracker(trajectory.window, theta0, omega0, cache=cache, keep=keep, rates=rates)
    for t, v in zip(trajectory.times, trajectory.states):
        tr(float(t), v)
    return tr.result()


@dataclass
class ScatteringReport:
    t_list: list
    xi_plus: list
    cauchy_defects: np.ndarray

    @property
    def final(self) -> LatticeField:
        return self.xi_plus[-1]

    @property
    def xi_plus_norm(self) -> float:
        return float(np.linalg.norm(self.final.values))

    def successive_defects(self) -> list[float]:
        return [float(self.cauchy_defects[i, i + 1]) for i in range(len(self.t_list) - 1)]

    def to_json(self) -> dict:
        return {"t_list": [float(t) for t in self.t_list], "cauchy_defects": self.cauchy_defects.tolist(),
                "xi_plus_norm": self.xi_plus_norm}


def backward_free(xi: LatticeField, t: float) -> LatticeField:
    return LatticeField(xi.window, free_propagate_values(xi.values, -t, xi.window.boundary))


def scattering_extract(result: TrackResult | dict, t_list) -> ScatteringReport:
    """``xi_+(t) = exp(-i t Lap) xi(t)`` at each requested time, plus pairwise defects.

    ``result`` is a :class:`TrackResult` whose snapshots cover ``t_list``,
    or a mapping ``t -> xi`` (LatticeField).
    """
    t_list = [float(t) for t in t_list]
    if any(b <= a for a, b in zip(t_list, t_list[1:])):
        raise PreconditionViolation("t_list must be strictly increasing")
    if isinstance(result, TrackResult):
        src = {t: s.xi for t, s in result.snapshots.items()}
    else:
        src = {round(float(t), 9): x for t, x in result.items()}
    xs = []
    for t in t_list:
        key = round(t, 9)
        if key not in src:
            raise PreconditionViolation(f"no stored remainder at t = {t}")
        xs.append(backward_free(src[key], t))
    n = len(xs)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = float(np.linalg.norm(xs[i].values - xs[j].values))
    return ScatteringReport(t_list, xs, D)
