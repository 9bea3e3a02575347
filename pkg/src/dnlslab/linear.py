"""Linear flows and the odd boundary resolvent.

Propagators are exact for the truncated operators: FFT diagonalizes the
periodic Laplacian, the type-I sine transform the Dirichlet one (which is
the odd reflection trick applied at both ends of the window).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft
from scipy.integrate import trapezoid

from .errors import BandEdge, NonOddInput, PreconditionViolation, SupportOverflow
from .lattice import (
    Boundary,
    LatticeField,
    Window,
    _check_origin_free,
)

MARGIN_SLACK = 24


def _support_radius(values: np.ndarray, N: int, rel: float = 0.0) -> int:
    mag = np.abs(values)
    thresh = rel * np.max(mag, initial=0.0)
    nz = np.nonzero(mag > thresh)[0]
    if len(nz) == 0:
        return 0
    return int(np.max(np.abs(nz - N)))


def check_margin(u: LatticeField, t: float, slack: int = MARGIN_SLACK):
    """Raise :class:`SupportOverflow` unless ``supp(u) + 2|t| + slack`` fits the window."""
    r = _support_radius(u.values, u.N)
    need = r + 2.0 * abs(t) + slack
    if need > u.N:
        raise SupportOverflow(
            f"support radius {r} + 2|t| ({2 * abs(t):.3g}) + slack {slack} exceeds half width {u.N}"
        )


def _phase(t, sym: np.ndarray, ndim: int) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.exp(1j * t.reshape(t.shape + (1,) * ndim) * sym)


def _dst_symbol(n: int) -> np.ndarray:
    m = np.arange(1, n + 1)
    return 2.0 * np.cos(np.pi * m / (n + 1)) - 2.0


def _dirichlet_flow(values: np.ndarray, t) -> np.ndarray:
    """``exp(i t Lap)`` along the last axis, zero boundary values just outside it.

    An array of times prepends a time axis to the result.
    """
    sym = _dst_symbol(values.shape[-1])
    c = sfft.dst(values, type=1, axis=-1, norm="ortho")
    return sfft.idst(c * _phase(t, sym, values.ndim), type=1, axis=-1, norm="ortho")


def _periodic_flow(values: np.ndarray, t) -> np.ndarray:
    k = 2.0 * np.pi * np.fft.fftfreq(values.shape[-1])
    sym = 2.0 * np.cos(k) - 2.0
    c = np.fft.fft(values, axis=-1)
    return np.fft.ifft(c * _phase(t, sym, values.ndim), axis=-1)


def free_propagate(u: LatticeField, t: float, margin: bool | None = None) -> LatticeField:
    """``exp(i t Lap) u``; the free flow of the lattice equation.

    On a Dirichlet window the support-margin guard is on by default so
    that the truncated result stands for the flow on the whole lattice.
    """
    if u.window.boundary == Boundary.PERIODIC:
        if margin:
            check_margin(u, t)
        return LatticeField(u.window, _periodic_flow(u.values, t))
    if margin is None or margin:
        check_margin(u, t)
    return LatticeField(u.window, _dirichlet_flow(u.values, t))


def free_propagate_values(values: np.ndarray, t, boundary: Boundary) -> np.ndarray:
    if Boundary(boundary) == Boundary.PERIODIC:
        return _periodic_flow(values, t)
    return _dirichlet_flow(values, t)


def _origin_removed_values(values: np.ndarray, N: int, t) -> np.ndarray:
    plus = values[..., N + 1 :]
    minus = values[..., :N][..., ::-1]
    both = np.stack([plus, minus], axis=-2)
    flowed = _dirichlet_flow(both, t)
    lead = flowed.shape[:-2]
    out = np.zeros(lead + (2 * N + 1,), dtype=np.complex128)
    out[..., N + 1 :] = flowed[..., 0, :]
    out[..., :N] = flowed[..., 1, ::-1]
    return out


def origin_removed_propagate(u: LatticeField, t: float) -> LatticeField:
    """``exp(i t Lap_0) u`` for ``u(0) = 0``, one half-line at a time.

    Each half is odd-reflected through the origin; on a Dirichlet window the
    far end is a second reflection, so the result is exact for the truncated
    operator. A periodic window is treated as a surrogate for the whole
    lattice and requires the support margin.
    """
    _check_origin_free(u, "origin_removed_propagate")
    if u.window.boundary == Boundary.PERIODIC:
        check_margin(u, t)
    v = u.values.copy()
    v[u.N] = 0.0
    return LatticeField(u.window, _origin_removed_values(v, u.N, t))


# resolvent -----------------------------------------------------------------

class Side(str, Enum):
    PLUS = "plus_i0"
    MINUS = "minus_i0"
    OFF = "off_axis"


@dataclass(frozen=True)
class ResolventPoint:
    """Spectral parameter with the branch ``cos mu = 1 - lam/2``, ``Im mu <= 0``, ``Re mu in [0, 2 pi]``.

    ``side`` selects the boundary value ``lam +- i0`` for real ``lam``
    inside the band ``[0, 4]``.
    """

    lam: complex
    side: Side = Side.OFF

    def __post_init__(self):
        object.__setattr__(self, "lam", complex(self.lam))
        object.__setattr__(self, "side", Side(self.side))
        if self.side == Side.OFF and self.lam.imag == 0 and 0 <= self.lam.real <= 4:
            raise PreconditionViolation("real lambda inside the band needs side plus_i0 or minus_i0")

    @property
    def on_band(self) -> bool:
        return self.lam.imag == 0 and 0 <= self.lam.real <= 4

    @property
    def mu(self) -> complex:
        lam = self.lam
        if self.on_band:
            if lam.real in (0.0, 4.0):
                raise BandEdge(f"lambda = {lam.real} is a band edge")
            m0 = math.acos(1.0 - lam.real / 2.0)
            return complex(2 * math.pi - m0 if self.side == Side.PLUS else m0)
        m = complex(np.arccos(1.0 - lam / 2.0))
        if m.imag > 0:
            m = 2 * math.pi - m
        if m.real < 0:
            m += 2 * math.pi
        return m


def _kernel_matrix(pt: ResolventPoint, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    mu = pt.mu
    s = np.sin(mu)
    if abs(s) == 0:
        raise BandEdge(f"sin(mu) = 0 at lambda = {pt.lam}")
    d = np.abs(xs[:, None] - ys[None, :])
    return -1j * np.exp(-1j * mu * d) / (2.0 * s)


def odd_kernel_matrix(pt: ResolventPoint, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Matrix ``K[x, y]`` (``y > 0``) of the resolvent restricted to odd data."""
    mu = pt.mu
    s = np.sin(mu)
    if abs(s) == 0:
        raise BandEdge(f"sin(mu) = 0 at lambda = {pt.lam}")
    dm = np.abs(xs[:, None] - ys[None, :])
    dp = np.abs(xs[:, None] + ys[None, :])
    # difference of exponentials written to stay accurate as sin(mu) -> 0
    e = np.exp(-1j * mu * dm) * -np.expm1(-1j * mu * (dp - dm))
    return -1j * e / (2.0 * s)


def resolvent_apply(pt: ResolventPoint, u: LatticeField, odd_tol: float = 1e-12) -> LatticeField:
    """``(-Lap - lam)^{-1} u`` on the whole lattice for odd ``u``, sampled on the window."""
    v = u.values
    scale = np.max(np.abs(v), initial=0.0)
    if np.max(np.abs(v + v[::-1]), initial=0.0) > odd_tol * max(scale, np.finfo(float).tiny):
        raise NonOddInput("resolvent_apply requires odd input")
    xs = u.window.sites
    ys = np.arange(1, u.N + 1)
    K = odd_kernel_matrix(pt, xs, ys)
    return LatticeField(u.window, K @ v[u.N + 1 :])


def full_resolvent_apply(pt: ResolventPoint, u: LatticeField) -> LatticeField:
    xs = u.window.sites
    return LatticeField(u.window, _kernel_matrix(pt, xs, xs) @ u.values)


def power_norm(B: np.ndarray, rtol: float = 1e-6, max_iter: int = 20000, seed: int = 0) -> float:
    """Largest singular value of ``B`` by power iteration on ``B^* B``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(B.shape[1]) + 1j * rng.standard_normal(B.shape[1])
    v /= np.linalg.norm(v)
    G = B.conj().T @ B
    est = 0.0
    for _ in range(max_iter):
        w = G @ v
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - est) <= rtol * new:
            return math.sqrt(new)
        est = new
    return math.sqrt(est)


def weighted_resolvent_norms(pt: ResolventPoint, N: int = 40, rtol: float = 1e-6) -> tuple[float, float]:
    """``l^2_1 -> l^2_{-1}`` norm of the resolvent, odd-restricted and unrestricted."""
    xs = np.arange(-N, N + 1)
    wx = np.exp(-np.abs(xs))
    ys = np.arange(1, N + 1)
    # odd input u = T h: ||u||_{l^2_1} = sqrt(2) ||e^{y} h||
    Kodd = odd_kernel_matrix(pt, xs, ys)
    Bodd = (wx[:, None] * Kodd) * (np.exp(-ys)[None, :] / math.sqrt(2.0))
    Kfull = _kernel_matrix(pt, xs, xs)
    Bfull = wx[:, None] * Kfull * wx[None, :]
    return power_norm(Bodd, rtol), power_norm(Bfull, rtol)


@dataclass
class ResolventScan:
    rows: list = field(default_factory=list)  # (lam, side, odd_norm, full_norm)

    def sup_odd(self, side=None) -> float:
        return max(r[2] for r in self.rows if side is None or r[1] == Side(side).value)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "side", "odd_norm", "full_norm"])
        for lam, side, o, f in self.rows:
            w.writerow([f"{lam:.17g}", side, f"{o:.17g}", f"{f:.17g}"])
        return buf.getvalue()


def resolvent_bound_scan(
    lam_grid: Sequence[float], sides: Sequence = (Side.PLUS, Side.MINUS), N: int = 40, rtol: float = 1e-6
) -> ResolventScan:
    scan = ResolventScan()
    for side in sides:
        side = Side(side)
        for lam in lam_grid:
            lam = float(lam)
            if lam in (0.0, 4.0):
                raise BandEdge(f"grid contains band edge {lam}")
            pt = ResolventPoint(lam, side if 0 < lam < 4 else Side.OFF)
            o, f = weighted_resolvent_norms(pt, N, rtol)
            scan.rows.append((lam, side.value, o, f))
    return scan


def default_lambda_grid(n: int = 241) -> np.ndarray:
    """Uniform grid on [-1, 5] shifted half a cell so it never hits 0 or 4."""
    h = 6.0 / (n - 1)
    g = -1.0 + h * (np.arange(n) + 0.5)
    return g[g < 5.0]


# space-time norms ----------------------------------------------------------

def time_grid(T: float, dt: float) -> np.ndarray:
    n = int(round(T / dt))
    if not math.isclose(n * dt, T, rel_tol=1e-9):
        raise PreconditionViolation(f"T = {T} is not a multiple of dt = {dt}")
    return dt * np.arange(n + 1)


def spacetime_norms(traj: np.ndarray, t: np.ndarray, N: int) -> dict:
    """Quadrature norms of a sampled trajectory ``traj[k] = u(t_k)``.

    ``Linf_l2`` by max over samples; ``L6_linf`` and ``L2_l2w`` (weight
    ``e^{-|x|}``) by the composite trapezoid rule.
    """
    xs = np.arange(-N, N + 1)
    w = np.exp(-2.0 * np.abs(xs))
    mag2 = np.abs(traj) ** 2
    l2 = np.sqrt(np.sum(mag2, axis=-1))
    linf = np.sqrt(np.max(mag2, axis=-1))
    l2w = np.sum(mag2 * w, axis=-1)
    out = {
        "Linf_l2": float(np.max(l2)),
        "L6_linf": float(trapezoid(linf**6, t) ** (1 / 6)),
        "L2_l2w": float(math.sqrt(trapezoid(l2w, t))),
    }
    out["stz"] = max(out["Linf_l2"], out["L6_linf"])
    return out


@dataclass
class StrichartzReport:
    dt: float
    T_list: list
    # (T, sample, stz_ratio, kato_ratio, linf_l2_ratio, l6_linf_ratio)
    rows: list = field(default_factory=list)

    def max_ratio(self, T, column="stz") -> float:
        col = {"stz": 2, "kato": 3}[column]
        return max(r[col] for r in self.rows if r[0] == T)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["T", "sample", "stz_ratio", "kato_ratio", "linf_l2_ratio", "l6_linf_ratio"])
        for r in self.rows:
            w.writerow([f"{r[0]:.17g}", r[1]] + [f"{v:.17g}" for v in r[2:]])
        return buf.getvalue()


def survey_window(T_max: float, core: int = 10) -> Window:
    return Window(int(core + 2 * math.ceil(T_max) + MARGIN_SLACK), Boundary.DIRICHLET)


def strichartz_survey(
    samples: int = 50,
    T_list: Sequence[float] = (50.0, 100.0, 200.0),
    dt: float = 0.1,
    seed: int = 0,
    core: int = 10,
    flow: str = "origin_removed",
) -> StrichartzReport:
    """Space-time norm ratios of ``exp(i t Lap_0) P_0^perp u_0`` for random ``u_0``.

    ``u_0`` has complex Gaussian entries on ``|x| <= core`` and the window
    leaves room for group speed 2 up to ``max(T_list)``. ``flow="free"``
    runs the same survey for the full Laplacian.
    """
    if dt > 0.1:
        raise PreconditionViolation("dt must be <= 0.1")
    T_list = sorted(float(T) for T in T_list)
    win = survey_window(T_list[-1], core)
    N = win.N
    t = time_grid(T_list[-1], dt)
    rng = np.random.default_rng(seed)
    rep = StrichartzReport(dt=dt, T_list=list(T_list))
    for s in range(samples):
        u0 = np.zeros(win.size, dtype=np.complex128)
        u0[N - core : N + core + 1] = rng.standard_normal(2 * core + 1) + 1j * rng.standard_normal(2 * core + 1)
        if flow == "origin_removed":
            u0[N] = 0.0
            traj = _origin_removed_values(u0, N, t)
        else:
            traj = _dirichlet_flow(u0, t)
        n0 = float(np.linalg.norm(u0))
        for T in T_list:
            k = int(round(T / dt)) + 1
            nm = spacetime_norms(traj[:k], t[:k], N)
            rep.rows.append((T, s, nm["stz"] / n0, nm["L2_l2w"] / n0, nm["Linf_l2"] / n0, nm["L6_linf"] / n0))
    return rep


def kato_growth_free_delta(T_list: Sequence[float] = (50.0, 200.0), dt: float = 0.1) -> dict:
    """``||exp(i t Lap) delta_0||_{L^2 l^2_{-1}}`` over ``[0, T]`` for each T."""
    T_list = sorted(float(T) for T in T_list)
    win = survey_window(T_list[-1], 0)
    t = time_grid(T_list[-1], dt)
    u0 = np.zeros(win.size, dtype=np.complex128)
    u0[win.N] = 1.0
    traj = _dirichlet_flow(u0, t)
    out = {}
    for T in T_list:
        k = int(round(T / dt)) + 1
        out[T] = spacetime_norms(traj[:k], t[:k], win.N)["L2_l2w"]
    return out


def kato_growth_origin_removed(T_list: Sequence[float] = (50.0, 200.0), dt: float = 0.1) -> dict:
    """Same quantity for the origin-removed flow with ``delta_1 - delta_{-1}`` data."""
    T_list = sorted(float(T) for T in T_list)
    win = survey_window(T_list[-1], 1)
    t = time_grid(T_list[-1], dt)
    u0 = np.zeros(win.size, dtype=np.complex128)
    u0[win.N + 1], u0[win.N - 1] = 1 / math.sqrt(2), -1 / math.sqrt(2)
    traj = _origin_removed_values(u0, win.N, t)
    out = {}
    for T in T_list:
        k = int(round(T / dt)) + 1
        out[T] = spacetime_norms(traj[:k], t[:k], win.N)["L2_l2w"]
    return out


def duhamel(source: Callable[[float], np.ndarray] | np.ndarray, window: Window, T: float, dt: float) -> np.ndarray:
    """Trapezoid quadrature of ``D(t) = int_0^t exp(i(t-s) Lap_0) P_0^perp f(s) ds``.

    ``source`` is either an array ``f[k]`` sampled at ``k dt`` or a callable
    ``s -> values``. Returns ``D[k]`` on the same grid, built by the exact
    recursion ``D_{k+1} = U D_k + dt/2 (U f_k + f_{k+1})`` with
    ``U = exp(i dt Lap_0)``.
    """
    t = time_grid(T, dt)
    N = window.N
    if callable(source):
        f = np.array([np.asarray(source(s), dtype=np.complex128) for s in t])
    else:
        f = np.asarray(source, dtype=np.complex128)
        if f.shape != (len(t), window.size):
            raise PreconditionViolation(f"source must have shape {(len(t), window.size)}, got {f.shape}")
    f = f.copy()
    f[:, N] = 0.0
    D = np.zeros_like(f)
    for k in range(len(t) - 1):
        D[k + 1] = _origin_removed_values(D[k] + 0.5 * dt * f[k], N, dt) + 0.5 * dt * f[k + 1]
    return D


def weighted_time_norm(traj: np.ndarray, t: np.ndarray, N: int, a: float) -> float:
    """``||u||_{L^2_t l^2_a}`` by the trapezoid rule."""
    xs = np.arange(-N, N + 1)
    w = np.exp(2.0 * a * np.abs(xs))
    return float(math.sqrt(trapezoid(np.sum(np.abs(traj) ** 2 * w, axis=-1), t)))
