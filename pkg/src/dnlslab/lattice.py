"""Fields on a finite symmetric window of the integer lattice.

A :class:`Window` is the set of sites ``-N..N`` together with a boundary
rule; a :class:`LatticeField` is an immutable complex array on it, stored
with site ``0`` at the array centre (index ``N``).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .errors import (
    NonpositiveOmega,
    PreconditionViolation,
    WeightedNormOverflow,
    WindowMismatch,
)

ORIGIN_TOL = 1e-14
_LOG_MAX = math.log(np.finfo(float).max)


class Boundary(str, Enum):
    DIRICHLET = "dirichlet"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class Window:
    N: int
    boundary: Boundary = Boundary.DIRICHLET

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise PreconditionViolation(f"half width must be an integer >= 2, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @property
    def size(self) -> int:
        return 2 * self.N + 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1)

    def index(self, x: int) -> int:
        if abs(x) > self.N:
            raise IndexError(f"site {x} outside window of half width {self.N}")
        return x + self.N

    def with_boundary(self, boundary) -> "Window":
        return Window(self.N, Boundary(boundary))


@dataclass(frozen=True, eq=False)
class LatticeField:
    window: Window
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.complex128)
        if vals.shape != (self.window.size,):
            raise PreconditionViolation(
                f"expected {self.window.size} values for N={self.window.N}, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise PreconditionViolation("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    # construction helpers
    @classmethod
    def zeros(cls, window: Window) -> "LatticeField":
        return cls(window, np.zeros(window.size))

    @classmethod
    def delta(cls, window: Window, x: int = 0) -> "LatticeField":
        v = np.zeros(window.size, dtype=np.complex128)
        v[window.index(x)] = 1.0
        return cls(window, v)

    @classmethod
    def from_sites(cls, window: Window, amplitudes: dict) -> "LatticeField":
        v = np.zeros(window.size, dtype=np.complex128)
        for x, a in amplitudes.items():
            v[window.index(int(x))] += a
        return cls(window, v)

    @property
    def N(self) -> int:
        return self.window.N

    def __call__(self, x: int) -> complex:
        return complex(self.values[self.window.index(x)])

    def _other(self, other):
        if isinstance(other, LatticeField):
            if other.window != self.window:
                raise WindowMismatch(f"{self.window} vs {other.window}")
            return other.values
        return other

    def __add__(self, other):
        return LatticeField(self.window, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return LatticeField(self.window, self.values - self._other(other))

    def __rsub__(self, other):
        return LatticeField(self.window, self._other(other) - self.values)

    def __mul__(self, other):
        return LatticeField(self.window, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return LatticeField(self.window, self.values / c)

    def __neg__(self):
        return LatticeField(self.window, -self.values)

    def conj(self) -> "LatticeField":
        return LatticeField(self.window, self.values.conj())

    def allclose(self, other: "LatticeField", atol=1e-12) -> bool:
        return bool(np.max(np.abs(self.values - self._other(other)), initial=0.0) <= atol)

    def __repr__(self):
        return f"LatticeField(N={self.N}, boundary={self.window.boundary.value}, l2={norm2(self):.6g})"


@dataclass(frozen=True)
class WeightSpec:
    p: float = 2
    a: float = 0.0

    def __post_init__(self):
        if self.p not in (1, 2, math.inf):
            raise PreconditionViolation(f"p must be 1, 2 or inf, got {self.p}")
        if not math.isfinite(self.a):
            raise PreconditionViolation("weight rate must be finite")


def _same_window(u: LatticeField, v: LatticeField):
    if u.window != v.window:
        raise WindowMismatch(f"{u.window} vs {v.window}")


def laplacian_values(values: np.ndarray, boundary: Boundary) -> np.ndarray:
    """Discrete Laplacian on a raw array (site 0 at the centre)."""
    out = -2.0 * values
    if boundary == Boundary.PERIODIC:
        out += np.roll(values, 1) + np.roll(values, -1)
    else:
        out[1:] += values[:-1]
        out[:-1] += values[1:]
    return out


def laplacian(u: LatticeField) -> LatticeField:
    return LatticeField(u.window, laplacian_values(u.values, u.window.boundary))


def project_out_origin(u: LatticeField) -> LatticeField:
    v = u.values.copy()
    v[u.N] = 0.0
    return LatticeField(u.window, v)


def _check_origin_free(u: LatticeField, what: str):
    scale = np.max(np.abs(u.values), initial=0.0)
    if abs(u.values[u.N]) > ORIGIN_TOL * max(scale, np.finfo(float).tiny):
        raise PreconditionViolation(f"{what} requires u(0) = 0, got |u(0)| = {abs(u.values[u.N]):.3e}")


def laplacian_origin_removed(u: LatticeField) -> LatticeField:
    """The origin-removed Laplacian acting on a field vanishing at 0."""
    _check_origin_free(u, "laplacian_origin_removed")
    v = u.values.copy()
    v[u.N] = 0.0
    out = laplacian_values(v, u.window.boundary)
    out[u.N] = 0.0
    return LatticeField(u.window, out)


def weighted_norm(u: LatticeField, w: Union[WeightSpec, float] = 2, a: float = 0.0) -> float:
    """``||exp(a|x|) u||_{l^p}`` over the window.

    Accepts either a :class:`WeightSpec` or ``(p, a)``. Large ``a*N`` is
    accumulated in the log domain; a result beyond the double range raises
    :class:`WeightedNormOverflow`.
    """
    if not isinstance(w, WeightSpec):
        w = WeightSpec(w, a)
    mag = np.abs(u.values)
    weight_exp = w.a * np.abs(u.window.sites)
    if np.max(np.abs(weight_exp)) < 300:
        scaled = mag * np.exp(weight_exp)
        if w.p == math.inf:
            return float(np.max(scaled))
        return float(np.sum(scaled**w.p) ** (1.0 / w.p))
    nz = mag > 0
    if not np.any(nz):
        return 0.0
    logs = np.log(mag[nz]) + weight_exp[nz]
    m = float(np.max(logs))
    if w.p == math.inf:
        total = m
    else:
        total = m + math.log(float(np.sum(np.exp(w.p * (logs - m))))) / w.p
    if total >= _LOG_MAX:
        raise WeightedNormOverflow(f"weighted l^{w.p} norm with a={w.a} exceeds double range (log = {total:.1f})")
    return math.exp(total)


def norm2(u: LatticeField) -> float:
    return float(np.linalg.norm(u.values))


def inner(u: LatticeField, v: LatticeField) -> complex:
    """``(u, v) = sum u(x) conj(v(x))``."""
    _same_window(u, v)
    return complex(np.vdot(v.values, u.values))


def real_inner(u: LatticeField, v: LatticeField) -> float:
    _same_window(u, v)
    return float(np.real(np.vdot(v.values, u.values)))


def symplectic(u: LatticeField, v: LatticeField) -> float:
    """``Omega(u, v) = Re (i u, v)``."""
    _same_window(u, v)
    return symplectic_values(u.values, v.values)


def symplectic_values(u: np.ndarray, v: np.ndarray) -> float:
    # Re(i u conj v) = -Im(u conj v)
    return float(-np.imag(np.vdot(v, u)))


def odd_parts(u: LatticeField) -> tuple[LatticeField, LatticeField]:
    """Split a field vanishing at 0 into its positive- and negative-site parts."""
    _check_origin_free(u, "odd_parts")
    plus = np.zeros_like(u.values)
    minus = np.zeros_like(u.values)
    plus[u.N + 1 :] = u.values[u.N + 1 :]
    minus[: u.N] = u.values[: u.N]
    return LatticeField(u.window, plus), LatticeField(u.window, minus)


def restrict_positive(u: LatticeField) -> np.ndarray:
    """Values at sites ``1..N``."""
    return u.values[u.N + 1 :].copy()


def odd_extend(half: Iterable[complex], window: Window) -> LatticeField:
    """Odd extension of ``half`` (values at sites 1..N) to the whole window."""
    h = np.asarray(half, dtype=np.complex128)
    if h.shape != (window.N,):
        raise PreconditionViolation(f"half field must have {window.N} entries, got {h.shape}")
    v = np.zeros(window.size, dtype=np.complex128)
    v[window.N + 1 :] = h
    v[: window.N] = -h[::-1]
    return LatticeField(window, v)


def rescale_to_acl(u: LatticeField, omega: float, t: float = 0.0) -> tuple[LatticeField, float]:
    """Map ``u(t)`` to the anti-continuous variables ``v(s) = omega^{-1/6} u``, ``s = omega t``."""
    if not omega > 0:
        raise NonpositiveOmega(f"omega must be positive, got {omega}")
    return u * omega ** (-1.0 / 6.0), omega * t


def rescale_from_acl(v: LatticeField, omega: float, s: float = 0.0) -> tuple[LatticeField, float]:
    if not omega > 0:
        raise NonpositiveOmega(f"omega must be positive, got {omega}")
    return v * omega ** (1.0 / 6.0), s / omega


# serialization -------------------------------------------------------------

def field_to_json(u: LatticeField) -> dict:
    return {
        "N": u.N,
        "boundary": u.window.boundary.value,
        "re": [float(x) for x in u.values.real],
        "im": [float(x) for x in u.values.imag],
    }


def field_from_json(doc: Union[dict, str]) -> LatticeField:
    if isinstance(doc, str):
        doc = json.loads(doc)
    window = Window(int(doc["N"]), Boundary(doc.get("boundary", "dirichlet")))
    re = np.asarray(doc["re"], dtype=float)
    im = np.asarray(doc["im"], dtype=float)
    return LatticeField(window, re + 1j * im)


def field_to_csv(u: LatticeField, dest=None) -> str:
    """Write ``x,re,im`` rows with 17 significant digits; returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "re", "im"])
    for x, z in zip(u.window.sites, u.values):
        w.writerow([int(x), f"{z.real:.17g}", f"{z.imag:.17g}"])
    text = buf.getvalue()
    if dest is not None:
        Path(dest).write_text(text)
    return text


def field_from_csv(src, boundary=Boundary.DIRICHLET) -> LatticeField:
    text = src if isinstance(src, str) and "\n" in src else Path(src).read_text()
    rows = list(csv.DictReader(io.StringIO(text)))
    xs = np.array([int(r["x"]) for r in rows])
    N = int(np.max(np.abs(xs)))
    window = Window(N, Boundary(boundary))
    if not np.array_equal(xs, window.sites):
        raise PreconditionViolation("CSV rows must list sites -N..N in order")
    vals = np.array([float(r["re"]) + 1j * float(r["im"]) for r in rows])
    return LatticeField(window, vals)
