import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from dnlslab.dynamics import evolve, window_for_run
from dnlslab.errors import DegenerateProfile, NearSingularA, PreconditionViolation, TubeExit
from dnlslab.lattice import LatticeField, Window, real_inner, weighted_norm
from dnlslab.linear import free_propagate
from dnlslab.modulation import (
    ModulationState,
    ProfileCache,
    Tangents,
    Tracker,
    correction_Q,
    decompose,
    decomposition_jacobian,
    linearized_apply,
    modulation_rates,
    orthogonality,
    remainder_f,
    remainder_identity_values,
    remainder_values,
    richardson_track,
    scattering_extract,
    state_from,
    track,
)
from dnlslab.soliton import solve_profile

W = Window(30)
D = LatticeField.delta


@pytest.fixture(scope="module")
def cache():
    return ProfileCache(W)


@pytest.fixture(scope="module")
def prof100(cache):
    return cache.get(100.0)


def soliton(prof, theta=0.0):
    return LatticeField(prof.window, np.exp(1j * theta) * prof.phi)


# profile cache ----------------------------------------------------------------

def test_cache_hit_and_taylor_shift(cache):
    a = cache.get(100.0)
    n = cache.solves
    b = cache.get(100.0 * (1 + 1e-14))
    assert cache.solves == n
    direct = solve_profile(100.0 * (1 + 1e-14), Window(30), tol=1e-12)
    assert np.max(np.abs(b.phi - direct.phi)) <= 1e-14
    assert a.window == W and b.omega != a.omega


# decompose --------------------------------------------------------------------

def test_decompose_exact_profile(cache, prof100):
    st_ = decompose(soliton(prof100, 0.4), 0.4, 100.0, cache=cache)
    assert st_.omega == pytest.approx(100.0, rel=1e-13)
    assert st_.theta == pytest.approx(0.4, abs=1e-13)
    assert np.linalg.norm(st_.xi.values) <= 1e-12


@given(st.floats(-10, 10))
def test_decompose_gauge(alpha):
    cache = ProfileCache(W)
    prof = cache.get(100.0)
    u = soliton(prof, 0.3)
    u = u + 1e-3 * (D(W, 2) - D(W, -2))
    a = decompose(u, 0.3, 100.0, cache=cache)
    b = decompose(np.exp(1j * alpha) * u, 0.3 + alpha, 100.0, cache=cache)
    dth = (b.theta_unwrapped - a.theta_unwrapped - alpha + math.pi) % (2 * math.pi) - math.pi
    assert abs(dth) <= 1e-10
    assert b.omega == pytest.approx(a.omega, rel=1e-12)
    assert np.linalg.norm(b.xi.values) == pytest.approx(np.linalg.norm(a.xi.values), rel=1e-9)


def test_decompose_perturbed_example(cache, prof100):
    u = soliton(prof100) + 1e-3 * (D(W, 2) - D(W, -2))
    s = decompose(u, 0.0, 100.0, cache=cache)
    assert max(abs(r) for r in s.orth_residuals) <= 1e-10
    assert np.linalg.norm(s.xi.values) <= 2e-3
    tg = s.tangents()
    F = orthogonality(s.xi.values, tg)
    bound = 1e-10 * np.linalg.norm(s.xi.values)
    assert abs(F[0]) <= bound * np.linalg.norm(tg.d_th)
    assert abs(F[1]) <= bound * np.linalg.norm(tg.d_om)
    assert np.array_equal(s.eta.values[W.N], 0) and np.array_equal(np.delete(s.eta.values, W.N), np.delete(s.xi.values, W.N))


def test_decomposition_jacobian_finite_differences(cache):
    prof = cache.get(80.0)
    rng = np.random.default_rng(3)
    u = soliton(prof, 0.2).values + 1e-2 * (rng.standard_normal(W.size) + 1j * rng.standard_normal(W.size)) * np.exp(-np.abs(W.sites))

    def F(th, om):
        p = solve_profile(om, W, tol=1e-12)
        tg = Tangents.at(th, p)
        return orthogonality(u - tg.phi, tg)

    th, om = 0.2, 80.0
    p = solve_profile(om, W, tol=1e-12)
    tg = Tangents.at(th, p)
    J = decomposition_jacobian(u - tg.phi, tg, p.q_prime)
    h1, h2 = 1e-5, 1e-3
    col0 = (F(th + h1, om) - F(th - h1, om)) / (2 * h1)
    col1 = (F(th, om + h2) - F(th, om - h2)) / (2 * h2)
    assert np.allclose(J[:, 0], col0, rtol=1e-6, atol=1e-12)
    assert np.allclose(J[:, 1], col1, rtol=1e-5, atol=1e-12)


def test_decompose_cache_window_guard(cache):
    with pytest.raises(PreconditionViolation):
        decompose(D(Window(10), 0), 0.0, 100.0, cache=cache)


# Q ----------------------------------------------------------------------------

def random_eta(seed, window=W):
    r = np.random.default_rng(seed)
    v = (r.standard_normal(window.size) + 1j * r.standard_normal(window.size)) * np.exp(-0.3 * np.abs(window.sites))
    v[window.N] = 0
    return LatticeField(window, v)


@given(st.integers(0, 2**32 - 1), st.floats(0, 2 * math.pi))
def test_Q_properties(seed, theta):
    prof = ProfileCache(W).get(100.0)
    eta = random_eta(seed)
    q = correction_Q(theta, 100.0, prof, eta)
    diff = q.values - eta.values
    assert np.all(np.delete(diff, W.N) == 0)
    tg = Tangents.at(theta, prof)
    F = orthogonality(q.values, tg)
    scale = np.linalg.norm(q.values)
    assert abs(F[0]) <= 1e-12 * scale * np.linalg.norm(tg.d_th)
    assert abs(F[1]) <= 1e-12 * scale * np.linalg.norm(tg.d_om)
    back = q.values.copy()
    back[W.N] = 0
    assert np.array_equal(back, eta.values)


def test_Q_reconstructs_decomposed_remainder(cache, prof100):
    u = soliton(prof100, 1.0) + 1e-3 * (D(W, 0) + D(W, 1) - 0.5j * D(W, -3))
    s = decompose(u, 1.0, 100.0, cache=cache)
    q = correction_Q(s.theta_unwrapped, s.omega, s.profile, s.eta)
    assert np.max(np.abs(q.values - s.xi.values)) <= 1e-10 * np.linalg.norm(u.values)


def test_Q_scaling_in_omega():
    eta = random_eta(11)
    vals = []
    for om in (100.0, 400.0, 1600.0):
        p = ProfileCache(W).get(om)
        q = correction_Q(0.0, om, p, eta)
        vals.append(weighted_norm(eta - q, 2, 1.0) * om / weighted_norm(eta, 2, -1.0))
    assert max(vals) / min(vals) <= 3


def test_Q_preconditions(prof100):
    with pytest.raises(PreconditionViolation):
        correction_Q(0.0, 100.0, prof100, D(W, 0))
    bad = ModulationState  # noqa: F841
    import dataclasses

    degenerate = dataclasses.replace(prof100, phi=np.zeros(W.size))
    with pytest.raises(DegenerateProfile):
        correction_Q(0.0, 100.0, degenerate, D(W, 1))


# f ---------------------------------------------------------------------------

def test_f_zero(prof100):
    assert np.all(remainder_f(0.3, 100.0, prof100, LatticeField.zeros(W)).values == 0)


def test_f_single_site_polynomial():
    ref = sum(math.comb(7, n) * 0.1**n for n in range(2, 7))
    assert abs(remainder_values(np.array([1.0]), np.array([0.1]))[0] - ref) <= 1e-14
    assert abs(remainder_identity_values(np.array([1.0]), np.array([0.1]))[0] - ref) <= 1e-14


def test_f_quadratic_scaling(prof100):
    xi = random_eta(5).values.copy()
    xi[W.N] = 0.3 + 0.1j
    xi = LatticeField(W, xi)
    r = [np.linalg.norm(remainder_f(0.7, 100.0, prof100, s * xi).values) / s**2 for s in (1e-3, 1e-4)]
    assert abs(r[0] / r[1] - 1) <= 0.1


def test_f_regrouped_matches_identity_numerically(rng):
    phi = rng.standard_normal(50) * 3 + 1j * rng.standard_normal(50)
    xi = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    assert np.allclose(remainder_values(phi, xi), remainder_identity_values(phi, xi), rtol=1e-12, atol=1e-10)


def test_f_symbolic_expansion():
    pr, pi_, xr, xi_, s = sp.symbols("pr pi xr xi s", real=True)
    phi, xi = pr + sp.I * pi_, xr + sp.I * xi_
    w = phi + s * xi
    ab = lambda z: z * sp.conjugate(z)  # noqa: E731
    literal = (ab(w) ** 3 * w - ab(phi) ** 3 * phi - 4 * ab(phi) ** 3 * s * xi
               - 3 * ab(phi) ** 2 * phi**2 * s * sp.conjugate(xi) - ab(s * xi) ** 3 * s * xi)
    p2, s2 = ab(phi), ab(s * xi)
    d = phi * sp.conjugate(s * xi) + sp.conjugate(phi) * s * xi + s2
    regrouped = 3 * p2**2 * s2 * phi + 3 * p2**2 * d * s * xi + 3 * p2 * d**2 * w + d**3 * w - s2**3 * s * xi
    diff = sp.expand(literal - regrouped)
    assert diff == 0
    poly = sp.Poly(sp.expand(literal), s)
    degrees = sorted(m[0] for m in poly.monoms())
    assert degrees[0] == 2 and degrees[-1] == 6


# H -----------------------------------------------------------------------------

def test_H_identities(prof100):
    for th in (0.0, 1.3):
        tg = Tangents.at(th, prof100)
        lhs = linearized_apply(th, 100.0, prof100, LatticeField(W, tg.d_th)).values
        assert np.linalg.norm(lhs - 1j * 100.0 * tg.d_thth) <= 10 * prof100.residual_norm
        lhs = linearized_apply(th, 100.0, prof100, LatticeField(W, tg.d_om)).values
        err = np.linalg.norm(lhs - 1j * tg.d_th - 1j * 100.0 * tg.d_thom)
        assert err <= 10 * (prof100.residual_norm + prof100.dphi_residual)


@given(st.integers(0, 2**32 - 1), st.floats(0, 2 * math.pi))
def test_H_symmetric_and_real_linear(seed, theta):
    prof = ProfileCache(W).get(100.0)
    r = np.random.default_rng(seed)
    u, v = (LatticeField(W, r.standard_normal(W.size) + 1j * r.standard_normal(W.size)) for _ in range(2))
    H = lambda z: linearized_apply(theta, 100.0, prof, z)  # noqa: E731
    nu, nv = np.linalg.norm(u.values), np.linalg.norm(v.values)
    assert abs(real_inner(H(u), v) - real_inner(u, H(v))) <= 1e-12 * nu * nv * 100
    a = float(r.standard_normal())
    assert np.allclose(H(a * u + v).values, a * H(u).values + H(v).values, atol=1e-10)


# rates --------------------------------------------------------------------------

def test_rates_vanish_on_soliton(cache, prof100):
    s = decompose(soliton(prof100, 0.5), 0.5, 100.0, cache=cache)
    mm = modulation_rates(s)
    qp = s.profile.q_prime
    assert np.allclose(mm.A, np.diag([qp, qp]), rtol=1e-10, atol=1e-12 * qp)
    assert np.all(np.abs(mm.solution) <= 1e-12)
    assert mm.det_ratio == pytest.approx(1.0, abs=1e-9)


def test_rates_guard(cache, prof100):
    s = state_from(0.0, 100.0, soliton(prof100) + 0.0, cache)
    with pytest.raises(NearSingularA):
        modulation_rates(s, det_guard=2.0)


# tracking -----------------------------------------------------------------------

def run_tracked(omega, eps, T, dt, stride, frozen=True, keep=()):
    win = window_for_run(T)
    cache = ProfileCache(win)
    base = cache.get(omega)
    v = base.phi.astype(complex)
    if eps:
        v = v + eps * (D(win, 0) + 0.5 * D(win, 1) + 0.5 * D(win, -1) + 0.25j * D(win, 2)).values / 1.2747548783981961
    u0 = LatticeField(win, v)
    s0 = decompose(u0, 0.0, omega, cache=cache)
    tr = Tracker(win, s0.theta_unwrapped, s0.omega, cache=cache, keep=keep)
    pot = cache.get(s0.omega).phi ** 6 if frozen else None
    evolve(u0, T, dt, stride=stride, store_stride=int(round(T / dt)), hooks=[tr], potential=pot, probes=())
    return tr.result(), s0


@pytest.mark.parametrize("frozen", [False, True])
def test_exact_soliton_track(frozen):
    res, _ = run_tracked(50.0, 0.0, 2.0, 1e-3, 20, frozen=frozen)
    om = res.array("omega")
    # the plain splitting perturbs the profile at O(dt^2); the frozen scheme keeps it
    assert np.max(np.abs(om / 50.0 - 1)) <= (1e-12 if frozen else 1e-9)
    slope = np.polyfit(res.times, res.array("theta_unwrapped"), 1)[0]
    assert abs(slope / 50.0 - 1) <= 1e-6


def test_perturbed_track_bounds():
    out = {}
    for eps in (1e-3, 3e-3):
        res, _ = run_tracked(50.0, eps, 10.0, 0.01, 10)
        qp = np.array([ProfileCache(Window(20)).get(w).q_prime for w in res.array("omega")])
        det = res.array("detA") / qp**2
        assert np.all((det >= 0.5) & (det <= 2.0))
        tv = np.sum(np.abs(np.diff(np.log(res.array("omega")))))
        # omega' is quadratic in the perturbation, so C1 eps is a loose upper bound
        assert tv <= 0.1 * eps
        out[eps] = np.max(res.array("xi_l2")) / eps
    assert 0.5 <= out[1e-3] / out[3e-3] <= 2.0


def test_xi_equation_residual():
    dt, T = 1e-3, 1.0
    times = [0.3, 0.301, 0.302, 0.7, 0.701, 0.702]
    res, _ = run_tracked(50.0, 1e-3, T, dt, 1, keep=times)
    win = res.window
    rate = dict(zip(np.round(res.times, 9), zip(res.array("rate_theta"), res.array("rate_omega"))))
    for c in (0.301, 0.701):
        sm, s0, sp_ = (res.snapshots[round(c + d, 9)] for d in (-dt, 0.0, dt))
        xidot = (sp_.xi.values - sm.xi.values) / (2 * dt)
        rt, ro = rate[round(c, 9)]
        tg = s0.tangents()
        lhs = 1j * xidot + 1j * tg.d_th * rt + 1j * tg.d_om * ro * s0.omega
        H = linearized_apply(s0.theta_unwrapped, s0.omega, s0.profile, s0.xi).values
        f = remainder_f(s0.theta_unwrapped, s0.omega, s0.profile, s0.xi).values
        x = s0.xi.values
        rhs = H - f - np.abs(x) ** 6 * x
        assert np.linalg.norm(lhs - rhs) <= 0.05 * max(np.linalg.norm(rhs), np.linalg.norm(1j * xidot))


def test_track_on_trajectory_and_csv():
    win = Window(30)
    prof = ProfileCache(win).get(50.0)
    u0 = soliton(prof)
    traj, _ = evolve(u0, 0.5, 0.01, stride=10, probes=(), potential=prof.phi**6)
    res = track(traj, 0.0, 50.0)
    assert len(res) == len(traj) and set(res.snapshots) == set(np.round(traj.times, 9))
    head = res.to_csv().splitlines()[0].split(",")
    assert head[:9] == ["t", "theta_unwrapped", "omega", "xi_l2", "xi_l2wm1", "rate_theta", "rate_omega",
                        "rate_residual", "detA"]


def test_tube_exit_returns_partial():
    win = Window(30)
    prof = ProfileCache(win).get(50.0)

    class Fake:
        window = win
        times = np.array([0.0, 0.1, 0.2])
        states = np.array([prof.phi, prof.phi, 0 * prof.phi + 1e-3 * D(win, 7).values], dtype=complex)

    with pytest.raises(TubeExit) as info:
        track(Fake, 0.0, 50.0)
    assert info.value.index == 2
    assert len(info.value.partial) == 2


def test_richardson_exact_on_polynomial_error():
    win = Window(5)
    t = np.linspace(0, 1, 5)
    from dnlslab.modulation import TrackResult

    def fake(h):
        return TrackResult(win, {"t": list(t), "theta_unwrapped": list(2 * t + 3 * h**2 * t - h**4),
                                 "omega": list(np.exp(1 + h**2 * t)),
                                 "rate_theta": list(0 * t + h**2), "rate_omega": list(0 * t - h**4)})

    ext = richardson_track([fake(0.1), fake(0.05), fake(0.025)])
    assert np.allclose(ext.array("theta_unwrapped"), 2 * t, atol=1e-14)
    assert np.allclose(ext.array("omega"), np.e, rtol=1e-14)
    assert np.allclose(ext.array("rate_omega"), 0, atol=1e-15)


def test_scattering_free_flow_constant(rng):
    win = Window(80)
    v = np.zeros(win.size, dtype=complex)
    v[win.N - 4 : win.N + 5] = rng.standard_normal(9) + 1j * rng.standard_normal(9)
    xi0 = LatticeField(win, v)
    ts = [1.0, 2.0, 5.0, 10.0]
    rep = scattering_extract({t: free_propagate(xi0, t) for t in ts}, ts)
    assert np.max(rep.cauchy_defects) <= 1e-12
    assert np.max(np.abs(rep.final.values - v)) <= 1e-12
    assert set(rep.to_json()) == {"t_list", "cauchy_defects", "xi_plus_norm"}
    with pytest.raises(PreconditionViolation):
        scattering_extract({1.0: xi0}, [2.0, 1.0])
    with pytest.raises(PreconditionViolation):
        scattering_extract({1.0: xi0}, [3.0])
