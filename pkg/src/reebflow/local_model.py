"""Standard contact tube S^1 x D^2 with form H(dz + x1 dx2).

A closed Reeb orbit has a tubular neighborhood contactomorphic to this
model: coordinates (z, x1, x2) with z in R/Z along the orbit, H > 0,
H(z, 0, 0) = l (the period), and dH vanishing in the x-directions on
the axis {x = 0}.  The axis is then a Reeb orbit of period l, and the
linearized return map is driven by the axis x-Hessian of H.

This module builds admissible model forms, integrates the linearized
flow, and checks the first-order formula for the s-derivative of the
return map under a perturbation H -> H_s whose axis Hessian changes by
(s*l/2) * hess(h~) inside a window (t0 - eps, t0 + eps) on which the
unperturbed H is identically l.  The closed form

    dP = R_0(1) R_0(t0)^{-1} ( int_window J hess(h~) / (2l) dt ) R_0(t0)

is compared against a central-difference oracle in s.  Everything here
stays on the model side; no gluing back to a concrete surface.

Cutoffs are degree-7 polynomial smoothsteps (C^3), shared with the
surface-side perturbation module so that coefficient profiles agree
across the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import InadmissibleForm, StepUnderflow, WindowTooWide

J = np.array([[0.0, -1.0], [1.0, 0.0]])

ODE_TOL = 1e-12
ADMISSIBLE_TOL = 1e-9
SIMPSON_TOL = 1e-10
POINTS_PER_LEG = 97


def smoothstep7(u):
    """C^3 monotone step: 0 for u <= 0, 1 for u >= 1, degree-7 between.

    35u^4 - 84u^5 + 70u^6 - 20u^7; the first three derivatives vanish
    at both ends.
    """
    u = np.clip(u, 0.0, 1.0)
    return u**4 * (35.0 + u * (-84.0 + u * (70.0 - 20.0 * u)))


def smoothstep7_d(u):
    """Derivative of smoothstep7: 140 u^3 (1-u)^3 on [0,1], 0 outside."""
    u = np.asarray(u, dtype=float)
    inside = (u > 0.0) & (u < 1.0)
    out = np.zeros_like(u)
    uu = np.clip(u, 0.0, 1.0)
    val = 140.0 * uu**3 * (1.0 - uu) ** 3
    out = np.where(inside, val, 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def plateau_bump(z, center, half_width, shoulder, period=1.0):
    """C^3 bump: 1 on the inner plateau, 0 off the support.

    Support is [center - half_width, center + half_width], reduced mod
    period when one is given (period=None turns the wrap off); the
    profile rises from 0 to 1 over a shoulder of the given width at each
    end (smoothstep7) and is identically 1 between the shoulders.
    """
    z = np.asarray(z, dtype=float)
    if period is None:
        d = np.abs(z - center)
    else:
        d = np.abs((z - center + 0.5 * period) % period - 0.5 * period)
    sh = min(shoulder, half_width)
    if sh <= 0.0:
        val = np.where(d <= half_width, 1.0, 0.0)
    else:
        val = smoothstep7((half_width - d) / sh)
    if val.ndim == 0:
        return float(val)
    return val


def plateau_bump_d(z, center, half_width, shoulder, period=1.0):
    """z-derivative of plateau_bump."""
    z = np.asarray(z, dtype=float)
    if period is None:
        off = z - center
    else:
        off = (z - center + 0.5 * period) % period - 0.5 * period
    d = np.abs(off)
    sgn = np.where(off >= 0.0, 1.0, -1.0)
    sh = min(shoulder, half_width)
    if sh <= 0.0:
        val = np.zeros_like(d)
    else:
        val = smoothstep7_d((half_width - d) / sh) * (-sgn / sh)
    if val.ndim == 0:
        return float(val)
    return val


def _quad_eval(coeffs, x):
    """c1*x1^2 + c2*x1*x2 + c3*x2^2 and its x-gradient."""
    c1, c2, c3 = coeffs
    x1, x2 = x
    val = c1 * x1 * x1 + c2 * x1 * x2 + c3 * x2 * x2
    grad = np.array([2.0 * c1 * x1 + c2 * x2, c2 * x1 + 2.0 * c3 * x2])
    return val, grad


def _quad_hessian(coeffs):
    c1, c2, c3 = coeffs
    return np.array([[2.0 * c1, c2], [c2, 2.0 * c3]])


@dataclass(frozen=True)
class ModelForm:
    """Contact tube data: H, its derivatives, and a perturbation direction.

    All geometry enters through callables so that admissible instances
    can carry exact analytic derivatives:

      H(z, x)        -> float, the coefficient of the form
      dH(z, x)       -> (H_z, H_x1, H_x2)
      hess_h(z)      -> 2x2 axis x-Hessian of H at (z, 0)
      tilde(z, x)    -> perturbation direction h~, or None
      hess_tilde(z)  -> 2x2 axis x-Hessian of h~

    The window (t0 - eps, t0 + eps) is where H must be identically l
    and where h~ lives.  const_window_hessian marks the special family
    whose h~ axis Hessian is exactly that constant matrix on the closed
    window and zero outside (a rectangular profile in z); for those the
    linearized flow is propagated in closed form instead of by an ODE
    solver, since the coefficient is discontinuous at the window edges.
    """

    l: float
    t0: float
    eps: float
    H: Callable[[float, np.ndarray], float]
    dH: Callable[[float, np.ndarray], np.ndarray]
    hess_h: Callable[[float], np.ndarray]
    tilde: Optional[Callable[[float, np.ndarray], float]] = None
    hess_tilde: Optional[Callable[[float], np.ndarray]] = None
    const_window_hessian: Optional[np.ndarray] = None

    @property
    def window(self):
        return (self.t0 - self.eps, self.t0 + self.eps)


def model_reeb_field(form, zeta):
    """Reeb field of H(dz + x1 dx2) at zeta = (z, x1, x2).

    Components in the (z, x1, x2) basis:
        H^{-2} (H + x1 H_x1,  H_x2 - x1 H_z,  -H_x1).
    """
    z = float(zeta[0])
    x = np.asarray(zeta[1:], dtype=float)
    h = form.H(z, x)
    hz, h1, h2 = form.dH(z, x)
    return np.array([h + x[0] * h1, h2 - x[0] * hz, -h1]) / (h * h)


def alpha_value(form, zeta, w):
    """Pairing of the contact form H(dz + x1 dx2) with a tangent vector."""
    z = float(zeta[0])
    x = np.asarray(zeta[1:], dtype=float)
    return form.H(z, x) * (w[0] + x[0] * w[2])


def dalpha_value(form, zeta, u, w):
    """Pairing of d(H(dz + x1 dx2)) = dH ^ (dz + x1 dx2) + H dx1 ^ dx2."""
    z = float(zeta[0])
    x = np.asarray(zeta[1:], dtype=float)
    h = form.H(z, x)
    dh = form.dH(z, x)
    du = float(dh @ u)
    dw = float(dh @ w)
    return (du * (w[0] + x[0] * w[2]) - dw * (u[0] + x[0] * u[2])
            + h * (u[1] * w[2] - u[2] * w[1]))


def make_admissible(l, window, out_coeffs, in_coeffs,
                    out_modulation=None, in_modulation=None,
                    shoulder_frac=0.5):
    """Build an admissible ModelForm from bump data.

    H = l + chi_out(z) * Q(z, x) with chi_out a plateau bump supported
    on the complement of the window, and h~ = chi_in(z) * q(z, x) with
    chi_in supported inside the window.  Q and q are quadratic forms in
    x with coefficients out_coeffs / in_coeffs = (c1, c2, c3); optional
    modulation (amp, phase) triples make the coefficients z-dependent
    via c_k(z) = c_k * (1 + amp_k cos(2 pi (z - phase_k))).

    Raises WindowTooWide when the window closure touches {0, 1}.
    """
    t0, eps = float(window[0]), float(window[1])
    if eps <= 0.0 or t0 - eps <= 0.0 or t0 + eps >= 1.0:
        raise WindowTooWide(
            f"window ({t0 - eps:.6g}, {t0 + eps:.6g}) must sit strictly "
            "inside (0, 1)")
    l = float(l)
    if not (l > 0.0):
        raise InadmissibleForm("period parameter l must be positive")
    out_c = np.asarray(out_coeffs, dtype=float)
    in_c = np.asarray(in_coeffs, dtype=float)
    if out_c.shape != (3,) or in_c.shape != (3,):
        raise InadmissibleForm("bump coefficients must be length-3")

    def norm_mod(mod):
        if mod is None:
            return np.zeros(3), np.zeros(3)
        amp = np.asarray([m[0] for m in mod], dtype=float)
        pha = np.asarray([m[1] for m in mod], dtype=float)
        return amp, pha

    out_amp, out_pha = norm_mod(out_modulation)
    in_amp, in_pha = norm_mod(in_modulation)

    # chi_out lives on the complementary arc, centered opposite the
    # window; chi_in on the window itself.  Shoulders sit inside each
    # support so H == l exactly on the window closure.
    out_center = (t0 + 0.5) % 1.0
    out_half = 0.5 - eps
    out_sh = shoulder_frac * out_half
    in_sh = shoulder_frac * eps
    two_pi = 2.0 * math.pi

    def coeffs_at(base, amp, pha, z):
        return base * (1.0 + amp * np.cos(two_pi * (z - pha)))

    def coeffs_d(base, amp, pha, z):
        return base * (-two_pi * amp * np.sin(two_pi * (z - pha)))

    def H(z, x):
        chi = plateau_bump(z, out_center, out_half, out_sh)
        if chi == 0.0:
            return l
        c = coeffs_at(out_c, out_amp, out_pha, z)
        q, _ = _quad_eval(c, x)
        return l + chi * q

    def dH(z, x):
        chi = plateau_bump(z, out_center, out_half, out_sh)
        dchi = plateau_bump_d(z, out_center, out_half, out_sh)
        c = coeffs_at(out_c, out_amp, out_pha, z)
        dc = coeffs_d(out_c, out_amp, out_pha, z)
        q, grad = _quad_eval(c, x)
        qz, _ = _quad_eval(dc, x)
        return np.array([dchi * q + chi * qz, chi * grad[0], chi * grad[1]])

    def hess_h(z):
        chi = plateau_bump(z, out_center, out_half, out_sh)
        c = coeffs_at(out_c, out_amp, out_pha, z)
        return chi * _quad_hessian(c)

    def tilde(z, x):
        chi = plateau_bump(z, t0, eps, in_sh)
        if chi == 0.0:
            return 0.0
        c = coeffs_at(in_c, in_amp, in_pha, z)
        q, _ = _quad_eval(c, x)
        return chi * q

    def hess_tilde(z):
        chi = plateau_bump(z, t0, eps, in_sh)
        c = coeffs_at(in_c, in_amp, in_pha, z)
        return chi * _quad_hessian(c)

    return ModelForm(l=l, t0=t0, eps=eps, H=H, dH=dH, hess_h=hess_h,
                     tilde=tilde, hess_tilde=hess_tilde)


def constant_hessian_form(l, t0, eps, c):
    """Model form with H == l and h~ = (c/2)|x|^2 on the closed window.

    The h~ profile is rectangular in z, so the linearized coefficient is
    piecewise constant; model_linearized propagates it in closed form.
    """
    t0, eps, l, c = float(t0), float(eps), float(l), float(c)
    if eps <= 0.0 or t0 - eps <= 0.0 or t0 + eps >= 1.0:
        raise WindowTooWide(
            f"window ({t0 - eps:.6g}, {t0 + eps:.6g}) must sit strictly "
            "inside (0, 1)")
    a, b = t0 - eps, t0 + eps
    cmat = c * np.eye(2)

    def H(z, x):
        return l

    def dH(z, x):
        return np.zeros(3)

    def hess_h(z):
        return np.zeros((2, 2))

    def tilde(z, x):
        if a <= z <= b:
            return 0.5 * c * float(x[0] * x[0] + x[1] * x[1])
        return 0.0

    def hess_tilde(z):
        if a <= z <= b:
            return cmat.copy()
        return np.zeros((2, 2))

    return ModelForm(l=l, t0=t0, eps=eps, H=H, dH=dH, hess_h=hess_h,
                     tilde=tilde, hess_tilde=hess_tilde,
                     const_window_hessian=cmat)


def check_admissible(form, samples=129):
    """Max violation of each ModelForm invariant, by direct sampling.

    Returns a dict with keys 'axis_value', 'axis_gradient',
    'window_constancy', 'tilde_support'.  Sampling avoids the window
    boundary itself so rectangular profiles are not penalized for their
    edge values.
    """
    a, b = form.window
    zs = (np.arange(samples) + 0.5) / samples
    probes = [np.array([0.009, -0.013]), np.array([-0.011, 0.006])]
    axis_val = 0.0
    axis_grad = 0.0
    window_dev = 0.0
    tilde_out = 0.0
    origin = np.zeros(2)
    for z in zs:
        axis_val = max(axis_val, abs(form.H(z, origin) - form.l))
        dz, d1, d2 = form.dH(z, origin)
        axis_grad = max(axis_grad, abs(d1), abs(d2))
        inside = a + 1e-9 < z < b - 1e-9
        if inside:
            for x in probes:
                window_dev = max(window_dev, abs(form.H(z, x) - form.l))
            window_dev = max(window_dev,
                             float(np.max(np.abs(form.hess_h(z)))))
        elif form.hess_tilde is not None and not (a - 1e-9 <= z <= b + 1e-9):
            tilde_out = max(tilde_out,
                            float(np.max(np.abs(form.hess_tilde(z)))))
    return {"axis_value": axis_val, "axis_gradient": axis_grad,
            "window_constancy": window_dev, "tilde_support": tilde_out}


def _require_admissible(form):
    report = check_admissible(form)
    worst = max(report.values())
    if worst > ADMISSIBLE_TOL:
        bad = ", ".join(f"{k}={v:.3e}" for k, v in report.items()
                        if v > ADMISSIBLE_TOL)
        raise InadmissibleForm(f"model form violates invariants: {bad}")


@dataclass(frozen=True)
class FundamentalSolution:
    """Linearized flow R(t) on a grid over [0, 1], with R(0) = I.

    The coefficient matrix l^{-2} J (-hess H + (s l / 2) hess h~) is
    traceless, so det R(t) = 1 along the whole path.
    """

    t: np.ndarray
    mats: np.ndarray

    @property
    def final(self):
        return self.mats[-1]

    def det_defect(self):
        dets = (self.mats[:, 0, 0] * self.mats[:, 1, 1]
                - self.mats[:, 0, 1] * self.mats[:, 1, 0])
        return float(np.max(np.abs(dets - 1.0)))

    def at(self, t, tol=1e-12):
        """Matrix at a grid time (exact match within tol)."""
        i = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[i] - t) > tol:
            raise ValueError(f"t={t} is not on the solution grid")
        return self.mats[i]


def coefficient_matrix(form, z, s=0.0):
    """A_s(z) = l^{-2} J (-hess H + (s l / 2) hess h~) on the axis."""
    m = -form.hess_h(z)
    if s != 0.0 and form.hess_tilde is not None:
        m = m + (0.5 * s * form.l) * form.hess_tilde(z)
    return (J @ m) / (form.l * form.l)


def _exp_traceless(G, tau):
    """exp(tau * G) for traceless 2x2 G, in closed form."""
    d = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
    if d > 0.0:
        w = math.sqrt(d)
        return math.cos(w * tau) * np.eye(2) + (math.sin(w * tau) / w) * G
    if d < 0.0:
        w = math.sqrt(-d)
        return math.cosh(w * tau) * np.eye(2) + (math.sinh(w * tau) / w) * G
    return np.eye(2) + tau * G


def model_linearized(form, s=0.0, points_per_leg=POINTS_PER_LEG,
                     tol=ODE_TOL):
    """Fundamental solution R_s of the axis-linearized Reeb flow.

    Integrates R' = A_s(t) R over [0, 1] split at the window edges, so
    the solver only ever sees smooth coefficients.  Rectangular-profile
    forms (const_window_hessian set) are propagated by closed-form
    exponentials leg by leg.
    """
    a, b = form.window
    legs = [(0.0, a), (a, b), (b, 1.0)]
    ts = [np.array([0.0])]
    mats = [np.eye(2)[None]]
    r = np.eye(2)

    if form.const_window_hessian is not None:
        for (u, v) in legs:
            grid = np.linspace(u, v, points_per_leg)
            if u == a and v == b:
                G = (J @ ((0.5 * s * form.l) * form.const_window_hessian))
                G = G / (form.l * form.l)
                chunk = np.stack([_exp_traceless(G, t - u) @ r
                                  for t in grid[1:]])
            else:
                chunk = np.stack([r.copy() for _ in grid[1:]])
            ts.append(grid[1:])
            mats.append(chunk)
            r = chunk[-1]
        return FundamentalSolution(np.concatenate(ts), np.concatenate(mats))

    def rhs(t, y):
        return (coefficient_matrix(form, t, s) @ y.reshape(2, 2)).ravel()

    for (u, v) in legs:
        grid = np.linspace(u, v, points_per_leg)
        sol = solve_ivp(rhs, (u, v), r.ravel(), method="DOP853",
                        rtol=tol, atol=tol, t_eval=grid, dense_output=False)
        if not sol.success:
            raise StepUnderflow(
                f"linearized model flow failed on [{u:.4g}, {v:.4g}]: "
                f"{sol.message}")
        chunk = sol.y.T[1:].reshape(-1, 2, 2)
        ts.append(grid[1:])
        mats.append(chunk)
        r = chunk[-1].copy()
    return FundamentalSolution(np.concatenate(ts), np.concatenate(mats))


def window_constancy(form, sol):
    """Max entrywise drift of R over the open window (zero coefficient)."""
    a, b = form.window
    mask = (sol.t > a + 1e-12) & (sol.t < b - 1e-12)
    if not np.any(mask):
        return 0.0
    block = sol.mats[mask]
    return float(np.max(np.abs(block - block[0])))


def _simpson_window(fn, a, b, tol=SIMPSON_TOL):
    """Adaptive composite Simpson for a matrix-valued integrand."""
    def composite(n):
        zs = np.linspace(a, b, n + 1)
        vals = np.stack([np.asarray(fn(z), dtype=float) for z in zs])
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return np.tensordot(w, vals, axes=(0, 0)) * ((b - a) / (3.0 * n))

    n = 16
    prev = composite(n)
    for _ in range(12):
        n *= 2
        cur = composite(n)
        if np.max(np.abs(cur - prev)) <= tol * max(1.0, float(np.max(np.abs(cur)))):
            return cur
        prev = cur
    return prev


def lemma31_prediction(form, points_per_leg=POINTS_PER_LEG):
    """Closed-form s-derivative of the return matrix R_s(1) at s = 0.

        dP = P(0) R_0(t0)^{-1} ( int_window J hess(h~) / (2l) dt ) R_0(t0)

    with P(0) = R_0(1).  R_0 is constant across the window, so R_0(t0)
    is read off the window grid.  Raises InadmissibleForm when the form
    violates its invariants.
    """
    if form.hess_tilde is None:
        raise InadmissibleForm("model form carries no perturbation direction")
    _require_admissible(form)
    a, b = form.window
    sol0 = model_linearized(form, 0.0, points_per_leg=points_per_leg)
    integral = _simpson_window(form.hess_tilde, a, b)
    m = (J @ integral) / (2.0 * form.l)
    r_w = sol0.at(a)
    det = r_w[0, 0] * r_w[1, 1] - r_w[0, 1] * r_w[1, 0]
    r_w_inv = np.array([[r_w[1, 1], -r_w[0, 1]],
                        [-r_w[1, 0], r_w[0, 0]]]) / det
    return sol0.final @ r_w_inv @ m @ r_w


def lemma31_fd_oracle(form, ds=1e-4, points_per_leg=POINTS_PER_LEG):
    """Central-difference s-derivative of R_s(1) at s = 0."""
    plus = model_linearized(form, +ds, points_per_leg=points_per_leg)
    minus = model_linearized(form, -ds, points_per_leg=points_per_leg)
    return (plus.final - minus.final) / (2.0 * ds)


def splice_defect(form, s, points_per_leg=POINTS_PER_LEG):
    """Max defect of R_s(t) = R_0(t) R_0(b)^{-1} R_s(b) for t >= b.

    Past the window the perturbation is gone, so the s-flow and the
    0-flow differ only by their state at the window exit b = t0 + eps.
    """
    b = form.window[1]
    sol0 = model_linearized(form, 0.0, points_per_leg=points_per_leg)
    sols = model_linearized(form, s, points_per_leg=points_per_leg)
    r0_b = sol0.at(b)
    det = r0_b[0, 0] * r0_b[1, 1] - r0_b[0, 1] * r0_b[1, 0]
    r0_b_inv = np.array([[r0_b[1, 1], -r0_b[0, 1]],
                         [-r0_b[1, 0], r0_b[0, 0]]]) / det
    carry = r0_b_inv @ sols.at(b)
    mask = sol0.t >= b - 1e-12
    worst = 0.0
    for r0, rs in zip(sol0.mats[mask], sols.mats[mask]):
        worst = max(worst, float(np.max(np.abs(rs - r0 @ carry))))
    return worst


def random_admissible(seed):
    """Randomized admissible instance for the derivative check.

    Draws the period, window, quadratic coefficients, and modulation
    from a seeded generator; returns (form, description dict).
    """
    rng = np.random.default_rng(seed)
    l = float(rng.uniform(0.5, 3.0))
    eps = float(rng.uniform(0.05, 0.15))
    t0 = float(rng.uniform(eps + 0.05, 1.0 - eps - 0.05))
    out_c = rng.normal(0.0, 0.6, size=3)
    in_c = rng.normal(0.0, 1.0, size=3)
    out_mod = [(float(rng.uniform(-0.5, 0.5)), float(rng.uniform(0, 1)))
               for _ in range(3)]
    in_mod = [(float(rng.uniform(-0.5, 0.5)), float(rng.uniform(0, 1)))
              for _ in range(3)]
    form = make_admissible(l, (t0, eps), out_c, in_c,
                           out_modulation=out_mod, in_modulation=in_mod)
    meta = {"seed": int(seed), "l": l, "t0": t0, "eps": eps}
    return form, meta


def lemma31_table(instances=20, seed=7, ds=1e-4):
    """Prediction-vs-oracle rows for a batch of random instances.

    Each row is (instance_seed, prediction_norm, oracle_norm,
    relative_error) with Frobenius norms; relative error is measured
    against the oracle norm.
    """
    root = np.random.SeedSequence(seed)
    rows = []
    for child in root.spawn(instances):
        inst_seed = int(child.generate_state(1)[0])
        form, _ = random_admissible(inst_seed)
        pred = lemma31_prediction(form)
        oracle = lemma31_fd_oracle(form, ds=ds)
        pn = float(np.linalg.norm(pred))
        on = float(np.linalg.norm(oracle))
        rel = float(np.linalg.norm(pred - oracle) / max(on, 1e-300))
        rows.append((inst_seed, pn, on, rel))
    return rows
