"""Property suites behind the ``verify`` command.

Each check returns (name, passed, detail). Checks look up the material and
element functions through their modules at call time, so a corrupted
implementation (monkeypatched in tests) is caught.
"""

from __future__ import annotations

import numpy as np

from . import element as element_mod
from . import material as material_mod
from .kinematics import kinematic_state, rotation_proxies
from .oracles import FdScheme, fd_gradient, fd_jacobian
from .shapes import NODES_PER_KIND, PARENT_CORNERS, quadrature, shape_values

SOLID = material_mod.SolidParams(K=20.0, mu=10.0, k_theta=100.0, alpha_t=1e-3, theta0=20.0)
MEDIUM = material_mod.MediumParams(gamma=1e-4, k_tm=1.0, k_cap=100.0, alpha_tm=1e-3, beta1=1.0,
                                   beta2=1e-2, theta0=20.0)
PARENT_MEASURE = {"T1": 0.5, "Q1": 4.0, "H1": 8.0}


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-30))


def random_F(rng, dim=3, scale=0.2):
    while True:
        F = np.eye(dim) + scale * rng.standard_normal((dim, dim))
        if np.linalg.det(F) > 0.3:
            return F


def random_element_state(rng, kind, material, amplitude=0.05):
    """Perturbed parent element with a random admissible field state."""
    dim = 3 if kind == "H1" else 2
    X = PARENT_CORNERS[kind].astype(float) * (0.5 if kind != "T1" else 1.0)
    X = X + 0.05 * rng.standard_normal(X.shape)
    ndpn = element_mod.dofs_per_node(dim, material)
    fields = np.zeros((NODES_PER_KIND[kind], ndpn))
    fields[:, :dim] = amplitude * rng.standard_normal((NODES_PER_KIND[kind], dim))
    fields[:, dim] = 20.0 + 5.0 * rng.standard_normal(NODES_PER_KIND[kind])
    if ndpn > dim + 1:
        fields[:, dim + 1 :] = 0.1 * rng.standard_normal((NODES_PER_KIND[kind], ndpn - dim - 1))
    return X, fields


def check_stress(n_states=10, seed=0):
    """Stresses equal 2 dPsi/dC by central differences on random C."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for mat, energy, stress in ((SOLID, "solid_energy", "solid_stress"), (MEDIUM, "medium_energy", "medium_stress")):
        for _ in range(n_states):
            F = random_F(rng)
            C = F.T @ F
            theta = 20.0 + 10.0 * rng.standard_normal()

            def psi(Cv):
                Cs = 0.5 * (Cv + Cv.T)
                U = _sqrtm_spd(Cs)
                return getattr(material_mod, energy)(kinematic_state(U), theta, mat)

            g = fd_gradient(psi, C, FdScheme(1e-6))
            g = 0.5 * (g + g.T)
            S = getattr(material_mod, stress)(kinematic_state(F), theta, mat).S
            worst = max(worst, _rel(2.0 * g, S))
    return "stress_fd", bool(worst < 1e-6), f"max rel err {worst:.2e}"


def _sqrtm_spd(C):
    w, V = np.linalg.eigh(C)
    return (V * np.sqrt(w)) @ V.T


def check_tangents(n_states=50, seed=1, laws=("ramp", "floored")):
    """Analytic element tangents against central-difference Jacobians."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for kind in ("T1", "Q1", "H1"):
        for mat in (SOLID, MEDIUM):
            variants = [mat] if isinstance(mat, material_mod.SolidParams) else [
                material_mod.MediumParams(**{**mat.__dict__, "conductivity_law": law}) for law in laws
            ]
            for m in variants:
                for _ in range(n_states // len(variants) + (n_states % len(variants) > 0)):
                    X, f = random_element_state(rng, kind, m, amplitude=0.08)
                    es = element_mod.element_system(kind, X, f, m, d=2.0)

                    def res(x, X=X, m=m, shape=f.shape):
                        return element_mod.element_system(kind, X, x.reshape(shape), m, d=2.0).r

                    K_fd = fd_jacobian(res, f.ravel(), FdScheme(1e-7))
                    worst = max(worst, _rel(es.k, K_fd))
    return "tangent_fd", bool(worst < 1e-6), f"max rel err {worst:.2e}"


def check_quadrature():
    ok = True
    detail = []
    for kind, measure in PARENT_MEASURE.items():
        _, w = quadrature(kind)
        err = abs(w.sum() - measure)
        ok &= err <= 1e-15 * measure
        pts, _ = quadrature(kind)
        ok &= bool(np.allclose(shape_values(kind, pts).sum(axis=1), 1.0, atol=1e-15))
        detail.append(f"{kind}:{err:.1e}")
    return "quadrature", bool(ok), " ".join(detail)


def check_rigid_motion(seed=2):
    """Rigid rotation plus translation at uniform theta0 leaves every residual row at zero."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for kind in ("T1", "Q1", "H1"):
        dim = 3 if kind == "H1" else 2
        for mat in (SOLID, MEDIUM):
            X, f = random_element_state(rng, kind, mat)
            R = _rotation(rng, dim)
            f[:, :dim] = X @ R.T - X + rng.standard_normal(dim)
            f[:, dim] = mat.theta0
            if f.shape[1] > dim + 1:
                # auxiliary fields matching the (constant) rotation proxies of R
                f[:, dim + 1 :] = 2.0 * rotation_proxies(R)
            es = element_mod.element_system(kind, X, f, mat, d=2.0)
            r = es.r.reshape(f.shape)
            # rows scaled by the modulus that generates them
            if isinstance(mat, material_mod.SolidParams):
                stiff, cond = mat.K, mat.k_theta
            else:
                stiff, cond = max(mat.gamma, mat.beta1), mat.k_cap
            mech = np.abs(r[:, :dim]).max() / stiff
            therm = np.abs(r[:, dim]).max() / (cond * max(abs(mat.theta0), 1.0))
            aux = np.abs(r[:, dim + 1 :]).max(initial=0.0) / getattr(mat, "beta1", 1.0)
            worst = max(worst, mech, therm, aux)
    return "rigid_motion", bool(worst < 1e-12), f"max scaled row {worst:.2e}"


def _rotation(rng, dim):
    """Random proper rotation with angles below 45 degrees (proxy denominators stay large)."""
    if dim == 2:
        a = rng.uniform(-np.pi / 4, np.pi / 4)
        return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    a = rng.uniform(-np.pi / 4, np.pi / 4)
    Kx = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(a) * Kx + (1 - np.cos(a)) * Kx @ Kx


def check_conductivity():
    m = material_mod.MediumParams(gamma=1e-4, k_tm=1.0, k_cap=100.0)
    k1 = float(material_mod.medium_conductivity(1.0, m))
    ke = float(material_mod.medium_conductivity(np.exp(-1.0), m))
    jc = np.exp(-np.sqrt(m.k_cap / m.k_tm))
    kc = material_mod.medium_conductivity(np.array([jc, jc * 0.5, jc * 1e-3]), m)
    ok = k1 == 0.0 and abs(ke - m.k_tm) < 1e-12 and np.allclose(kc, m.k_cap, rtol=1e-12)
    return "conductivity", bool(ok), f"k(1)={k1:g} k(1/e)={ke:.15g} k(J_cap)={kc[0]:.15g}"


def check_barrier():
    """Compressive medium pressure grows as J drops through 0.5, 0.1, 0.01."""
    pressures = []
    for J in (0.5, 0.1, 0.01):
        F = np.diag([1.0, 1.0, J])
        kin = kinematic_state(F)
        S = material_mod.medium_stress(kin, MEDIUM.theta0, MEDIUM).S
        sigma = F @ S @ F.T / J
        pressures.append(-np.trace(sigma) / 3.0)
    p = np.array(pressures)
    ok = bool(np.all(p > 0) and np.all(np.diff(p) > 0))
    return "barrier", ok, "pressures " + " ".join(f"{v:.4e}" for v in p)


def check_regularization(seed=3):
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(20):
        f = rng.standard_normal(3)
        pv = f * 2.0
        val = material_mod.regularization_density(f, pv, np.zeros((3, 3)), 1.0, 1e-2, 2.0)
        ok &= abs(val) < 1e-15
        gp = rng.standard_normal((3, 3))
        ok &= material_mod.regularization_density(f, pv, gp, 1.0, 1e-2, 2.0) > 0
        ok &= material_mod.regularization_density(f, pv + 0.1, np.zeros((3, 3)), 1.0, 1e-2, 2.0) > 0
    return "regularization", bool(ok), "zero iff both penalties vanish"


GROUPS = {
    "stress": check_stress,
    "tangent": check_tangents,
    "quadrature": check_quadrature,
    "rigid": check_rigid_motion,
    "conductivity": check_conductivity,
    "barrier": check_barrier,
    "regularization": check_regularization,
}


def run_checks(only=None):
    """Run the selected groups (all when ``only`` is empty)."""
    names = list(GROUPS) if not only else list(only)
    unknown = [n for n in names if n not in GROUPS]
    if unknown:
        raise KeyError(f"unknown check group(s): {', '.join(unknown)}")
    return [GROUPS[n]() for n in names]
