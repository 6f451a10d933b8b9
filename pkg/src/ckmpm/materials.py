"""Constitutive models: fixed corotated, J-fluid, and Drucker-Prager sand.

Stresses are returned as first Piola-Kirchhoff ``P``; the transfer kernels
work with the Kirchhoff form ``tau = P F^T`` which the batch code evaluates
through the numba helpers in ``_nb``.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _nb
from .errors import ConfigError, InvertedElementError

#: material table columns (see ``material_table``)
COL_KIND, COL_MU, COL_LAMBDA, COL_BULK, COL_GAMMA, COL_VISC, COL_ALPHA, COL_RHO = range(8)
TABLE_WIDTH = 8

RESERVED_KINDS = ("nacc", "von_mises")


def lame_from_E_nu(E, nu):
    """Young's modulus and Poisson ratio to Lamé parameters (mu, lambda)."""
    if nu >= 0.5:
        raise ValueError(f"Poisson ratio must be < 0.5, got {nu}")
    if nu <= -1.0:
        raise ValueError(f"Poisson ratio must be > -1, got {nu}")
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return mu, lam


def dp_alpha(friction_angle):
    """Cone slope for a friction angle given in degrees."""
    s = math.sin(math.radians(friction_angle))
    return math.sqrt(2.0 / 3.0) * 2.0 * s / (3.0 - s)


def _require(cond, field, message):
    if not cond:
        raise ConfigError(field, message)


@dataclass(frozen=True)
class FixedCorotated:
    E: float
    nu: float
    density: float

    kind = "fixed_corotated"

    def __post_init__(self):
        _require(self.E > 0, "E", f"must be > 0, got {self.E}")
        _require(0 <= self.nu < 0.5, "nu", f"must be in [0, 0.5), got {self.nu}")
        _require(self.density > 0, "density", f"must be > 0, got {self.density}")

    @property
    def lame(self):
        return lame_from_E_nu(self.E, self.nu)

    def wave_speed(self):
        mu, lam = self.lame
        return math.sqrt((lam + 2.0 * mu) / self.density)

    def row(self):
        mu, lam = self.lame
        r = np.zeros(TABLE_WIDTH)
        r[COL_KIND] = _nb.MAT_COROTATED
        r[COL_MU], r[COL_LAMBDA], r[COL_RHO] = mu, lam, self.density
        return r


@dataclass(frozen=True)
class DruckerPrager:
    E: float
    nu: float
    friction_angle: float
    density: float

    kind = "drucker_prager"

    def __post_init__(self):
        _require(self.E > 0, "E", f"must be > 0, got {self.E}")
        _require(0 <= self.nu < 0.5, "nu", f"must be in [0, 0.5), got {self.nu}")
        _require(0 < self.friction_angle < 90, "friction_angle",
                 f"must be in (0, 90) degrees, got {self.friction_angle}")
        _require(self.density > 0, "density", f"must be > 0, got {self.density}")

    @property
    def lame(self):
        return lame_from_E_nu(self.E, self.nu)

    @property
    def alpha(self):
        return dp_alpha(self.friction_angle)

    def wave_speed(self):
        mu, lam = self.lame
        return math.sqrt((lam + 2.0 * mu) / self.density)

    def row(self):
        mu, lam = self.lame
        r = np.zeros(TABLE_WIDTH)
        r[COL_KIND] = _nb.MAT_DRUCKER_PRAGER
        r[COL_MU], r[COL_LAMBDA], r[COL_RHO] = mu, lam, self.density
        r[COL_ALPHA] = self.alpha
        return r


@dataclass(frozen=True)
class JFluid:
    bulk: float
    gamma: float
    viscosity: float
    density: float

    kind = "j_fluid"

    def __post_init__(self):
        _require(self.bulk > 0, "bulk", f"must be > 0, got {self.bulk}")
        _require(self.gamma > 1, "gamma", f"must be > 1, got {self.gamma}")
        _require(self.viscosity >= 0, "viscosity", f"must be >= 0, got {self.viscosity}")
        _require(self.density > 0, "density", f"must be > 0, got {self.density}")

    def wave_speed(self, J=1.0):
        # c^2 = dp/drho = gamma B J^(1 - gamma) / rho0; stiffens sharply under compression
        return math.sqrt(self.bulk * self.gamma * J ** (1.0 - self.gamma) / self.density)

    def row(self):
        r = np.zeros(TABLE_WIDTH)
        r[COL_KIND] = _nb.MAT_JFLUID
        r[COL_BULK], r[COL_GAMMA], r[COL_VISC] = self.bulk, self.gamma, self.viscosity
        r[COL_RHO] = self.density
        return r


Material = FixedCorotated | DruckerPrager | JFluid

_KINDS = {
    "fixed_corotated": FixedCorotated,
    "drucker_prager": DruckerPrager,
    "j_fluid": JFluid,
}


def make_material(kind, **params):
    """Build a material from its tag; reserved tags fail with 'not implemented'."""
    if kind in RESERVED_KINDS:
        raise ConfigError("material.kind", f"{kind!r} is reserved but not implemented")
    if kind not in _KINDS:
        raise ConfigError("material.kind", f"unknown material {kind!r}")
    cls = _KINDS[kind]
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigError("material", f"{kind}: {exc}") from None


def material_table(materials):
    """Pack materials into the (n, TABLE_WIDTH) float table read by the kernels."""
    if not materials:
        return np.zeros((1, TABLE_WIDTH))
    return np.stack([m.row() for m in materials])


# -- per-particle math ---------------------------------------------------------

def svd3(F):
    """Rotation-variant SVD: F = U diag(sigma) V^T with det U = det V = +1.

    Singular values come back sorted descending, with any reflection carried
    by a negative last entry.
    """
    F = np.ascontiguousarray(F, dtype=np.float64)
    U = np.empty((3, 3))
    V = np.empty((3, 3))
    sig = np.empty(3)
    _nb.svd3(F, U, sig, V, np.empty((3, 3)))
    return U, sig, V


def polar_rotation(F):
    U, _, V = svd3(F)
    return U @ V.T


def fixed_corotated_energy(F, mu, lam):
    """Psi(F) = mu sum (sigma_i - 1)^2 + lam/2 (J - 1)^2."""
    _, sig, _ = svd3(F)
    J = float(np.prod(sig))
    return mu * float(np.sum((sig - 1.0) ** 2)) + 0.5 * lam * (J - 1.0) ** 2


def stress_fixed_corotated(F, mu, lam):
    """P = 2 mu (F - R) + lam (J - 1) J F^-T."""
    F = np.asarray(F, dtype=float)
    J = np.linalg.det(F)
    if not J > 0:
        raise InvertedElementError(message=f"det F = {J:.6g} <= 0")
    R = polar_rotation(F)
    return 2.0 * mu * (F - R) + lam * (J - 1.0) * J * np.linalg.inv(F).T


def stress_hencky(F, mu, lam):
    """St. Venant-Kirchhoff stress in Hencky strain, the elastic law under Drucker-Prager."""
    F = np.asarray(F, dtype=float)
    U, sig, V = svd3(F)
    if not sig[2] > 0:
        raise InvertedElementError(message="det F <= 0")
    eps = np.log(sig)
    tau = U @ np.diag(2.0 * mu * eps + lam * eps.sum()) @ U.T
    return tau @ np.linalg.inv(F).T


def stress_j_fluid(J, bulk, gamma):
    """Returns (p, tau) with p = B (J^-gamma - 1) and Kirchhoff stress tau = -J p I."""
    if not J > 0:
        raise InvertedElementError(message=f"J = {J:.6g} <= 0")
    p = bulk * (J ** (-gamma) - 1.0)
    return p, -J * p * np.eye(3)


def viscous_kirchhoff(J, gradv, viscosity):
    """Deviatoric damping J mu_v (grad v + grad v^T - 2/3 tr(grad v) I)."""
    G = np.asarray(gradv, dtype=float)
    return J * viscosity * (G + G.T - (2.0 / 3.0) * np.trace(G) * np.eye(3))


def dp_yield(F, friction_angle, mu, lam):
    """Yield function in strain units; <= 0 inside the admissible cone."""
    _, sig, _ = svd3(F)
    eps = np.log(sig)
    tr = eps.sum()
    dev = eps - tr / 3.0
    return float(np.linalg.norm(dev) + dp_alpha(friction_angle) * (3 * lam + 2 * mu) / (2 * mu) * tr)


def return_map_drucker_prager(F_trial, friction_angle, mu, lam):
    """Project a trial elastic F back onto the Drucker-Prager cone."""
    F = np.ascontiguousarray(F_trial, dtype=np.float64)
    out = np.empty((3, 3))
    code = _nb.dp_project(F, mu, lam, dp_alpha(friction_angle), out, np.empty((3, 3)),
                          np.empty(3), np.empty((3, 3)), np.empty((3, 3)))
    if code != _nb.OK:
        raise InvertedElementError(message="det F_trial <= 0")
    return out


def kirchhoff_stress(material, F=None, J=1.0, gradv=None):
    """tau = P F^T for any material, as consumed by the force scatter."""
    F = np.eye(3) if F is None else np.ascontiguousarray(F, dtype=np.float64)
    G = np.zeros((3, 3)) if gradv is None else np.ascontiguousarray(gradv, dtype=np.float64)
    tau = np.empty((3, 3))
    code = _nb.kirchhoff(F, float(J), G, material.row(), tau, np.empty((3, 3)), np.empty(3),
                         np.empty((3, 3)), np.empty((3, 3)))
    if code != _nb.OK:
        raise InvertedElementError()
    return tau
