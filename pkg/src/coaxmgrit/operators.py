"""Discrete operators of the field-circuit model.

Linear nodal elements on the radial mesh with the axisymmetric weight
2*pi*r dr (per unit axial length) and 2-point Gauss quadrature per element
give

* the conductivity mass matrix M (tridiagonal, supported on the shield),
* the winding coupling vector X with sum(X) = 1 (single-turn stranded
  conductor, chi = 1/S0 on the wire),
* the nonlinear stiffness action K(a)a and its exact tridiagonal Jacobian
  using the differential reluctivity nu_d(B) = nu(B) + B * nu'(B).

One backward-Euler block row for the unknowns u = (a, i) reads

    field:   M (a - a_prev) / dt + K(a) a - X i          = g_field
    circuit: X^T (a - a_prev) / dt                       = g_circuit

with the outer Dirichlet row eliminated.  ``phi_row``/``gamma_row`` split
the row into the part evaluated at the current unknown and the shift term
carried by the previous time point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .materials import VACUUM_RELUCTIVITY, MaterialMap
from .mesh import Mesh1D, Region

__all__ = [
    "EPS_B",
    "State",
    "AssembledOperators",
    "assemble",
    "stiffness_and_jacobian",
    "flux_linkage",
    "dae_residual",
]

# below this |dA/dr| the differential reluctivity is evaluated at EPS_B
EPS_B = 1.0e-12


@dataclass(frozen=True)
class State:
    """One time point's unknowns: nodal potentials a [Wb/m] and current i [A].

    ``a`` includes the constrained outer boundary node, which must be zero.
    """

    a: np.ndarray
    i: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "i", float(self.i))
        if a[-1] != 0.0:
            raise ValueError("outer boundary potential must be zero (Dirichlet)")

    def as_vector(self) -> np.ndarray:
        """Flat solver vector [a_0 .. a_{N-1}, i] (Dirichlet node dropped)."""
        return np.concatenate([self.a[:-1], [self.i]])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "State":
        vec = np.asarray(vec, dtype=float)
        return cls(np.concatenate([vec[:-1], [0.0]]), float(vec[-1]))

    @classmethod
    def zeros(cls, n_nodes: int) -> "State":
        return cls(np.zeros(n_nodes), 0.0)


@dataclass(frozen=True)
class AssembledOperators:
    """State-independent operators plus the quadrature cache for K(a)a."""

    mesh: Mesh1D
    materials: MaterialMap
    mass_diag: np.ndarray = field(init=False, repr=False, compare=False)
    mass_off: np.ndarray = field(init=False, repr=False, compare=False)
    coupling: np.ndarray = field(init=False, repr=False, compare=False)
    _quad: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mesh, mat = self.mesh, self.materials
        r = mesh.nodes
        h = mesh.element_lengths()
        mid = 0.5 * (r[:-1] + r[1:])
        # 2-point Gauss abscissae/weights on each element, weight 2*pi*r dr
        offs = h / (2.0 * np.sqrt(3.0))
        rq = np.stack([mid - offs, mid + offs], axis=1)
        wq2pr = 0.5 * h[:, None] * 2.0 * np.pi * rq

        sigma = np.array([mat.conductivity(Region(c)) for c in mesh.element_regions])
        # local shapes on [r_p, r_{p+1}]: phi_p = (r_{p+1}-r)/h, phi_{p+1} = (r-r_p)/h
        phi_l = (r[1:, None] - rq) / h[:, None]
        phi_r = (rq - r[:-1, None]) / h[:, None]
        m_ll = (sigma[:, None] * wq2pr * phi_l * phi_l).sum(axis=1)
        m_rr = (sigma[:, None] * wq2pr * phi_r * phi_r).sum(axis=1)
        m_lr = (sigma[:, None] * wq2pr * phi_l * phi_r).sum(axis=1)
        mass_diag = np.zeros(mesh.n_nodes)
        mass_diag[:-1] += m_ll
        mass_diag[1:] += m_rr
        mass_off = m_lr

        wire_area = np.pi * mesh.r_wire**2
        chi = np.where(mesh.element_regions == Region.WIRE, 1.0 / wire_area, 0.0)
        coupling = np.zeros(mesh.n_nodes)
        coupling[:-1] += (chi[:, None] * wq2pr * phi_l).sum(axis=1)
        coupling[1:] += (chi[:, None] * wq2pr * phi_r).sum(axis=1)

        is_shield = mesh.element_regions == Region.SHIELD
        nu_eps_shield = float(mat.shield_reluctivity.evaluate(EPS_B)[0])
        object.__setattr__(self, "mass_diag", mass_diag)
        object.__setattr__(self, "mass_off", mass_off)
        object.__setattr__(self, "coupling", coupling)
        object.__setattr__(self, "_quad", {
            "h": h, "wq2pr": wq2pr, "swq": wq2pr.sum(axis=1),
            "is_shield": is_shield, "nu_eps_shield": nu_eps_shield,
        })

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_free(self) -> int:
        return self.mesh.n_free

    @property
    def n_rows(self) -> int:
        """Rows of one block row: free potentials plus the circuit row."""
        return self.mesh.n_free + 1

    # -- potentials helpers -------------------------------------------------

    def full_potentials(self, a_free: np.ndarray) -> np.ndarray:
        """Append the Dirichlet zero; works on (..., n_free) arrays."""
        pad = np.zeros(a_free.shape[:-1] + (1,))
        return np.concatenate([a_free, pad], axis=-1)

    def mass_matvec(self, a_full: np.ndarray) -> np.ndarray:
        d, o = self.mass_diag, self.mass_off
        out = d * a_full
        out[..., :-1] += o * a_full[..., 1:]
        out[..., 1:] += o * a_full[..., :-1]
        return out

    # -- nonlinear stiffness ------------------------------------------------

    def _reluctivity_per_element(self, b_elem: np.ndarray, with_derivative: bool):
        """nu (and nu_d) per element; b_elem has shape (..., n_el).

        With linear shape functions B is constant on each element, so one
        evaluation serves both quadrature points of the element.
        """
        q = self._quad
        shield = q["is_shield"]
        nu = np.full(b_elem.shape, VACUUM_RELUCTIVITY)
        b_s = b_elem[..., shield]
        nu_s, dnu_s = self.materials.shield_reluctivity.evaluate(b_s)
        nu[..., shield] = nu_s
        if not with_derivative:
            return nu, None
        nud = np.array(nu)  # constant regions: nu_d = nu
        nud[..., shield] = np.where(b_s < EPS_B, q["nu_eps_shield"],
                                    nu_s + b_s * dnu_s)
        return nu, nud

    def stiffness_action(self, a_full: np.ndarray) -> np.ndarray:
        """K(a)a on (..., n_nodes) potential arrays."""
        q = self._quad
        s = np.diff(a_full, axis=-1) / q["h"]
        nu, _ = self._reluctivity_per_element(np.abs(s), with_derivative=False)
        flux = nu * q["swq"] * s / q["h"]
        out = np.zeros_like(a_full)
        out[..., :-1] -= flux
        out[..., 1:] += flux
        return out

    def stiffness_and_jacobian(self, a_full: np.ndarray):
        """K(a)a plus its exact tridiagonal Jacobian (diag, off) for one state."""
        q = self._quad
        s = np.diff(a_full) / q["h"]
        nu, nud = self._reluctivity_per_element(np.abs(s), with_derivative=True)
        flux = nu * q["swq"] * s / q["h"]
        action = np.zeros_like(a_full)
        action[:-1] -= flux
        action[1:] += flux
        j = nud * q["swq"] / q["h"] ** 2
        diag = np.zeros_like(a_full)
        diag[:-1] += j
        diag[1:] += j
        return action, diag, -j

    def flux_linkage(self, a_full: np.ndarray) -> float:
        return float(self.coupling @ a_full)

    # -- backward-Euler block row -------------------------------------------

    def phi_rows(self, vecs: np.ndarray, dt: float) -> np.ndarray:
        """Current-unknown part of the block row; vecs has shape (..., n_rows)."""
        a_full = self.full_potentials(vecs[..., :-1])
        i = vecs[..., -1:]
        rows = (self.mass_matvec(a_full) / dt + self.stiffness_action(a_full))[..., :-1]
        rows = rows - self.coupling[:-1] * i
        # fixed-order reduction: identical per row for any batch shape,
        # which keeps partitioned (parallel) evaluation bitwise reproducible
        circuit = (a_full * self.coupling).sum(axis=-1)[..., None] / dt
        return np.concatenate([rows, circuit], axis=-1)

    def gamma_rows(self, vecs: np.ndarray, dt: float) -> np.ndarray:
        """Shift term carried by the previous time point."""
        a_full = self.full_potentials(vecs[..., :-1])
        rows = self.mass_matvec(a_full)[..., :-1] / dt
        circuit = (a_full * self.coupling).sum(axis=-1)[..., None] / dt
        return np.concatenate([rows, circuit], axis=-1)

    def newton_jacobian_parts(self, vec: np.ndarray, dt: float):
        """Tridiagonal field Jacobian M/dt + J_K restricted to the free nodes."""
        a_full = self.full_potentials(vec[:-1])
        _, kdiag, koff = self.stiffness_and_jacobian(a_full)
        diag = self.mass_diag / dt + kdiag
        off = self.mass_off / dt + koff
        return diag[:-1], off[:-1]


def assemble(mesh: Mesh1D, materials: MaterialMap) -> AssembledOperators:
    """Assemble the state-independent operators for a mesh/material pair."""
    return AssembledOperators(mesh, materials)


def stiffness_and_jacobian(a: np.ndarray, mesh: Mesh1D, materials: MaterialMap):
    """Convenience wrapper assembling on the fly; ``a`` is the full nodal vector."""
    return assemble(mesh, materials).stiffness_and_jacobian(np.asarray(a, dtype=float))


def flux_linkage(a: np.ndarray, ops: AssembledOperators) -> float:
    """Winding flux linkage X^T a [Wb]."""
    return ops.flux_linkage(np.asarray(a, dtype=float))


def dae_residual(u: State, u_prev: State, dt: float, t: float,
                 ops: AssembledOperators, source) -> np.ndarray:
    """Backward-Euler residual of one step, length n_free + 1.

    Zero iff u solves the step from u_prev over dt with the source voltage
    evaluated at t.
    """
    if not dt > 0.0:
        raise ValueError("time step must be positive")
    vec, vec_prev = u.as_vector(), u_prev.as_vector()
    if vec.shape != (ops.n_rows,) or vec_prev.shape != (ops.n_rows,):
        raise ValueError("state dimension does not match the assembled operators")
    g = np.zeros(ops.n_rows)
    g[-1] = source.voltage(t)
    return ops.phi_rows(vec, dt) - ops.gamma_rows(vec_prev, dt) - g
