"""Convenience bundle tying mesh, materials, source and operators together."""

from __future__ import annotations

from dataclasses import dataclass

from .materials import ConstantReluctivity, MaterialMap, ReluctivitySpline, load_reluctivity_table
from .mesh import Mesh1D, build_mesh
from .operators import AssembledOperators, State, assemble
from .source import PwmSource

__all__ = ["CableProblem", "build_problem"]


@dataclass(frozen=True)
class CableProblem:
    """Immutable model instance; safe to share between solver workers."""

    mesh: Mesh1D
    materials: MaterialMap
    source: PwmSource
    ops: AssembledOperators

    @property
    def n_rows(self) -> int:
        return self.ops.n_rows

    def zero_state(self) -> State:
        return State.zeros(self.mesh.n_nodes)

    def probe_indices(self) -> tuple[int, int, int]:
        """Wire center, shield inner boundary, shield midpoint node indices."""
        mesh = self.mesh
        return (0, mesh.shield_inner_index,
                mesh.nearest_node(0.5 * (mesh.r_ins + mesh.r_out)))


def build_problem(n_nodes: int = 65,
                  r_wire: float = 1.0e-3,
                  r_ins: float = 2.0e-3,
                  r_out: float = 3.0e-3,
                  sigma_shield: float = 1.0e7,
                  shield_reluctivity=None,
                  amplitude: float = 0.25,
                  period: float = 0.02,
                  teeth: int = 200,
                  source: PwmSource | None = None) -> CableProblem:
    """Build a fully assembled cable problem.

    ``shield_reluctivity`` may be a spline/constant model, a number
    (constant nu), a path to a "B nu" table, or None for the packaged
    default table.  A custom ``source`` object overrides the PWM fields.
    """
    mesh = build_mesh(r_wire, r_ins, r_out, n_nodes)
    if isinstance(shield_reluctivity, (int, float)):
        shield_reluctivity = ConstantReluctivity(float(shield_reluctivity))
    elif isinstance(shield_reluctivity, str):
        shield_reluctivity = load_reluctivity_table(shield_reluctivity)
    elif shield_reluctivity is not None and not isinstance(
            shield_reluctivity, (ReluctivitySpline, ConstantReluctivity)):
        shield_reluctivity = load_reluctivity_table(shield_reluctivity)
    materials = MaterialMap(sigma_shield, shield_reluctivity)
    if source is None:
        source = PwmSource(amplitude, period, teeth)
    ops = assemble(mesh, materials)
    return CableProblem(mesh, materials, source, ops)
