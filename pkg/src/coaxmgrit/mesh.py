"""Radial mesh for the coaxial-cable cross section.

The cable is rotationally symmetric, so the spatial domain reduces to the
radius r in [0, r_out] with three concentric regions: the conducting wire,
an insulating gap, and the conducting shield tube.  Every region boundary
must coincide with a mesh node so that material properties are constant
per element.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Region", "Mesh1D", "build_mesh"]


class Region(enum.IntEnum):
    WIRE = 0
    INSULATOR = 1
    SHIELD = 2


@dataclass(frozen=True)
class Mesh1D:
    """Nodes and per-element region tags of the radial mesh.

    Attributes
    ----------
    nodes : ndarray
        Strictly increasing node radii [m], nodes[0] = 0, nodes[-1] = r_out.
    element_regions : ndarray of int
        Region code per element (len(nodes) - 1 entries).
    r_wire, r_ins, r_out : float
        Region boundary radii; each must be a mesh node.
    """

    nodes: np.ndarray
    element_regions: np.ndarray
    r_wire: float
    r_ins: float
    r_out: float
    _boundary_index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        regions = np.asarray(self.element_regions, dtype=np.int8)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "element_regions", regions)
        if nodes.ndim != 1 or nodes.size < 4:
            raise ValueError("mesh needs at least 4 nodes (one element per region)")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("node radii must be strictly increasing")
        if nodes[0] != 0.0:
            raise ValueError("innermost node must sit on the axis r=0")
        if not (0.0 < self.r_wire < self.r_ins < self.r_out):
            raise ValueError("region radii must satisfy 0 < r_wire < r_ins < r_out")
        if nodes[-1] != self.r_out:
            raise ValueError("outermost node must equal r_out")
        if regions.shape != (nodes.size - 1,):
            raise ValueError("need exactly one region tag per element")
        idx = {}
        for name, r in (("wire", self.r_wire), ("ins", self.r_ins), ("out", self.r_out)):
            hits = np.nonzero(nodes == r)[0]
            if hits.size != 1:
                raise ValueError(f"region boundary r_{name}={r} is not a mesh node")
            idx[name] = int(hits[0])
        object.__setattr__(self, "_boundary_index", idx)
        expected = np.empty(nodes.size - 1, dtype=np.int8)
        expected[: idx["wire"]] = Region.WIRE
        expected[idx["wire"]: idx["ins"]] = Region.INSULATOR
        expected[idx["ins"]:] = Region.SHIELD
        if not np.array_equal(regions, expected):
            raise ValueError("element region tags are inconsistent with the boundary radii")

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def n_free(self) -> int:
        """Number of unconstrained potential DoFs (all nodes but the outer one)."""
        return self.nodes.size - 1

    @property
    def wire_boundary_index(self) -> int:
        return self._boundary_index["wire"]

    @property
    def shield_inner_index(self) -> int:
        return self._boundary_index["ins"]

    def element_lengths(self) -> np.ndarray:
        return np.diff(self.nodes)

    def nearest_node(self, r: float) -> int:
        return int(np.argmin(np.abs(self.nodes - r)))


def build_mesh(r_wire: float = 1.0e-3,
               r_ins: float = 2.0e-3,
               r_out: float = 3.0e-3,
               n_nodes: int = 65) -> Mesh1D:
    """Build a radial mesh with region-aligned nodes.

    Elements are distributed over the three regions proportionally to the
    region widths (largest-remainder rounding, at least one element each)
    and spaced uniformly inside each region.
    """
    if n_nodes < 4:
        raise ValueError("need at least 4 nodes")
    n_el = n_nodes - 1
    widths = np.array([r_wire, r_ins - r_wire, r_out - r_ins])
    raw = widths / widths.sum() * n_el
    counts = np.maximum(np.floor(raw).astype(int), 1)
    while counts.sum() < n_el:
        counts[np.argmax(raw - counts)] += 1
    while counts.sum() > n_el:
        over = np.where(counts > 1)[0]
        counts[over[np.argmin((raw - counts)[over])]] -= 1

    bounds = [0.0, r_wire, r_ins, r_out]
    pieces = []
    regions = []
    for k, region in enumerate(Region):
        seg = np.linspace(bounds[k], bounds[k + 1], counts[k] + 1)
        pieces.append(seg if k == 0 else seg[1:])
        regions.extend([region] * counts[k])
    nodes = np.concatenate(pieces)
    # snap the boundary nodes exactly (linspace endpoints are exact already)
    return Mesh1D(nodes, np.array(regions, dtype=np.int8), r_wire, r_ins, r_out)
