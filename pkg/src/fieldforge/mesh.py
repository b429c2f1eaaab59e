"""Triangular meshes for 2D Cartesian and axisymmetric domains.

Meshes own node coordinates, triangle connectivity, the derived edge tables
and the integer region tags that bind geometry to physics. They are immutable
after construction; all arrays are frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


def _signed_areas(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p0 = nodes[elements[:, 0]]
    p1 = nodes[elements[:, 1]]
    p2 = nodes[elements[:, 2]]
    return 0.5 * (
        (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    )


def build_edges(elements: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Derive the unique undirected edge table of a triangle list.

    Returns
    -------
    edges : (E, 2) int array
        Sorted node pairs, ordered lexicographically (canonical ordering,
        independent of element input order).
    element_edges : (M, 3) int array
        Edge index opposite local node k is stored at position k.
    boundary : (E,) bool array
        True iff the edge belongs to exactly one element.
    """
    elements = np.asarray(elements, dtype=np.int64)
    raw = np.concatenate(
        [elements[:, [1, 2]], elements[:, [2, 0]], elements[:, [0, 1]]], axis=0
    )
    raw.sort(axis=1)
    edges, inverse, counts = np.unique(
        raw, axis=0, return_inverse=True, return_counts=True
    )
    element_edges = inverse.reshape(3, -1).T.copy()
    return edges, element_edges, counts == 1


class TriMesh:
    """Conforming triangle mesh in Cartesian (x, y) coordinates.

    Parameters
    ----------
    nodes : (N, 2) float array
        Node coordinates in metres.
    elements : (M, 3) int array
        Triangle connectivity. Negatively oriented triangles are repaired by
        a node swap; zero-area triangles are rejected.
    elem_region : (M,) int array, optional
        Region id per element (-1 where untagged).
    tagged_edges : iterable of ((n1, n2), tag), optional
        Region tags for edges given as node pairs; each pair must be an edge
        of some triangle.
    node_region : mapping node index -> tag, optional
        Region tags for point entities.
    """

    axisymmetric = False

    def __init__(self, nodes, elements, elem_region=None, tagged_edges=None,
                 node_region=None):
        nodes = np.ascontiguousarray(nodes, dtype=np.float64)
        elements = np.ascontiguousarray(elements, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError(f"nodes must be (N, 2), got {nodes.shape}")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise MeshError(f"elements must be (M, 3), got {elements.shape}")
        if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
            raise MeshError("element connectivity references unknown node")

        areas = _signed_areas(nodes, elements)
        degenerate = np.flatnonzero(areas == 0.0)
        if degenerate.size:
            raise MeshError(f"zero-area element {degenerate[0]}")
        flipped = areas < 0.0
        if flipped.any():
            elements = elements.copy()
            elements[flipped] = elements[flipped][:, [0, 2, 1]]
            areas = np.abs(areas)

        self.nodes = nodes
        self.elements = elements
        self.areas = areas
        self.edges, self.element_edges, self.boundary_edge = build_edges(elements)

        if elem_region is None:
            elem_region = np.full(len(elements), -1, dtype=np.int64)
        else:
            elem_region = np.ascontiguousarray(elem_region, dtype=np.int64)
            if elem_region.shape != (len(elements),):
                raise MeshError("elem_region length must match element count")
        self.elem_region = elem_region

        self.edge_region = np.full(len(self.edges), -1, dtype=np.int64)
        if tagged_edges:
            index = {(int(a), int(b)): i for i, (a, b) in enumerate(self.edges)}
            for (a, b), tag in tagged_edges:
                key = (min(int(a), int(b)), max(int(a), int(b)))
                if key not in index:
                    raise MeshError(
                        f"tagged edge {key} is not an edge of any triangle")
                self.edge_region[index[key]] = int(tag)

        self.node_region = np.full(len(nodes), -1, dtype=np.int64)
        if node_region:
            for n, tag in dict(node_region).items():
                self.node_region[int(n)] = int(tag)

        self._validate_coords()
        for arr in (self.nodes, self.elements, self.areas, self.edges,
                    self.element_edges, self.boundary_edge, self.elem_region,
                    self.edge_region, self.node_region):
            arr.setflags(write=False)

    def _validate_coords(self):
        pass

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def edge_midpoints(self) -> np.ndarray:
        return self.nodes[self.edges].mean(axis=1)

    def edge_lengths(self) -> np.ndarray:
        d = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def edges_with_region(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.edge_region == tag)

    def elements_with_region(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.elem_region == tag)

    def nodes_with_edge_region(self, tag: int) -> np.ndarray:
        """Sorted node indices touched by edges carrying the given tag."""
        return np.unique(self.edges[self.edge_region == tag])

    def region_tags(self):
        """Distinct (tag, dim) pairs present on the mesh, untagged excluded."""
        seen = []
        for tag in np.unique(self.elem_region):
            if tag >= 0:
                seen.append((int(tag), 2))
        for tag in np.unique(self.edge_region):
            if tag >= 0:
                seen.append((int(tag), 1))
        for tag in np.unique(self.node_region):
            if tag >= 0:
                seen.append((int(tag), 0))
        return seen

    def _replace(self, nodes, elements, elem_region, tagged_edges, node_region):
        return type(self)(nodes, elements, elem_region, tagged_edges, node_region)


class AxiMesh(TriMesh):
    """Triangle mesh in axisymmetric (rho, z) coordinates; rho >= 0."""

    axisymmetric = True

    def _validate_coords(self):
        if self.num_nodes and self.nodes[:, 0].min() < 0.0:
            raise MeshError("axisymmetric mesh has node with rho < 0")

    def axis_nodes(self) -> np.ndarray:
        """Indices of nodes lying on the symmetry axis rho = 0."""
        scale = self.nodes[:, 0].max(initial=0.0)
        return np.flatnonzero(self.nodes[:, 0] <= 1e-12 * max(scale, 1.0))


def element_area(mesh: TriMesh, elem: int) -> float:
    """Area of one triangle (positive by the orientation invariant)."""
    if not 0 <= elem < mesh.num_elements:
        raise IndexError(f"element index {elem} out of range")
    return float(mesh.areas[elem])


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four congruent children at edge midpoints.

    Region tags are inherited: children keep their parent's element tag,
    the two halves of a tagged edge keep the edge tag, and original nodes
    keep their point tags. New node count is old nodes + old edges.
    """
    n = mesh.num_nodes
    mid_nodes = mesh.edge_midpoints()
    nodes = np.vstack([mesh.nodes, mid_nodes])

    # Midpoint node index of edge e is n + e.
    e0 = n + mesh.element_edges[:, 0]  # opposite local node 0: edge (1,2)
    e1 = n + mesh.element_edges[:, 1]  # edge (2,0)
    e2 = n + mesh.element_edges[:, 2]  # edge (0,1)
    v0, v1, v2 = (mesh.elements[:, k] for k in range(3))
    children = np.stack([
        np.column_stack([v0, e2, e1]),
        np.column_stack([v1, e0, e2]),
        np.column_stack([v2, e1, e0]),
        np.column_stack([e0, e1, e2]),
    ], axis=1).reshape(-1, 3)
    elem_region = np.repeat(mesh.elem_region, 4)

    tagged = []
    for e in np.flatnonzero(mesh.edge_region >= 0):
        a, b = mesh.edges[e]
        tag = int(mesh.edge_region[e])
        tagged.append(((int(a), n + e), tag))
        tagged.append(((int(b), n + e), tag))
    node_region = {
        int(i): int(t) for i, t in enumerate(mesh.node_region) if t >= 0
    }
    return mesh._replace(nodes, children, elem_region, tagged, node_region)


@dataclass(frozen=True)
class RegionMap:
    """Ordered painting of region ids onto a structured mesh.

    ``blocks`` assigns element tags by centroid-in-box, ``boundaries``
    assigns edge tags by midpoint-in-box; later entries override earlier
    ones. Boxes are (x0, y0, x1, y1) and may be degenerate lines.
    """

    blocks: Sequence[Tuple[int, Tuple[float, float, float, float]]] = ()
    boundaries: Sequence[Tuple[int, Tuple[float, float, float, float]]] = ()
    default: int = -1


def _paint(points: np.ndarray, rules, default: int, tol: float) -> np.ndarray:
    tags = np.full(len(points), default, dtype=np.int64)
    for tag, (x0, y0, x1, y1) in rules:
        inside = (
            (points[:, 0] >= min(x0, x1) - tol)
            & (points[:, 0] <= max(x0, x1) + tol)
            & (points[:, 1] >= min(y0, y1) - tol)
            & (points[:, 1] <= max(y0, y1) + tol)
        )
        tags[inside] = tag
    return tags


def _structured_grid(x0, x1, y0, y1, nx, ny, region_map, mesh_cls):
    if nx < 1 or ny < 1:
        raise MeshError("structured mesh needs nx >= 1 and ny >= 1")
    if not (x1 > x0 and y1 > y0):
        raise MeshError("structured mesh needs positive extents")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)            # row-major: node = iy*(nx+1) + ix
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = (iy * (nx + 1) + ix).ravel()
    n10 = n00 + 1
    n01 = n00 + (nx + 1)
    n11 = n01 + 1
    lower = np.column_stack([n00, n10, n11])
    upper = np.column_stack([n00, n11, n01])
    elements = np.empty((2 * nx * ny, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    region_map = region_map or RegionMap()
    tol = 1e-9 * max(x1 - x0, y1 - y0, 1.0)
    centroids = nodes[elements].mean(axis=1)
    elem_region = _paint(centroids, region_map.blocks, region_map.default, tol)

    tagged_edges = None
    if region_map.boundaries:
        edges, _, _ = build_edges(elements)
        mids = nodes[edges].mean(axis=1)
        tags = _paint(mids, region_map.boundaries, -1, tol)
        tagged_edges = [
            ((int(edges[e, 0]), int(edges[e, 1])), int(tags[e]))
            for e in np.flatnonzero(tags >= 0)
        ]
    return mesh_cls(nodes, elements, elem_region, tagged_edges)


def structured_rect_mesh(width: float, height: float, nx: int, ny: int,
                         region_map: Optional[RegionMap] = None) -> TriMesh:
    """Uniform right-triangle mesh of [0, width] x [0, height]."""
    return _structured_grid(0.0, width, 0.0, height, nx, ny, region_map, TriMesh)


def structured_annulus_mesh(r_in: float, r_out: float, z0: float, z1: float,
                            nr: int, nz: int,
                            region_map: Optional[RegionMap] = None) -> AxiMesh:
    """Uniform axisymmetric mesh of [r_in, r_out] x [z0, z1] in (rho, z)."""
    if r_in < 0:
        raise MeshError("annulus needs r_in >= 0")
    if not r_out > r_in:
        raise MeshError("annulus needs r_in < r_out")
    return _structured_grid(r_in, r_out, z0, z1, nr, nz, region_map, AxiMesh)
