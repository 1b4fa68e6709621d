"""Triangulated meshes of the unit disc: construction, refinement, deformation.

The reference domain is the unit disc.  It is decomposed into four affine
patches (origin plus the four cardinal boundary points) and refined by
regular midpoint subdivision; midpoints of boundary edges are projected
radially back onto the unit circle, so every level is a conforming
triangulation of an inscribed polygon whose rim nodes lie exactly on the
circle.

Meshes are immutable after construction by convention; all operations
return new `Mesh` instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDeformation
from .textio import fmt

#: Area of the reference simplex, used to scale the degeneracy threshold.
REFERENCE_ELEMENT_AREA = 0.5

#: Signed areas at or below this value count as an inverted element.
DEGENERACY_EPS = 1e-12 * REFERENCE_ELEMENT_AREA

_BASE_NODES = np.array([
    [0.0, 0.0],
    [1.0, 0.0],
    [0.0, 1.0],
    [-1.0, 0.0],
    [0.0, -1.0],
])
_BASE_TRIANGLES = np.array([
    [0, 1, 2],
    [0, 2, 3],
    [0, 3, 4],
    [0, 4, 1],
])
_BASE_BOUNDARY = np.array([1, 2, 3, 4])


@dataclass
class Mesh:
    """Conforming triangle mesh with counterclockwise elements.

    Attributes
    ----------
    level : refinement depth (the base decomposition is level 0)
    nodes : (n, 2) float array of node coordinates
    triangles : (m, 3) int array of node indices, counterclockwise
    boundary : sorted int array of node indices on the outer rim
    patch_id : (m,) int array mapping each triangle to its base patch
    """

    level: int
    nodes: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    patch_id: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


def signed_areas(mesh: Mesh) -> np.ndarray:
    """Signed area of every triangle (positive for counterclockwise)."""
    p = mesh.nodes
    t = mesh.triangles
    e1 = p[t[:, 1]] - p[t[:, 0]]
    e2 = p[t[:, 2]] - p[t[:, 0]]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def build_disc_mesh(level: int) -> Mesh:
    """Mesh of the unit disc with 4 * 4**level triangles.

    Rim nodes are snapped onto the unit circle at every refinement step
    (piecewise affine realization of the curved patches).
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    mesh = Mesh(
        level=0,
        nodes=_BASE_NODES.copy(),
        triangles=_BASE_TRIANGLES.copy(),
        boundary=_BASE_BOUNDARY.copy(),
        patch_id=np.arange(4),
    )
    for _ in range(level):
        mesh = refine(mesh)
    return mesh


def refine(mesh: Mesh) -> Mesh:
    """Split every triangle into four children via edge midpoints.

    Midpoints of boundary edges are projected radially onto the unit
    circle.  Parent nodes keep their indices; new nodes are appended in
    the order of their (min index, max index) edge keys.
    """
    nodes = mesh.nodes
    tris = mesh.triangles
    n = len(nodes)

    ea = tris
    eb = tris[:, [1, 2, 0]]
    pairs = np.stack([np.minimum(ea, eb), np.maximum(ea, eb)], axis=-1)
    flat = pairs.reshape(-1, 2)
    edges, inverse, counts = np.unique(
        flat, axis=0, return_inverse=True, return_counts=True)

    midpoints = 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])
    on_rim = counts == 1
    if np.any(on_rim):
        rim = midpoints[on_rim]
        midpoints[on_rim] = rim / np.linalg.norm(rim, axis=1)[:, None]

    new_nodes = np.vstack([nodes, midpoints])
    new_boundary = np.union1d(mesh.boundary, n + np.nonzero(on_rim)[0])

    mid = n + inverse.reshape(-1, 3)  # columns: m01, m12, m20 per parent
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    m01, m12, m20 = mid[:, 0], mid[:, 1], mid[:, 2]
    children = np.stack([
        np.column_stack([a, m01, m20]),
        np.column_stack([b, m12, m01]),
        np.column_stack([c, m20, m12]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)

    return Mesh(
        level=mesh.level + 1,
        nodes=new_nodes,
        triangles=children,
        boundary=new_boundary,
        patch_id=np.repeat(mesh.patch_id, 4),
    )


def displace(mesh: Mesh, displacement: np.ndarray) -> Mesh:
    """Move every node by its displacement vector, keeping the topology.

    Raises
    ------
    DegenerateDeformation
        If any triangle of the moved mesh has signed area at or below
        the degeneracy threshold, i.e. the deformation is (numerically)
        not orientation preserving.
    """
    disp = np.asarray(displacement, dtype=float)
    if disp.shape != mesh.nodes.shape:
        raise ValueError(
            f"displacement shape {disp.shape} does not match nodes {mesh.nodes.shape}")
    moved = Mesh(
        level=mesh.level,
        nodes=mesh.nodes + disp,
        triangles=mesh.triangles,
        boundary=mesh.boundary,
        patch_id=mesh.patch_id,
    )
    min_area = signed_areas(moved).min()
    if min_area <= DEGENERACY_EPS:
        raise DegenerateDeformation(
            f"minimum signed area {min_area:.3e} at or below threshold {DEGENERACY_EPS:.3e}")
    return moved


def min_angle_deg(mesh: Mesh) -> float:
    """Smallest interior angle over all triangles, in degrees."""
    p = mesh.nodes
    t = mesh.triangles
    va, vb, vc = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
    angles = []
    for corner, left, right in ((va, vb, vc), (vb, vc, va), (vc, va, vb)):
        u = left - corner
        v = right - corner
        cosang = np.sum(u * v, axis=1) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return float(np.min(angles))


def mesh_to_text(mesh: Mesh) -> str:
    """ASCII dump: header, node lines, triangle lines (with patch id), boundary line."""
    lines = [f"nodes {mesh.n_nodes} triangles {mesh.n_triangles} level {mesh.level}"]
    for x, y in mesh.nodes:
        lines.append(f"{fmt(x)} {fmt(y)}")
    for (i, j, k), pid in zip(mesh.triangles, mesh.patch_id):
        lines.append(f"{i} {j} {k} {pid}")
    lines.append(" ".join(str(i) for i in mesh.boundary))
    return "\n".join(lines) + "\n"


def mesh_from_text(text: str) -> Mesh:
    lines = text.splitlines()
    header = lines[0].split()
    if header[0] != "nodes" or header[2] != "triangles" or header[4] != "level":
        raise ValueError(f"bad mesh header: {lines[0]!r}")
    n, m, level = int(header[1]), int(header[3]), int(header[5])
    nodes = np.array([[float(v) for v in lines[1 + i].split()] for i in range(n)])
    tri_rows = [[int(v) for v in lines[1 + n + i].split()] for i in range(m)]
    triangles = np.array([r[:3] for r in tri_rows], dtype=np.int64)
    patch_id = np.array([r[3] for r in tri_rows], dtype=np.int64)
    boundary_line = lines[1 + n + m].split()
    boundary = np.array([int(v) for v in boundary_line], dtype=np.int64)
    return Mesh(level=level, nodes=nodes, triangles=triangles,
                boundary=boundary, patch_id=patch_id)


def save_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as f:
        f.write(mesh_to_text(mesh))


def load_mesh(path) -> Mesh:
    with open(path) as f:
        return mesh_from_text(f.read())
