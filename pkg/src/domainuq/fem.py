"""P1 finite elements on triangle meshes: assembly, Dirichlet solves, norms.

All coefficient-dependent integrals use the same 3-point edge-midpoint rule
(exact for quadratic integrands).  Using one rule everywhere keeps the
assembly exactly linear in the coefficient, which the perturbation solves
rely on.  Stiffness and mass matrices are stored in CSR format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .errors import MeshMismatch, NonPositiveCoefficient, SolverDiverged
from .mesh import Mesh
from .textio import fmt

#: P1 basis values at the edge midpoints (row: midpoint opposite vertex q).
_PHI_AT_MIDPOINTS = np.array([
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
    [0.5, 0.5, 0.0],
])

#: Relative residual target of the conjugate gradient solver.
CG_RTOL = 1e-10

#: Iteration cap factor: at most this many iterations per unknown.
CG_CAP_FACTOR = 10


@dataclass
class NodalField:
    """One scalar value per mesh node, tagged with its mesh level."""

    values: np.ndarray
    level: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def n(self) -> int:
        return len(self.values)

    def __add__(self, other: "NodalField") -> "NodalField":
        return NodalField(self.values + other.values, self.level)

    def __sub__(self, other: "NodalField") -> "NodalField":
        return NodalField(self.values - other.values, self.level)

    def __mul__(self, scalar: float) -> "NodalField":
        return NodalField(self.values * scalar, self.level)

    __rmul__ = __mul__


def element_geometry(mesh: Mesh):
    """Per-element areas, P1 basis gradients, and edge-midpoint quadrature points.

    Returns (areas (m,), grads (m, 3, 2), qpoints (m, 3, 2)); cached on the mesh.
    """
    cached = mesh._cache.get("geometry")
    if cached is not None:
        return cached
    p = mesh.nodes
    t = mesh.triangles
    v0, v1, v2 = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
    det = ((v1[:, 0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1])
           - (v1[:, 1] - v0[:, 1]) * (v2[:, 0] - v0[:, 0]))
    areas = 0.5 * det
    grads = np.empty((len(t), 3, 2))
    grads[:, 0, 0] = v1[:, 1] - v2[:, 1]
    grads[:, 0, 1] = v2[:, 0] - v1[:, 0]
    grads[:, 1, 0] = v2[:, 1] - v0[:, 1]
    grads[:, 1, 1] = v0[:, 0] - v2[:, 0]
    grads[:, 2, 0] = v0[:, 1] - v1[:, 1]
    grads[:, 2, 1] = v1[:, 0] - v0[:, 0]
    grads /= det[:, None, None]
    qpoints = np.stack([
        0.5 * (v1 + v2),
        0.5 * (v0 + v2),
        0.5 * (v0 + v1),
    ], axis=1)
    result = (areas, grads, qpoints)
    mesh._cache["geometry"] = result
    return result


def _eval_at_points(fn, pts: np.ndarray) -> np.ndarray:
    """Evaluate a scalar function at (k, 2) points, vectorized if possible."""
    try:
        vals = np.asarray(fn(pts), dtype=float)
    except Exception:
        vals = None
    if vals is not None:
        if vals.ndim == 0:
            return np.full(len(pts), float(vals))
        if vals.shape == (len(pts),):
            return vals
    return np.array([float(fn(p)) for p in pts])


def _eval_at_quadrature(mesh: Mesh, fn) -> np.ndarray:
    _, _, qpts = element_geometry(mesh)
    m = len(mesh.triangles)
    return _eval_at_points(fn, qpts.reshape(-1, 2)).reshape(m, 3)


def _scatter(mesh: Mesh, local: np.ndarray) -> csr_matrix:
    """Sum (m, 3, 3) element matrices into a global CSR matrix.

    The COO to CSR conversion sums duplicates in a fixed order, so two
    matrices assembled on the same mesh share identical sparsity arrays.
    """
    t = mesh.triangles
    n = mesh.n_nodes
    rows = np.repeat(t, 3, axis=1).reshape(-1)
    cols = np.tile(t, (1, 3)).reshape(-1)
    return coo_matrix((local.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()


def stiffness_from_qvalues(mesh: Mesh, coeff_q: np.ndarray,
                           require_positive: bool = True) -> csr_matrix:
    """Stiffness matrix from coefficient values at the (m, 3) quadrature points."""
    if require_positive and np.any(coeff_q <= 0.0):
        raise NonPositiveCoefficient(
            f"coefficient minimum {coeff_q.min():.6e} at a quadrature point")
    areas, grads, _ = element_geometry(mesh)
    cbar = coeff_q.mean(axis=1)
    local = (cbar * areas)[:, None, None] * np.einsum(
        "mid,mjd->mij", grads, grads)
    return _scatter(mesh, local)


def stiffness_from_element_tensors(mesh: Mesh, tensors: np.ndarray) -> csr_matrix:
    """Stiffness matrix for a per-element constant 2x2 matrix coefficient."""
    areas, grads, _ = element_geometry(mesh)
    local = areas[:, None, None] * np.einsum(
        "mid,mde,mje->mij", grads, tensors, grads)
    return _scatter(mesh, local)


def assemble_stiffness(mesh: Mesh, coeff) -> csr_matrix:
    """K_ij = sum_T int_T coeff grad(phi_i) . grad(phi_j) dx.

    Raises NonPositiveCoefficient if the coefficient is not strictly
    positive at every quadrature point.
    """
    return stiffness_from_qvalues(mesh, _eval_at_quadrature(mesh, coeff))


def assemble_mass(mesh: Mesh) -> csr_matrix:
    """Exact P1 mass matrix, M_ij = int phi_i phi_j dX."""
    areas, _, _ = element_geometry(mesh)
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = areas[:, None, None] * base
    return _scatter(mesh, local)


def load_from_qvalues(mesh: Mesh, fq: np.ndarray) -> np.ndarray:
    """Load vector from right-hand side values at the (m, 3) quadrature points."""
    areas, _, _ = element_geometry(mesh)
    local = (areas / 3.0)[:, None] * (fq @ _PHI_AT_MIDPOINTS)
    b = np.zeros(mesh.n_nodes)
    np.add.at(b, mesh.triangles.reshape(-1), local.reshape(-1))
    return b


def assemble_load(mesh: Mesh, f) -> np.ndarray:
    """b_i = int f phi_i dx via the element quadrature rule."""
    return load_from_qvalues(mesh, _eval_at_quadrature(mesh, f))


def perturbation_load_from_qvalues(mesh: Mesh, aq: np.ndarray,
                                   u0_values: np.ndarray) -> np.ndarray:
    """Load -int a_r grad(u0) . grad(phi_i) dx from quadrature values of a_r."""
    areas, grads, _ = element_geometry(mesh)
    t = mesh.triangles
    grad_u = np.einsum("mi,mid->md", u0_values[t], grads)
    gdot = np.einsum("md,mjd->mj", grad_u, grads)
    abar = aq.mean(axis=1)
    local = -(abar * areas)[:, None] * gdot
    b = np.zeros(mesh.n_nodes)
    np.add.at(b, t.reshape(-1), local.reshape(-1))
    return b


def assemble_perturbation_load(mesh: Mesh, a_r, u0: NodalField) -> np.ndarray:
    """Right-hand side of the derivative problem, linear in a_r and in u0."""
    return perturbation_load_from_qvalues(
        mesh, _eval_at_quadrature(mesh, a_r), u0.values)


def solve_dirichlet(K: csr_matrix, b: np.ndarray, boundary: np.ndarray,
                    level: int = -1, rtol: float = CG_RTOL,
                    diag_out: dict | None = None) -> NodalField:
    """Solve K u = b with u = 0 on the boundary nodes.

    Boundary unknowns are eliminated symmetrically (the system is
    restricted to the interior), and the reduced SPD system is solved by
    diagonally preconditioned conjugate gradients with relative residual
    target `rtol` and an iteration cap of 10 per unknown.

    `diag_out`, if given, receives the iteration count and final residual.

    Raises
    ------
    SolverDiverged
        If the iteration cap is reached before the residual target.
    """
    n = K.shape[0]
    boundary = np.asarray(boundary, dtype=np.int64)
    interior = np.setdiff1d(np.arange(n), boundary)
    Kii = K[interior][:, interior].tocsr()
    bi = b[interior]
    m = len(interior)

    u = np.zeros(n)
    norm_b = np.linalg.norm(bi)
    if norm_b == 0.0:
        if diag_out is not None:
            diag_out.update(iterations=0, residual=0.0)
        return NodalField(u, level)

    diag = Kii.diagonal()
    tol = rtol * norm_b
    cap = CG_CAP_FACTOR * m

    x = np.zeros(m)
    r = bi.copy()
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    iterations = 0
    res = norm_b
    while res > tol:
        if iterations >= cap:
            raise SolverDiverged(
                f"no convergence in {cap} iterations, residual {res:.3e} > {tol:.3e}")
        q = Kii @ p
        alpha = rz / float(p @ q)
        x += alpha * p
        r -= alpha * q
        z = r / diag
        rz_next = float(r @ z)
        p = z + (rz_next / rz) * p
        rz = rz_next
        iterations += 1
        res = np.linalg.norm(r)

    u[interior] = x
    if diag_out is not None:
        diag_out.update(iterations=iterations, residual=float(res))
    return NodalField(u, level)


def _h1_gram(mesh: Mesh) -> csr_matrix:
    gram = mesh._cache.get("h1_gram")
    if gram is None:
        gram = assemble_stiffness(mesh, lambda p: 1.0) + assemble_mass(mesh)
        mesh._cache["h1_gram"] = gram
    return gram


def _mass(mesh: Mesh) -> csr_matrix:
    m = mesh._cache.get("mass")
    if m is None:
        m = assemble_mass(mesh)
        mesh._cache["mass"] = m
    return m


def _check_field(mesh: Mesh, v: NodalField) -> None:
    if v.n != mesh.n_nodes:
        raise MeshMismatch(
            f"field has {v.n} values, mesh has {mesh.n_nodes} nodes")


def h1_norm(mesh: Mesh, v: NodalField) -> float:
    """Full H1 norm, sqrt(v^T (K_1 + M) v)."""
    _check_field(mesh, v)
    x = v.values
    return float(np.sqrt(max(x @ (_h1_gram(mesh) @ x), 0.0)))


def l2_norm(mesh: Mesh, v: NodalField) -> float:
    _check_field(mesh, v)
    x = v.values
    return float(np.sqrt(max(x @ (_mass(mesh) @ x), 0.0)))


def w11_norm(mesh: Mesh, v: NodalField) -> float:
    """W^{1,1} norm, sum_T int_T (|v| + |grad v|_2) dx by element quadrature."""
    _check_field(mesh, v)
    areas, grads, _ = element_geometry(mesh)
    t = mesh.triangles
    vt = v.values[t]
    vmid = 0.5 * (vt.sum(axis=1)[:, None] - vt)  # values at edge midpoints
    grad_v = np.einsum("mi,mid->md", vt, grads)
    per_element = areas * (np.abs(vmid).mean(axis=1)
                           + np.linalg.norm(grad_v, axis=1))
    return float(per_element.sum())


def field_to_text(v: NodalField) -> str:
    lines = [f"field {v.n}"]
    lines.extend(fmt(x) for x in v.values)
    return "\n".join(lines) + "\n"


def field_from_text(text: str, level: int = -1) -> NodalField:
    lines = text.splitlines()
    header = lines[0].split()
    if header[0] != "field":
        raise ValueError(f"bad field header: {lines[0]!r}")
    n = int(header[1])
    return NodalField(np.array([float(lines[1 + i]) for i in range(n)]), level)


def save_field(v: NodalField, path) -> None:
    with open(path, "w") as f:
        f.write(field_to_text(v))


def load_field(path, level: int = -1) -> NodalField:
    with open(path) as f:
        return field_from_text(f.read(), level)
