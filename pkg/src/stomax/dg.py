"""Discontinuous Galerkin space on a structured Kuhn tetrahedralization.

Each hexahedral cell of an nx x ny x nz partition is split into six
congruent tetrahedra around the main diagonal.  Fields live in (P1)^6 per
tet (nodal barycentric basis, 24 dofs per cell).  The discrete Maxwell
operator couples cells through interior-face average/jump terms plus
tangential jump penalties, and imposes the perfect-conductor condition
weakly through the exterior-face terms; it is dissipative,
<M_h u, u> = -(1/2) sum_int ||n x [[E]]||^2 + ||n x [[H]]||^2
             - sum_ext ||n x E||^2 <= 0.

Volume and face integrals of basis products are exact (closed forms for
barycentric monomials); quadrature enters only where a sampled noise field
multiplies the state, through a 14-point degree-4 tetrahedron rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, ParameterError, SolverError
from .model import Box, NoiseSpec

__all__ = [
    "DGMesh",
    "DGFieldState",
    "build_mesh",
    "l2_project",
    "assemble_mh",
    "multiply_project",
    "evaluate_at_points",
    "quad_rule",
    "DgOperator",
    "export_operator_coo",
]

# Degree-4 symmetric positive rule on the reference tetrahedron
# (barycentric points, weights summing to one).
_W1 = 0.1126879257180162
_B1 = 0.3108859192633005
_W2 = 0.0734930431163619
_B2 = 0.0927352503108912
_W3 = 0.0425460207770812
_C3 = 0.4544962958743506
_D3 = 0.0455037041256494


def quad_rule(subdiv: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """14-point degree-4 rule: returns (barycentric coords (n, 4), weights (n,)).

    With subdiv > 0 the rule is composed over 8**subdiv midpoint-subdivided
    children (all of equal volume), tightening accuracy for oscillatory
    integrands while keeping the same interface.
    """
    pts = []
    wts = []
    for b, w in ((_B1, _W1), (_B2, _W2)):
        a = 1.0 - 3.0 * b
        for i in range(4):
            lam = [b] * 4
            lam[i] = a
            pts.append(lam)
            wts.append(w)
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    for i, j in pairs:
        lam = [_D3] * 4
        lam[i] = _C3
        lam[j] = _C3
        pts.append(lam)
        wts.append(_W3)
    pts, wts = np.array(pts), np.array(wts)
    for _ in range(subdiv):
        eye = np.eye(4)
        children = []
        for corners in _SUBTETS:
            verts = np.array([(eye[a] + eye[b]) / 2.0 for a, b in corners])
            children.append(pts @ verts)
        pts = np.concatenate(children)
        wts = np.tile(wts / 8.0, 8)
    return pts, wts


# midpoint 1:8 subdivision in barycentric coordinates; (a, b) pairs denote
# vertex midpoints, (a, a) the vertex itself
_SUBTETS = [
    [(0, 0), (0, 1), (0, 2), (0, 3)],
    [(1, 1), (0, 1), (1, 2), (1, 3)],
    [(2, 2), (0, 2), (1, 2), (2, 3)],
    [(3, 3), (0, 3), (1, 3), (2, 3)],
    [(0, 1), (0, 2), (0, 3), (1, 3)],
    [(0, 1), (0, 2), (1, 2), (1, 3)],
    [(0, 2), (0, 3), (1, 3), (2, 3)],
    [(0, 2), (1, 2), (1, 3), (2, 3)],
]


@dataclass(frozen=True)
class DGMesh:
    """Tetrahedral mesh with face connectivity and per-cell geometry."""

    box: Box
    shape: tuple[int, int, int]
    vertices: np.ndarray          # (nv, 3)
    cells: np.ndarray             # (nc, 4) vertex ids, positively oriented
    volumes: np.ndarray           # (nc,)
    grads: np.ndarray             # (nc, 4, 3) gradients of the nodal basis
    bary0: np.ndarray             # (nc, 4) affine offsets: lambda = bary0 + grads @ x
    int_cells: np.ndarray         # (nf_i, 2) cell pair (K, K_F)
    int_locnodes: np.ndarray      # (nf_i, 2, 3) local node ids of the face in each cell
    int_normals: np.ndarray       # (nf_i, 3) unit normal pointing K -> K_F
    int_areas: np.ndarray         # (nf_i,)
    ext_cells: np.ndarray         # (nf_e,)
    ext_locnodes: np.ndarray      # (nf_e, 3)
    ext_normals: np.ndarray       # (nf_e, 3) outward
    ext_areas: np.ndarray         # (nf_e,)

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_dofs(self) -> int:
        return 24 * self.n_cells

    @property
    def h(self) -> float:
        """Maximum cell diameter."""
        vv = self.vertices[self.cells]  # (nc, 4, 3)
        d = 0.0
        for i in range(4):
            for j in range(i + 1, 4):
                d = max(d, float(np.max(np.linalg.norm(vv[:, i] - vv[:, j], axis=1))))
        return d


# The six Kuhn tetrahedra of the unit cube: vertex 0, vertex 7 (main
# diagonal) plus an axis path; axis orders are the permutations of (x,y,z).
_KUHN_PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


def build_mesh(box: Box, nx: int, ny: int, nz: int) -> DGMesh:
    """Conforming Kuhn split (6 tets per hex) of a structured box partition."""
    if min(nx, ny, nz) < 1:
        raise ParameterError("need at least one subdivision per axis")
    counts = (nx, ny, nz)
    lo, ln = box.lower, box.lengths
    dxyz = ln / np.array(counts)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    axes = [lo[a] + dxyz[a] * np.arange(counts[a] + 1) for a in range(3)]
    vx, vy, vz = np.meshgrid(*axes, indexing="ij")
    vertices = np.column_stack([vx.ravel(), vy.ravel(), vz.ravel()])

    cells = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                base = np.array([i, j, k])
                for perm in _KUHN_PERMS:
                    path = [base.copy()]
                    cur = base.copy()
                    for axis in perm:
                        cur = cur.copy()
                        cur[axis] += 1
                        path.append(cur)
                    cells.append([vid(*p) for p in path])
    cells = np.asarray(cells, dtype=int)

    # orient positively and compute affine geometry
    vv = vertices[cells]
    e1 = vv[:, 1] - vv[:, 0]
    e2 = vv[:, 2] - vv[:, 0]
    e3 = vv[:, 3] - vv[:, 0]
    vol6 = np.einsum("ci,ci->c", np.cross(e1, e2), e3)
    flip = vol6 < 0
    if np.any(flip):
        cells[flip, 2], cells[flip, 3] = cells[flip, 3].copy(), cells[flip, 2].copy()
        vv = vertices[cells]
        e1, e2, e3 = vv[:, 1] - vv[:, 0], vv[:, 2] - vv[:, 0], vv[:, 3] - vv[:, 0]
        vol6 = np.einsum("ci,ci->c", np.cross(e1, e2), e3)
    volumes = vol6 / 6.0
    if np.any(volumes <= 0):
        raise ParameterError("degenerate tetrahedron in mesh")

    # barycentric gradients: rows of the inverse of [1, x; ...] system
    nc = cells.shape[0]
    a_mat = np.concatenate([np.ones((nc, 4, 1)), vv], axis=2)   # (nc, 4, 4)
    inv = np.linalg.inv(a_mat)                                   # lambda_i = inv[:, 0, i] + inv[:, 1:, i] . x
    bary0 = inv[:, 0, :]
    grads = np.transpose(inv[:, 1:, :], (0, 2, 1))               # (nc, 4, 3)

    # face tables
    local_faces = [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]
    face_map: dict[tuple[int, int, int], list[tuple[int, int]]] = {}
    for c in range(nc):
        for lf, tri in enumerate(local_faces):
            key = tuple(sorted(cells[c, list(tri)]))
            face_map.setdefault(key, []).append((c, lf))

    int_cells, int_loc, int_norm, int_area = [], [], [], []
    ext_cells, ext_loc, ext_norm, ext_area = [], [], [], []
    for key, owners in face_map.items():
        verts3 = vertices[list(key)]
        nvec = np.cross(verts3[1] - verts3[0], verts3[2] - verts3[0])
        area = 0.5 * np.linalg.norm(nvec)
        nvec = nvec / np.linalg.norm(nvec)
        if len(owners) == 2:
            (c0, lf0), (c1, lf1) = owners
            ka, kb = (c0, c1) if c0 < c1 else (c1, c0)
            # fix the orientation K -> K_F once: point away from K's off-face vertex
            off = cells[ka, [v for v in range(4) if cells[ka, v] not in key][0]]
            if nvec @ (vertices[off] - verts3[0]) > 0:
                nvec = -nvec
            loc_a = [int(np.where(cells[ka] == g)[0][0]) for g in key]
            loc_b = [int(np.where(cells[kb] == g)[0][0]) for g in key]
            int_cells.append((ka, kb))
            int_loc.append((loc_a, loc_b))
            int_norm.append(nvec)
            int_area.append(area)
        elif len(owners) == 1:
            (c0, lf0) = owners[0]
            off = cells[c0, [v for v in range(4) if cells[c0, v] not in key][0]]
            if nvec @ (vertices[off] - verts3[0]) > 0:
                nvec = -nvec
            loc = [int(np.where(cells[c0] == g)[0][0]) for g in key]
            ext_cells.append(c0)
            ext_loc.append(loc)
            ext_norm.append(nvec)
            ext_area.append(area)
        else:
            raise ParameterError("face shared by more than two cells")

    return DGMesh(
        box=box,
        shape=counts,
        vertices=vertices,
        cells=cells,
        volumes=volumes,
        grads=grads,
        bary0=bary0,
        int_cells=np.asarray(int_cells, dtype=int).reshape(-1, 2),
        int_locnodes=np.asarray(int_loc, dtype=int).reshape(-1, 2, 3),
        int_normals=np.asarray(int_norm, dtype=float).reshape(-1, 3),
        int_areas=np.asarray(int_area, dtype=float),
        ext_cells=np.asarray(ext_cells, dtype=int),
        ext_locnodes=np.asarray(ext_loc, dtype=int).reshape(-1, 3),
        ext_normals=np.asarray(ext_norm, dtype=float).reshape(-1, 3),
        ext_areas=np.asarray(ext_area, dtype=float),
    )


@dataclass
class DGFieldState:
    """Coefficients in the nodal basis: shape (n_cells, 6, 4)."""

    coeffs: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 3 or self.coeffs.shape[1:] != (6, 4):
            raise ParameterError("coefficients must have shape (n_cells, 6, 4)")
        if not np.all(np.isfinite(self.coeffs)):
            raise ParameterError("state contains non-finite entries")

    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(-1)


def _dof(cell, comp, node):
    return (cell * 6 + comp) * 4 + node


def _cross_matrix(n: np.ndarray) -> np.ndarray:
    """[n]_x with (n x v) = [n]_x v; supports a leading face axis."""
    n = np.asarray(n)
    z = np.zeros(n.shape[:-1])
    return np.stack(
        [
            np.stack([z, -n[..., 2], n[..., 1]], axis=-1),
            np.stack([n[..., 2], z, -n[..., 0]], axis=-1),
            np.stack([-n[..., 1], n[..., 0], z], axis=-1),
        ],
        axis=-2,
    )


_TRI_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0  # int_F mu_p mu_q = area * this


def assemble_mh(mesh: DGMesh) -> sp.csr_matrix:
    """Bilinear-form matrix B with v^T B u = <M_h u_h, v_h>.

    Row/column dof layout: ((cell * 6 + component) * 4 + node), components
    ordered (E1, E2, E3, H1, H2, H3).
    """
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    def add(row, col, val):
        r, c, v = np.broadcast_arrays(row, col, val)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())

    nc = mesh.n_cells
    cell_idx = np.arange(nc)

    # volume terms: <curl H, psi>_K - <curl E, phi>_K; curl of P1 is constant,
    # int_K lambda_j = V/4.
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[1, 0, 2] = eps[2, 1, 0] = -1.0
    # (curl W)_a = eps[a,b,c] grads[K,i,b] W[c,i]
    curl_coef = np.einsum("abc,Kib->Kaci", eps, mesh.grads)  # (nc, 3, 3, 4)
    w_vol = mesh.volumes / 4.0
    a_comp = np.arange(3)
    j_node = np.arange(4)
    # test E rows (comp a, node j), trial H cols (comp 3+c, node i)
    row = _dof(cell_idx[:, None, None, None, None], a_comp[None, :, None, None, None],
               j_node[None, None, :, None, None])
    col = _dof(cell_idx[:, None, None, None, None], 3 + a_comp[None, None, None, :, None],
               j_node[None, None, None, None, :])
    val = curl_coef[:, :, None, :, :] * w_vol[:, None, None, None, None]
    add(row, col, val)
    # test H rows, trial E cols, negative sign
    row = _dof(cell_idx[:, None, None, None, None], 3 + a_comp[None, :, None, None, None],
               j_node[None, None, :, None, None])
    col = _dof(cell_idx[:, None, None, None, None], a_comp[None, None, None, :, None],
               j_node[None, None, None, None, :])
    add(row, col, -val)

    # interior faces
    if len(mesh.int_areas):
        n = mesh.int_normals
        nxm = _cross_matrix(n)                       # (nf, 3, 3)
        pmat = np.eye(3)[None] - n[:, :, None] * n[:, None, :]  # I - n n^T
        areas = mesh.int_areas
        kc = mesh.int_cells
        ln = mesh.int_locnodes
        side_sign = (-1.0, 1.0)  # jump = (+) K_F side - (-) K side

        for s in range(2):       # trial side
            sgn_s = side_sign[s]
            for t in range(2):   # test side
                mu = _TRI_MASS[None] * areas[:, None, None]  # (nf, 3(p), 3(q)) symmetric
                # A: 1/2 <n x [[H]], psi_K + psi_KF>: rows E-block, cols H-block
                _accumulate_face(add, kc[:, t], ln[:, t], kc[:, s], ln[:, s],
                                 0, 3, 0.5 * sgn_s * nxm, mu)
                # B: -1/2 <n x [[E]], phi_K + phi_KF>: rows H-block, cols E-block
                _accumulate_face(add, kc[:, t], ln[:, t], kc[:, s], ln[:, s],
                                 3, 0, -0.5 * sgn_s * nxm, mu)
                sgn_t = side_sign[t]
                # C: -1/2 <n x [[E]], n x [[psi]]>: rows E-block, cols E-block
                _accumulate_face(add, kc[:, t], ln[:, t], kc[:, s], ln[:, s],
                                 0, 0, -0.5 * sgn_s * sgn_t * pmat, mu)
                # D: -1/2 <n x [[H]], n x [[phi]]>: rows H-block, cols H-block
                _accumulate_face(add, kc[:, t], ln[:, t], kc[:, s], ln[:, s],
                                 3, 3, -0.5 * sgn_s * sgn_t * pmat, mu)

    # exterior faces: <n x E, phi> - <n x E, n x psi>
    if len(mesh.ext_areas):
        n = mesh.ext_normals
        nxm = _cross_matrix(n)
        pmat = np.eye(3)[None] - n[:, :, None] * n[:, None, :]
        mu = _TRI_MASS[None] * mesh.ext_areas[:, None, None]
        kc, ln = mesh.ext_cells, mesh.ext_locnodes
        _accumulate_face(add, kc, ln, kc, ln, 3, 0, nxm, mu)
        _accumulate_face(add, kc, ln, kc, ln, 0, 0, -pmat, mu)

    ndof = mesh.n_dofs
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ndof, ndof),
    )
    return mat.tocsr()


def _accumulate_face(add, cells_t, loc_t, cells_s, loc_s, row_block, col_block, comp, mu):
    """Entries val[f,a,q,c,p] = comp[f,a,c] mu[f,p,q] at rows (cells_t,
    row_block+a, loc_t[q]) and columns (cells_s, col_block+c, loc_s[p])."""
    a_idx = np.arange(3)
    val = comp[:, :, None, :, None] * mu[:, None, :, None, :].transpose(0, 1, 4, 3, 2)
    row = _dof(cells_t[:, None, None, None, None],
               row_block + a_idx[None, :, None, None, None],
               loc_t[:, None, :, None, None])
    col = _dof(cells_s[:, None, None, None, None],
               col_block + a_idx[None, None, None, :, None],
               loc_s[:, None, None, None, :])
    add(row, col, val)


def mass_matrix(mesh: DGMesh) -> sp.csr_matrix:
    """Block-diagonal L2 mass matrix (per cell, per component)."""
    blk = (np.ones((4, 4)) + np.eye(4)) / 20.0
    nc = mesh.n_cells
    val = blk[None, None] * mesh.volumes[:, None, None, None]
    val = np.broadcast_to(val, (nc, 6, 4, 4))
    cell = np.arange(nc)[:, None, None, None]
    comp = np.arange(6)[None, :, None, None]
    i = np.arange(4)[None, None, :, None]
    j = np.arange(4)[None, None, None, :]
    rows = _dof(cell, comp, i) + 0 * j
    cols = _dof(cell, comp, j) + 0 * i
    return sp.coo_matrix((val.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()


def apply_mass_inverse(mesh: DGMesh, b: np.ndarray) -> np.ndarray:
    """Closed-form inverse of the P1 tet mass block: (20 I - 4 * ones) / V."""
    s = b.sum(axis=-1, keepdims=True)
    return (20.0 * b - 4.0 * s) / mesh.volumes[:, None, None]


def _quad_points(mesh: DGMesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Physical quadrature points (nc, nq, 3), barycentric basis values
    (4, nq) and weights (nq,)."""
    bary, wts = quad_rule()
    verts = mesh.vertices[mesh.cells]  # (nc, 4, 3)
    pts = np.einsum("qi,nix->nqx", bary, verts)
    return pts, bary.T, wts


def l2_project(fn, mesh: DGMesh) -> DGFieldState:
    """L2-orthogonal projection of a callable 6-vector field onto (P1)^6.

    Exact for per-cell polynomials up to the quadrature degree; in
    particular affine fields are reproduced to roundoff.
    """
    pts, lam_q, wts = _quad_points(mesh)
    vals = np.asarray(fn(pts), dtype=float)  # (nc, nq, 6)
    if vals.shape != pts.shape[:2] + (6,):
        raise ParameterError("projection target must return 6 components per point")
    b = np.einsum("q,nqm,iq,n->nmi", wts, vals, lam_q, mesh.volumes)
    return DGFieldState(apply_mass_inverse(mesh, b))


def multiply_project(state_coeffs: np.ndarray, w_quad: np.ndarray, mesh: DGMesh,
                     lam_q: np.ndarray | None = None, wts: np.ndarray | None = None) -> np.ndarray:
    """pi_h[J u w] for a scalar field w given by its quadrature-point values.

    ``state_coeffs`` may carry leading batch axes: (..., nc, 6, 4);
    ``w_quad`` likewise (..., nc, nq).
    """
    if lam_q is None or wts is None:
        bary, wts = quad_rule()
        lam_q = bary.T
    u_q = np.einsum("...nmi,iq->...nmq", state_coeffs, lam_q)
    ju_q = np.concatenate([-u_q[..., 3:, :], u_q[..., :3, :]], axis=-2)
    b = np.einsum("q,...nq,...nmq,iq->...nmi", wts, w_quad, ju_q, lam_q)
    b *= mesh.volumes[:, None, None]
    s = b.sum(axis=-1, keepdims=True)
    return (20.0 * b - 4.0 * s) / mesh.volumes[:, None, None]


def evaluate_at_points(state_coeffs: np.ndarray, mesh: DGMesh, points: np.ndarray) -> np.ndarray:
    """Evaluate a dG state at scattered points inside the box.

    Points are located through the structured hex partition, then matched
    to one of the six Kuhn tets by maximal barycentric feasibility.
    Returns (..., npts, 6).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(mesh.box.contains(pts)):
        raise DomainError("evaluation point outside the domain box")
    counts = np.array(mesh.shape)
    lo, ln = mesh.box.lower, mesh.box.lengths
    frac = (pts - lo) / ln * counts
    hexes = np.clip(np.floor(frac).astype(int), 0, counts - 1)
    hex_lin = (hexes[:, 0] * mesh.shape[1] + hexes[:, 1]) * mesh.shape[2] + hexes[:, 2]
    cand = hex_lin[:, None] * 6 + np.arange(6)[None, :]           # (np, 6)
    lam = mesh.bary0[cand] + np.einsum("pcix,px->pci", mesh.grads[cand], pts)
    best = np.argmax(lam.min(axis=2), axis=1)
    cell = cand[np.arange(len(pts)), best]
    lam_best = lam[np.arange(len(pts)), best]                      # (np, 4)
    return np.einsum("...pmi,pi->...pm", state_coeffs[..., cell, :, :], lam_best)


def export_operator_coo(mat: sp.spmatrix, path) -> None:
    """Text export: one 'row col value' line per stored entry."""
    coo = mat.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")


class DgOperator:
    """Adapter wiring the dG discretization into the generic stepper.

    States are arrays of shape (..., nc, 6, 4).  The damping coefficient is
    required to be the constant sigma0 on this path.
    """

    kind = "dg"

    def __init__(self, mesh: DGMesh, sigma0: float, quad_subdiv: int = 0):
        if sigma0 <= 0:
            raise ParameterError("sigma0 must be positive")
        self.mesh = mesh
        self.sigma0 = float(sigma0)
        self.bform = assemble_mh(mesh)
        self.mass = mass_matrix(mesh)
        self._bary, self._wts = quad_rule(quad_subdiv)
        self._lam_q = self._bary.T
        self._qpts = np.einsum("qi,nix->nqx", self._bary, mesh.vertices[mesh.cells])
        self._lu: dict[float, object] = {}
        self._bases: dict[int, np.ndarray] = {}

    # -- linear structure -------------------------------------------------
    def _flatten(self, u: np.ndarray) -> tuple[np.ndarray, tuple]:
        lead = u.shape[:-3]
        return u.reshape(-1, self.mesh.n_dofs).T, lead

    def _unflatten(self, flat: np.ndarray, lead: tuple) -> np.ndarray:
        return flat.T.reshape(lead + (self.mesh.n_cells, 6, 4))

    def apply(self, u: np.ndarray) -> np.ndarray:
        flat, lead = self._flatten(u)
        out = self.bform @ flat
        out = apply_mass_inverse(self.mesh, self._unflatten(out, lead))
        return out

    def inner(self, u: np.ndarray, v: np.ndarray):
        blk = (np.ones((4, 4)) + np.eye(4)) / 20.0
        mv = np.einsum("...nmi,ij->...nmj", v, blk) * self.mesh.volumes[:, None, None]
        return np.sum(u * mv, axis=(-3, -2, -1))

    def norm2(self, u: np.ndarray):
        return self.inner(u, u)

    def damp(self, u: np.ndarray, dt: float) -> np.ndarray:
        return u * np.exp(-self.sigma0 * dt)

    # direct factorization up to this size; block-preconditioned iteration above
    DIRECT_SOLVE_MAX_DOFS = 40_000

    def solve_shifted(self, dt: float, b: np.ndarray) -> np.ndarray:
        """Solve (I - (dt/2) Minv B) x = b through (M - (dt/2) B) x = M b."""
        return self._shift_solve(dt, b, transpose=False)

    def solve_shifted_adjoint(self, dt: float, b: np.ndarray) -> np.ndarray:
        """Solve (I - (dt/2) Minv B^T) x = b (the mass-inner-product adjoint)."""
        return self._shift_solve(dt, b, transpose=True)

    def _shift_solve(self, dt: float, b: np.ndarray, transpose: bool) -> np.ndarray:
        key = float(dt)
        if key not in self._lu:
            if self.mesh.n_dofs <= self.DIRECT_SOLVE_MAX_DOFS:
                self._lu[key] = _DirectShiftSolver(self, key)
            else:
                self._lu[key] = _BlockShiftSolver(self, key)
        solver = self._lu[key]
        flat, lead = self._flatten(b)
        sol = solver.solve(flat, transpose=transpose)
        return self._unflatten(sol, lead)

    # -- noise coupling ----------------------------------------------------
    def noise_basis(self, ns: NoiseSpec) -> "_DgNoiseBasis":
        key = id(ns)
        if key not in self._bases:
            self._bases[key] = _DgNoiseBasis(ns, self._qpts)
        return self._bases[key]

    def mult_project(self, u: np.ndarray, w_quad: np.ndarray) -> np.ndarray:
        return multiply_project(u, w_quad, self.mesh, self._lam_q, self._wts)

    def add_project(self, w_quad: np.ndarray, lam2t: np.ndarray) -> np.ndarray:
        """pi_h of the 6-vector lambda2_tilde * w for scalar w at quad points."""
        b = np.einsum("q,...nq,iq->...ni", self._wts, w_quad, self._lam_q)
        b = b * self.mesh.volumes[:, None]
        s = b.sum(axis=-1, keepdims=True)
        scalar = (20.0 * b - 4.0 * s) / self.mesh.volumes[:, None]
        return scalar[..., None, :] * lam2t[:, None]

    # -- diagnostics -------------------------------------------------------
    def curl_norm2(self, u: np.ndarray):
        return self.norm2(self.apply(u))

    def div_norm2(self, u: np.ndarray):
        """Per-cell divergence (constant on each tet) of both blocks."""
        g = self.mesh.grads  # (nc, 4, 3)
        div_e = np.einsum("...nai,nia->...n", u[..., 0:3, :], g)
        div_h = np.einsum("...nai,nia->...n", u[..., 3:6, :], g)
        return np.sum((div_e**2 + div_h**2) * self.mesh.volumes, axis=-1)

    # -- states ------------------------------------------------------------
    def zero_state(self, batch: tuple[int, ...] = ()) -> np.ndarray:
        return np.zeros(batch + (self.mesh.n_cells, 6, 4))

    def lift(self, fn) -> np.ndarray:
        return l2_project(fn, self.mesh).coeffs

    def random_state(self, rng: np.random.Generator, batch: tuple[int, ...] = ()) -> np.ndarray:
        return rng.standard_normal(batch + (self.mesh.n_cells, 6, 4))

    def probe(self, u: np.ndarray, point, component: int = 0):
        vals = evaluate_at_points(u, self.mesh, np.asarray(point, dtype=float)[None, :])
        return vals[..., 0, component]


class _DirectShiftSolver:
    """Cached SuperLU factorization of (M - (dt/2) B)."""

    def __init__(self, op: DgOperator, dt: float):
        from scipy.sparse.linalg import splu

        self._mass = op.mass
        self._lu = splu((op.mass - (dt / 2.0) * op.bform).tocsc())

    def solve(self, flat: np.ndarray, transpose: bool = False) -> np.ndarray:
        rhs = self._mass @ flat
        return self._lu.solve(np.ascontiguousarray(rhs), trans="T" if transpose else "N")


class _BlockShiftSolver:
    """Cell-block preconditioned Richardson iteration for (M - (dt/2) B) x = M b.

    Splitting A = D - G with D holding every within-cell coupling (24x24
    blocks, inverted once) and G the strictly cross-cell face terms, the
    iteration x <- Dinv (M b + G x) contracts at rate (dt/2) ||Dinv G||,
    which is small in the intended regime (fine steps on large meshes).
    Direct factorization at these sizes has prohibitive fill.
    """

    MAX_SWEEPS = 400
    RTOL = 1e-13

    def __init__(self, op: DgOperator, dt: float):
        import scipy.sparse as _sp

        mesh = op.mesh
        self._mass = op.mass
        a_mat = (op.mass - (dt / 2.0) * op.bform).tocoo()
        cell_r = a_mat.row // 24
        cell_c = a_mat.col // 24
        own = cell_r == cell_c
        blocks = np.zeros((mesh.n_cells, 24, 24))
        np.add.at(blocks, (cell_r[own], a_mat.row[own] % 24, a_mat.col[own] % 24),
                  a_mat.data[own])
        self._dinv = np.linalg.inv(blocks)
        self._dinv_t = np.transpose(self._dinv, (0, 2, 1))
        cross = _sp.coo_matrix(
            (-a_mat.data[~own], (a_mat.row[~own], a_mat.col[~own])), shape=a_mat.shape
        )
        self._g = cross.tocsr()
        self._gt = cross.T.tocsr()
        self._n_cells = mesh.n_cells

    def _block_apply(self, dinv: np.ndarray, flat: np.ndarray) -> np.ndarray:
        cols = flat.shape[1]
        x = flat.reshape(self._n_cells, 24, cols)
        return np.einsum("nij,njk->nik", dinv, x).reshape(-1, cols)

    def solve(self, flat: np.ndarray, transpose: bool = False) -> np.ndarray:
        g = self._gt if transpose else self._g
        dinv = self._dinv_t if transpose else self._dinv
        rhs = self._mass @ flat
        x = self._block_apply(dinv, rhs)
        for _ in range(self.MAX_SWEEPS):
            x_new = self._block_apply(dinv, rhs + g @ x)
            delta = np.linalg.norm(x_new - x)
            x = x_new
            if delta <= self.RTOL * max(np.linalg.norm(x), 1e-300):
                return x
        raise SolverError(
            "block Richardson iteration stalled; dt too large for this mesh",
            residual=float(delta),
        )


class _DgNoiseBasis:
    """Noise basis values cached at every quadrature point of the mesh."""

    def __init__(self, ns: NoiseSpec, qpts: np.ndarray):
        nc, nq, _ = qpts.shape
        flat = qpts.reshape(-1, 3)
        self._q = ns.basis_values(flat, check_domain=False)  # (M, nc*nq)
        self._shape = (nc, nq)

    def field(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        flat = coeffs @ self._q
        return flat.reshape(coeffs.shape[:-1] + self._shape)
