"""Initial velocity data on the spatial mesh: constrained projection and a
steady-flow solve.

The first slab consumes a carried field u^- living on the t=0 triangles.
Feeding it the plain L2 projection of the initial condition would poison the
discrete mass balance: the slab constraint rows only keep the velocity
divergence-free if the carried data already is.  The projection here is the
mixed problem

    (u, v) + b(v; q, qbar) = (u0, v)     for all v in [P_k(tri)]^2,
    b(u; r, rbar) = 0                    for all multipliers (r, rbar),

    b(v; q, qbar) = - sum_K (q, div v)_K + sum_K <qbar, v.n>_{dK minus dOmega},

with r ranging cell-wise over P_{k-1}(tri) and rbar over the variant's
pressure-trace space restricted to interior edges (per-edge P_k, or the
continuous version of it).  Since div maps [P_k(K)]^2 into P_{k-1}(K) and
v.n spans P_k(e) on each edge, the constraints are pointwise statements:
the output is exactly divergence-free cell-wise, and for the facet-local
multiplier variants the normal component is single-valued across edges.

A steady-flow initial field (no forcing, no time terms) is produced by
solving a single slab of the time-independent problem on the frozen t=0
mesh.  Without advective and time terms every slab form factorizes into
(time integral) x (spatial form), so the unique slab solution is the
steady hybridized solution extruded constant in time; sampling it at the
slab top recovers the spatial field exactly.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GeometryError, SolverError
from .meshing import extrude_slab
from .quadrature import quadrature_for
from .spaces import MethodVariant, build_spaces, simplex_basis

#: reference triangle vertices, matching the order used by cell maps
_REF2 = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

_EDGE_LOCAL = ((0, 1), (1, 2), (2, 0))


@dataclass
class SpatialField:
    """Nodal velocity coefficients per parent triangle.

    ``coeffs[t, d, i]`` is component d at lattice node i in triangle t's own
    reference frame (the frame spanned by its stored vertex order); this is
    the layout the slab assembler consumes for carried bottom data and emits
    from top-facet extraction.
    """

    degree: int
    coeffs: np.ndarray  # (nt, 2, n2)

    def sample(self, ref_points):
        """Field values at reference points in every triangle, (nt, m, 2)."""
        phi = simplex_basis(2, self.degree).eval_at(ref_points)
        return np.einsum("qi,tdi->tqd", phi, self.coeffs)


def _triangle_geometry(mesh, t):
    xy = mesh.positions(t)
    tris = mesh.triangles
    v0 = xy[tris[:, 0]]
    J = np.stack([xy[tris[:, 1]] - v0, xy[tris[:, 2]] - v0], axis=2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    bad = np.flatnonzero(det <= 0)
    if bad.size:
        raise GeometryError(
            f"triangle {bad[0]} is degenerate or inverted at t={t:g}"
        )
    # det * inv(J), exact from the entries
    adj = np.empty_like(J)
    adj[:, 0, 0] = J[:, 1, 1]
    adj[:, 0, 1] = -J[:, 0, 1]
    adj[:, 1, 0] = -J[:, 1, 0]
    adj[:, 1, 1] = J[:, 0, 0]
    return xy, v0, J, det, adj


def _interior_edges(triangles):
    """Sorted vertex pairs shared by two triangles, with both (cell, local
    vertex positions) sides."""
    sides = {}
    for c, tri in enumerate(triangles):
        for la, lb in _EDGE_LOCAL:
            a, b = int(tri[la]), int(tri[lb])
            key = (a, b) if a < b else (b, a)
            sides.setdefault(key, []).append(c)
    out = []
    for key, cells in sorted(sides.items()):
        if len(cells) == 2:
            out.append((key, cells))
        elif len(cells) > 2:
            raise GeometryError(f"edge {key} is shared by {len(cells)} cells")
    return out


def _edge_multiplier_keys(edges, nodes1, continuous):
    """DOF ids for the edge multiplier: one per (edge, node) when facet-local,
    with endpoint nodes merged by global vertex when continuous."""
    n1 = len(nodes1)
    ids = np.empty((len(edges), n1), dtype=np.int64)
    if not continuous:
        ids[:] = np.arange(len(edges) * n1).reshape(len(edges), n1)
        return ids, len(edges) * n1
    table = {}
    for e, ((a, b), _) in enumerate(edges):
        for j, s in enumerate(nodes1):
            if s == 0.0:
                key = ("v", a)
            elif s == 1.0:
                key = ("v", b)
            else:
                key = ("e", e, j)
            ids[e, j] = table.setdefault(key, len(table))
    return ids, len(table)


def _variant_degree(spaces):
    """Accept a built spaces object or a plain (variant, degree) pair."""
    if hasattr(spaces, "variant") and hasattr(spaces, "degree"):
        return MethodVariant(spaces.variant), int(spaces.degree)
    variant, degree = spaces
    return MethodVariant.parse(variant), int(degree)


def project_initial_condition(mesh, spaces, u0, t=0.0):
    """Divergence-constrained projection of the callable u0 at time t.

    ``spaces`` only contributes the variant and degree (a (variant, degree)
    pair is accepted too); the projection lives on the spatial triangles.
    Returns a SpatialField suitable as carried data for the first slab.
    """
    variant, k = _variant_degree(spaces)
    basis_u = simplex_basis(2, k)
    basis_q = simplex_basis(2, k - 1)
    basis_1 = simplex_basis(1, k)
    n2, npq, n1 = basis_u.n_nodes, basis_q.n_nodes, basis_1.n_nodes

    xy, v0, J, det, adj = _triangle_geometry(mesh, t)
    tris = mesh.triangles
    nt = len(tris)

    rule = quadrature_for(2 * k + 4, "triangle")
    PHI = basis_u.eval_at(rule.points)  # (nq, n2)
    GRAD = basis_u.grad_at(rule.points)  # (nq, n2, 2)
    PHIQ = basis_q.eval_at(rule.points)  # (nq, npq)
    w = rule.weights

    # u block: dof index ((t*2 + d)*n2 + i)
    nu = nt * 2 * n2
    nq = nt * npq

    M_ref = (PHI.T * w) @ PHI
    X = v0[:, None, :] + np.einsum("qa,tda->tqd", rule.points, J)
    u0v = np.asarray(u0(X.reshape(-1, 2)), dtype=float).reshape(nt, -1, 2)
    F = np.einsum("t,tqd,q,qi->tdi", det, u0v, w, PHI)

    # divergence rows: -(r, div u)_K, det folded into the adjugate
    DIV = -np.einsum("qp,q,qja,tad->tpjd", PHIQ, w, GRAD, adj)

    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(np.asarray(r).ravel())
        cols.append(np.asarray(c).ravel())
        vals.append(np.asarray(v).ravel())

    udof = (np.arange(nt)[:, None, None] * 2 + np.arange(2)[None, :, None]) \
        * n2 + np.arange(n2)[None, None, :]
    mshape = (nt, 2, n2, n2)
    put(
        np.broadcast_to(udof[:, :, :, None], mshape),
        np.broadcast_to(udof[:, :, None, :], mshape),
        np.broadcast_to(det[:, None, None, None] * M_ref, mshape),
    )
    qdof = nu + np.arange(nt * npq).reshape(nt, npq)
    dshape = (nt, npq, n2, 2)
    divr = np.broadcast_to(qdof[:, :, None, None], dshape)
    divc = np.broadcast_to(np.moveaxis(udof, 1, 2)[:, None, :, :], dshape)
    put(divr, divc, DIV)
    put(divc, divr, DIV)  # exact transpose

    edges = _interior_edges(tris)
    nodes1 = basis_1.nodes[:, 0]
    edge_ids, nbar = _edge_multiplier_keys(
        edges, nodes1, variant.continuous_pressure_trace
    )
    erule = quadrature_for(2 * k + 2, "interval")
    s = erule.points[:, 0]
    w1 = erule.weights
    PSI = basis_1.eval_at(erule.points)  # (nq1, n1)
    centroids = (xy[tris[:, 0]] + xy[tris[:, 1]] + xy[tris[:, 2]]) / 3.0

    for e, ((a, b), cells) in enumerate(edges):
        tang = xy[b] - xy[a]
        length = float(np.hypot(*tang))
        normal = np.array([tang[1], -tang[0]]) / length
        mid = 0.5 * (xy[a] + xy[b])
        bdof = nu + nq + edge_ids[e]
        for c in cells:
            pos = {int(v): i for i, v in enumerate(tris[c])}
            ra, rb = _REF2[pos[a]], _REF2[pos[b]]
            ref = ra[None, :] + s[:, None] * (rb - ra)[None, :]
            phi_e = basis_u.eval_at(ref)  # (nq1, n2)
            sign = 1.0 if np.dot(normal, mid - centroids[c]) > 0 else -1.0
            blk = sign * length * np.einsum("q,qm,qj->mj", w1, PSI, phi_e)
            for d in range(2):
                r = np.broadcast_to(bdof[:, None], (n1, n2))
                cdx = np.broadcast_to(udof[c, d][None, :], (n1, n2))
                put(r, cdx, normal[d] * blk)
                put(cdx, r, normal[d] * blk)

    ntot = nu + nq + nbar
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ntot, ntot),
    ).tocsc()
    rhs = np.zeros(ntot)
    rhs[:nu] = F.ravel()
    try:
        sol = spla.splu(K).solve(rhs)
    except RuntimeError as exc:
        raise SolverError(
            f"initial-condition projection system is singular ({exc})"
        ) from exc
    coeffs = sol[:nu].reshape(nt, 2, n2)
    return SpatialField(degree=k, coeffs=coeffs)


def steady_stokes_field(mesh, variant, k, nu, dirichlet, *, dt=1.0, t=0.0,
                        penalty_c=6.0, neumann=None, tol=1e-12):
    """Steady-flow initial field from one time-independent slab solve on the
    mesh frozen at time t.  ``dirichlet`` is evaluated at that time only."""
    from .forms import SlabAssembler, params_for
    from .solver import PicardConfig, picard_solve

    frozen = dataclasses.replace(
        mesh, reference_vertices=mesh.positions(t), motion=None
    )
    slab = extrude_slab(frozen, 0, dt)
    spaces = build_spaces(slab, variant, k)
    params = params_for(
        k, nu, penalty_c=penalty_c, neumann=neumann, advective="none"
    )

    def pinned(pts):
        sp_pts = np.column_stack([pts[:, 0], pts[:, 1], np.full(len(pts), t)])
        return dirichlet(sp_pts)

    cfg = PicardConfig(tol=tol, max_iterations=1)
    sol = picard_solve(slab, spaces, params, cfg, None, dirichlet=pinned)
    asm = SlabAssembler(slab, spaces, params)
    return SpatialField(degree=k, coeffs=asm.extract_top_coeffs(sol.ucell))
