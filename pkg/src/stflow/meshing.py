"""Spatial meshes, space-time slab extrusion, and facet classification.

A 2D triangulation with prescribed vertex motion is extruded slab by slab:
each triangle becomes a prism (bottom face at the t^n positions, top face at
the t^{n+1} positions) that is split into exactly three tetrahedra.  The
split is keyed on global vertex indices so that the diagonal of every
lateral quadrilateral runs from the quad's lowest-indexed (bottom) vertex to
its highest-indexed (top) vertex; neighbouring prisms therefore triangulate
shared walls identically and the slab mesh is conforming.

Facets are classified as bottom (n_t = -1), top (n_t = +1), interior, or
boundary (Dirichlet / Neumann, inherited from the spatial boundary edge they
were extruded from).  Trace unknowns live only on the non-horizontal
("lateral") facets.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, MeshError

log = logging.getLogger(__name__)

# facet kind codes
FACET_INTERIOR = 0
FACET_DIRICHLET = 1
FACET_NEUMANN = 2
FACET_BOTTOM = 3
FACET_TOP = 4

LATERAL_KINDS = (FACET_INTERIOR, FACET_DIRICHLET, FACET_NEUMANN)

MARKER_NAMES = {FACET_DIRICHLET: "dirichlet", FACET_NEUMANN: "neumann"}
MARKER_CODES = {v: k for k, v in MARKER_NAMES.items()}

#: reference tetrahedron vertices (unit simplex)
REF_TET = np.array(
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
)
#: reference triangle vertices
REF_TRI = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

# The three tets of the prism [P0 P1 P2 | Q0 Q1 Q2] (indices into the
# 6-vertex prism, bottom triangle sorted by global vertex id).  Wall-quad
# diagonals all run bottom(min) -> top(max); the tuples are ordered to give
# positive volume when the sorted bottom triangle is counterclockwise.
_PRISM_TETS = ((0, 1, 2, 5), (0, 1, 5, 4), (0, 3, 4, 5))


def _triangle_area2(pts):
    """Twice the signed area of triangles given as (..., 3, 2) arrays."""
    a, b, c = pts[..., 0, :], pts[..., 1, :], pts[..., 2, :]
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (
        b[..., 1] - a[..., 1]
    ) * (c[..., 0] - a[..., 0])


@dataclass
class MovingSpatialMesh:
    """Triangulation of the moving domain.

    Connectivity is time independent; only vertex positions move, via
    ``motion(t, reference_vertices) -> positions``.  ``motion=None`` means
    the mesh is fixed at its reference configuration.
    """

    reference_vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray  # (B, 2), each row sorted ascending
    boundary_markers: np.ndarray  # (B,) codes FACET_DIRICHLET / FACET_NEUMANN
    motion: object = None

    def __post_init__(self):
        self.reference_vertices = np.asarray(self.reference_vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64)
        self.boundary_markers = np.asarray(self.boundary_markers, dtype=np.int64)
        self._validate()

    # -- basic queries ---------------------------------------------------
    @property
    def num_vertices(self):
        return self.reference_vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def positions(self, t):
        """Vertex positions at time t (reference positions if no motion)."""
        if self.motion is None:
            return self.reference_vertices.copy()
        pos = np.asarray(self.motion(t, self.reference_vertices), dtype=float)
        if pos.shape != self.reference_vertices.shape:
            raise GeometryError(
                f"motion map returned shape {pos.shape}, "
                f"expected {self.reference_vertices.shape}"
            )
        return pos

    def edges(self):
        """All unique edges as sorted (min,max) pairs, shape (E, 2)."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [0, 2]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def boundary_marker_map(self):
        return {
            (int(a), int(b)): int(m)
            for (a, b), m in zip(self.boundary_edges, self.boundary_markers)
        }

    # -- validation ------------------------------------------------------
    def _validate(self):
        nv = self.num_vertices
        if self.reference_vertices.ndim != 2 or self.reference_vertices.shape[1] != 2:
            raise MeshError("vertices must be an (n, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be an (n, 3) array")
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=-1) >= nv:
            raise MeshError("triangle vertex index out of range")
        # orient all triangles counterclockwise in the reference configuration
        area2 = _triangle_area2(self.reference_vertices[self.triangles])
        if np.any(area2 == 0.0):
            bad = int(np.flatnonzero(area2 == 0.0)[0])
            raise MeshError(f"triangle {bad} is degenerate (zero area)")
        flip = area2 < 0.0
        if np.any(flip):
            log.debug("reorienting %d clockwise triangles", int(flip.sum()))
            self.triangles = self.triangles.copy()
            self.triangles[flip] = self.triangles[flip][:, [0, 2, 1]]

        # every true boundary edge must carry exactly one marker
        t = self.triangles
        e = np.sort(
            np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [0, 2]]]), axis=1
        )
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        if counts.max(initial=2) > 2:
            bad = uniq[np.argmax(counts)]
            raise MeshError(f"edge {tuple(bad)} is shared by more than two triangles")
        true_boundary = {tuple(edge) for edge in uniq[counts == 1]}
        if self.boundary_edges.size:
            if self.boundary_edges.shape[1] != 2:
                raise MeshError("boundary edges must be an (n, 2) array")
            be = np.sort(self.boundary_edges, axis=1)
            self.boundary_edges = be
        marked = [tuple(edge) for edge in self.boundary_edges]
        if len(set(marked)) != len(marked):
            raise MeshError("duplicate boundary edge marker")
        marked_set = set(marked)
        missing = true_boundary - marked_set
        if missing:
            raise MeshError(f"boundary edge {sorted(missing)[0]} has no marker")
        extra = marked_set - true_boundary
        if extra:
            raise MeshError(
                f"marked edge {sorted(extra)[0]} is not a boundary edge of the mesh"
            )
        for m in self.boundary_markers:
            if int(m) not in MARKER_NAMES:
                raise MeshError(f"unknown boundary marker code {int(m)}")


# ---------------------------------------------------------------------------
# mesh text format
# ---------------------------------------------------------------------------

_SECTIONS = ("VERTICES", "TRIANGLES", "BOUNDARY")


def parse_mesh_text(text, name="<mesh>"):
    """Parse the plain-text mesh format.

    Sections VERTICES (``x y`` per line), TRIANGLES (``i j k``), BOUNDARY
    (``i j marker``); indices are 0-based, ``#`` starts a comment.
    """
    verts, tris, bedges, bmarks = [], [], [], []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        upper = line.upper()
        if upper in _SECTIONS:
            section = upper
            continue
        if section is None:
            raise MeshError(f"{name}:{lineno}: data before any section header")
        parts = line.split()
        try:
            if section == "VERTICES":
                if len(parts) != 2:
                    raise ValueError("expected 2 fields")
                verts.append((float(parts[0]), float(parts[1])))
            elif section == "TRIANGLES":
                if len(parts) != 3:
                    raise ValueError("expected 3 fields")
                tris.append(tuple(int(p) for p in parts))
            else:  # BOUNDARY
                if len(parts) != 3:
                    raise ValueError("expected 3 fields")
                marker = parts[2].lower()
                if marker not in MARKER_CODES:
                    raise ValueError(f"unknown marker {parts[2]!r}")
                bedges.append((int(parts[0]), int(parts[1])))
                bmarks.append(MARKER_CODES[marker])
        except ValueError as exc:
            raise MeshError(f"{name}:{lineno}: {exc} in line {raw!r}") from None
    if not verts:
        raise MeshError(f"{name}: no VERTICES section")
    if not tris:
        raise MeshError(f"{name}: no TRIANGLES section")
    return MovingSpatialMesh(
        reference_vertices=np.array(verts, dtype=float),
        triangles=np.array(tris, dtype=np.int64),
        boundary_edges=np.array(bedges, dtype=np.int64).reshape(-1, 2),
        boundary_markers=np.array(bmarks, dtype=np.int64),
    )


def read_mesh(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_mesh_text(fh.read(), name=str(path))


def mesh_to_text(mesh):
    lines = ["VERTICES"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.reference_vertices]
    lines.append("TRIANGLES")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    lines.append("BOUNDARY")
    lines += [
        f"{i} {j} {MARKER_NAMES[int(m)]}"
        for (i, j), m in zip(mesh.boundary_edges, mesh.boundary_markers)
    ]
    return "\n".join(lines) + "\n"


def write_mesh(mesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(mesh_to_text(mesh))


# ---------------------------------------------------------------------------
# structured meshes / refinement
# ---------------------------------------------------------------------------


def unit_square_mesh(n, neumann_predicate=None):
    """Uniform n x n unit-square mesh, 2n^2 triangles.

    ``neumann_predicate(midpoint) -> bool`` marks boundary edges Neumann;
    everything else is Dirichlet.
    """
    xs = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    verts = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    tris = np.array(tris, dtype=np.int64)

    bedges, bmarks = [], []
    for i in range(n):
        for a, b in (
            (vid(i, 0), vid(i + 1, 0)),
            (vid(i, n), vid(i + 1, n)),
            (vid(0, i), vid(0, i + 1)),
            (vid(n, i), vid(n, i + 1)),
        ):
            bedges.append((min(a, b), max(a, b)))
    bedges = np.unique(np.array(bedges, dtype=np.int64), axis=0)
    for a, b in bedges:
        mid = 0.5 * (verts[a] + verts[b])
        neu = bool(neumann_predicate(mid)) if neumann_predicate is not None else False
        bmarks.append(FACET_NEUMANN if neu else FACET_DIRICHLET)
    return MovingSpatialMesh(
        reference_vertices=verts,
        triangles=tris,
        boundary_edges=bedges,
        boundary_markers=np.array(bmarks, dtype=np.int64),
    )


def refine_uniform(mesh, times=1):
    """Red refinement: every triangle into four, markers inherited."""
    out = mesh
    for _ in range(times):
        out = _refine_once(out)
    return out


def _refine_once(mesh):
    verts = list(map(tuple, mesh.reference_vertices))
    midpoint = {}

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in midpoint:
            midpoint[key] = len(verts)
            verts.append(
                tuple(
                    0.5
                    * (mesh.reference_vertices[a] + mesh.reference_vertices[b])
                )
            )
        return midpoint[key]

    tris = []
    for a, b, c in mesh.triangles:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        tris += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    bedges, bmarks = [], []
    for (a, b), m in zip(mesh.boundary_edges, mesh.boundary_markers):
        ab = mid(int(a), int(b))
        bedges += [(min(int(a), ab), max(int(a), ab)), (min(ab, int(b)), max(ab, int(b)))]
        bmarks += [int(m), int(m)]
    return MovingSpatialMesh(
        reference_vertices=np.array(verts, dtype=float),
        triangles=np.array(tris, dtype=np.int64),
        boundary_edges=np.array(bedges, dtype=np.int64),
        boundary_markers=np.array(bmarks, dtype=np.int64),
        motion=mesh.motion,
    )


# ---------------------------------------------------------------------------
# slab topology (time independent, cached across slabs)
# ---------------------------------------------------------------------------


class SlabTopology:
    """Connectivity of the extruded slab; identical for every slab.

    Vertex ids: bottom layer = spatial ids, top layer = spatial id + nv.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        nv, nt = mesh.num_vertices, mesh.num_triangles
        self.num_spatial_vertices = nv
        self.num_spatial_triangles = nt
        self.spatial_edges = mesh.edges()

        tris = mesh.triangles
        order = np.argsort(tris, axis=1)
        tri_sorted = np.take_along_axis(tris, order, axis=1)
        # parity of the sorting permutation: the sorted triple keeps the
        # stored (CCW) orientation iff the permutation is even
        o = order
        even = (
            ((o[:, 0] == 0) & (o[:, 1] == 1))
            | ((o[:, 0] == 1) & (o[:, 1] == 2))
            | ((o[:, 0] == 2) & (o[:, 1] == 0))
        )
        parity = np.where(even, 1, -1)

        # cells 3t, 3t+1, 3t+2 are the split of prism t, in _PRISM_TETS order
        prism = np.column_stack([tri_sorted, tri_sorted + nv])  # P0 P1 P2 Q0 Q1 Q2
        cells = np.empty((3 * nt, 4), dtype=np.int64)
        swap = parity < 0
        for j, tet in enumerate(_PRISM_TETS):
            block = prism[:, list(tet)]
            block[swap] = block[swap][:, [0, 1, 3, 2]]
            cells[j::3] = block
        self.cells = cells
        self.cell_tri = np.repeat(np.arange(nt), 3)

        self._build_facets(mesh)
        self._build_ref_embeddings()

    # -- facet tables ----------------------------------------------------
    def _build_facets(self, mesh):
        nv = self.num_spatial_vertices
        cells = self.cells
        T = cells.shape[0]
        # local facet l is opposite local vertex l
        local = [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]
        table = {}
        owner, neighbor = [], []
        fverts = []
        cell_facets = np.empty((T, 4), dtype=np.int64)
        for c in range(T):
            for l, idx in enumerate(local):
                tri = tuple(sorted(int(cells[c, i]) for i in idx))
                fid = table.get(tri)
                if fid is None:
                    fid = len(fverts)
                    table[tri] = fid
                    fverts.append(tri)
                    owner.append(c)
                    neighbor.append(-1)
                elif neighbor[fid] == -1:
                    neighbor[fid] = c
                else:
                    raise MeshError(
                        f"facet {tri} shared by more than two cells "
                        f"({owner[fid]}, {neighbor[fid]}, {c})"
                    )
                cell_facets[c, l] = fid
        self.facet_verts = np.array(fverts, dtype=np.int64)
        self.facet_owner = np.array(owner, dtype=np.int64)
        self.facet_neighbor = np.array(neighbor, dtype=np.int64)
        self.cell_facets = cell_facets
        NF = len(fverts)

        marker_map = mesh.boundary_marker_map()
        kind = np.empty(NF, dtype=np.int64)
        for f, tri in enumerate(fverts):
            if self.facet_neighbor[f] >= 0:
                kind[f] = FACET_INTERIOR
            elif all(v < nv for v in tri):
                kind[f] = FACET_BOTTOM
            elif all(v >= nv for v in tri):
                kind[f] = FACET_TOP
            else:
                sp = tuple(sorted({v % nv for v in tri}))
                if len(sp) != 2 or sp not in marker_map:
                    raise MeshError(
                        f"lateral boundary facet {tri} does not sit over a "
                        f"marked boundary edge"
                    )
                kind[f] = marker_map[sp]
        self.facet_kind = kind

        self.lateral_ids = np.flatnonzero(np.isin(kind, LATERAL_KINDS))
        self.facet_lateral_pos = np.full(NF, -1, dtype=np.int64)
        self.facet_lateral_pos[self.lateral_ids] = np.arange(len(self.lateral_ids))
        self.is_lateral_local = np.isin(kind[cell_facets], LATERAL_KINDS)

        # bottom/top facet of each prism (for data transfer between slabs)
        nt = self.num_spatial_triangles
        tri_sorted = np.sort(mesh.triangles, axis=1)
        self.tri_bottom_facet = np.array(
            [table[tuple(tri_sorted[t])] for t in range(nt)], dtype=np.int64
        )
        self.tri_top_facet = np.array(
            [table[tuple(tri_sorted[t] + nv)] for t in range(nt)], dtype=np.int64
        )

    # -- reference embeddings (pure topology, reused by basis tables) ----
    def _build_ref_embeddings(self):
        """For each (cell, local facet): the reference-tet coordinates of the
        facet's three vertices *in sorted-global order*, so that the facet's
        global parametrization pulls back exactly (no floating-point map
        inversion) to cell reference coordinates.
        """
        cells = self.cells
        T = cells.shape[0]
        emb = np.empty((T, 4, 3, 3))
        fv = self.facet_verts[self.cell_facets]  # (T, 4, 3) sorted global ids
        for c in range(T):
            pos = {int(v): i for i, v in enumerate(cells[c])}
            for l in range(4):
                for a in range(3):
                    emb[c, l, a] = REF_TET[pos[int(fv[c, l, a])]]
        self.facet_ref_embed = emb

        # bottom/top facets against the parent triangle's 2D reference map
        nv = self.num_spatial_vertices
        nt = self.num_spatial_triangles
        tris = self.mesh.triangles
        bot = np.empty((nt, 3, 2))
        top = np.empty((nt, 3, 2))
        for t in range(nt):
            pos2 = {int(v): i for i, v in enumerate(tris[t])}
            for a, v in enumerate(self.facet_verts[self.tri_bottom_facet[t]]):
                bot[t, a] = REF_TRI[pos2[int(v)]]
            for a, v in enumerate(self.facet_verts[self.tri_top_facet[t]]):
                top[t, a] = REF_TRI[pos2[int(v) - nv]]
        self.bottom_ref_embed = bot
        self.top_ref_embed = top

    @property
    def num_cells(self):
        return self.cells.shape[0]

    @property
    def num_facets(self):
        return self.facet_verts.shape[0]

    @property
    def num_lateral_facets(self):
        return self.lateral_ids.shape[0]


def facet_sets(topology):
    """Facet ids per kind — the enumerable sets used throughout."""
    kind = topology.facet_kind
    return {
        "bottom": np.flatnonzero(kind == FACET_BOTTOM),
        "top": np.flatnonzero(kind == FACET_TOP),
        "interior": np.flatnonzero(kind == FACET_INTERIOR),
        "dirichlet": np.flatnonzero(kind == FACET_DIRICHLET),
        "neumann": np.flatnonzero(kind == FACET_NEUMANN),
    }


# ---------------------------------------------------------------------------
# per-slab geometry
# ---------------------------------------------------------------------------


class SlabMesh:
    """Geometry of one space-time slab over a fixed SlabTopology."""

    def __init__(self, topology, bottom_xy, top_xy, t_lo, t_hi, index=0):
        if t_hi <= t_lo:
            raise GeometryError(f"slab {index}: t_hi {t_hi} <= t_lo {t_lo}")
        self.topology = topology
        self.index = index
        self.t_lo = float(t_lo)
        self.t_hi = float(t_hi)
        nv = topology.num_spatial_vertices
        coords = np.empty((2 * nv, 3))
        coords[:nv, :2] = bottom_xy
        coords[:nv, 2] = t_lo
        coords[nv:, :2] = top_xy
        coords[nv:, 2] = t_hi
        self.coords = coords
        self._build_cell_geometry()
        self._build_facet_geometry()
        self._build_cell_h(bottom_xy)

    def _build_cell_geometry(self):
        topo = self.topology
        v = self.coords[topo.cells]  # (T, 4, 3)
        jac = np.stack(
            [v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2
        )  # columns are edge vectors: x = v0 + J @ xi
        det = np.linalg.det(jac)
        span = self.coords.max(axis=0) - self.coords.min(axis=0)
        tol = 1e-14 * max(float(np.prod(span)), 1e-300)
        bad = det <= tol
        if np.any(bad):
            c = int(np.flatnonzero(bad)[0])
            raise GeometryError(
                f"inverted space-time element: cell {c} (signed volume "
                f"{det[c] / 6.0:.3e}) in slab {self.index}"
            )
        self.cell_jac = jac
        self.cell_det = det
        self.cell_invjac = np.linalg.inv(jac)
        self.cell_volume = det / 6.0

    def _build_facet_geometry(self):
        topo = self.topology
        fv = self.coords[topo.facet_verts]  # (NF, 3, 3)
        e1 = fv[:, 1] - fv[:, 0]
        e2 = fv[:, 2] - fv[:, 0]
        raw = np.stack(
            [
                e1[:, 1] * e2[:, 2] - e1[:, 2] * e2[:, 1],
                e1[:, 2] * e2[:, 0] - e1[:, 0] * e2[:, 2],
                e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0],
            ],
            axis=1,
        )
        norm = np.linalg.norm(raw, axis=1)
        if np.any(norm == 0.0):
            f = int(np.flatnonzero(norm == 0.0)[0])
            raise GeometryError(
                f"degenerate facet {f} in slab {self.index} (zero area)"
            )
        self.facet_area = 0.5 * norm
        normal = raw / norm[:, None]
        # orient outward from the owner cell
        own_centroid = self.coords[topo.cells[topo.facet_owner]].mean(axis=1)
        fac_centroid = fv.mean(axis=1)
        flip = np.einsum("fd,fd->f", normal, fac_centroid - own_centroid) < 0.0
        normal[flip] *= -1.0
        self.facet_normal = normal

    def _build_cell_h(self, bottom_xy):
        topo = self.topology
        tri = bottom_xy[topo.mesh.triangles]  # (nt, 3, 2)
        d01 = np.linalg.norm(tri[:, 0] - tri[:, 1], axis=1)
        d12 = np.linalg.norm(tri[:, 1] - tri[:, 2], axis=1)
        d02 = np.linalg.norm(tri[:, 0] - tri[:, 2], axis=1)
        diam = np.maximum(np.maximum(d01, d12), d02)
        self.tri_h = diam
        self.cell_h = diam[topo.cell_tri]

    # -- conveniences ----------------------------------------------------
    @property
    def num_cells(self):
        return self.topology.num_cells

    def total_volume(self):
        return float(self.cell_volume.sum())

    def facet_points(self, facet_ids, ref_pts):
        """Physical points of the facets' global parametrization.

        ref_pts: (nq, 2) on the reference triangle; returns (len(ids), nq, 3).
        """
        fv = self.coords[self.topology.facet_verts[facet_ids]]
        v0 = fv[:, None, 0, :]
        e1 = (fv[:, 1] - fv[:, 0])[:, None, :]
        e2 = (fv[:, 2] - fv[:, 0])[:, None, :]
        return v0 + ref_pts[None, :, 0:1] * e1 + ref_pts[None, :, 1:2] * e2


def extrude_slab(mesh, n, dt, topology=None, t0=None):
    """Extrude slab n covering [t0 + n*dt, t0 + (n+1)*dt] (t0 defaults 0)."""
    if dt <= 0:
        raise GeometryError(f"time step must be positive, got {dt}")
    if topology is None:
        topology = SlabTopology(mesh)
    base = 0.0 if t0 is None else float(t0)
    t_lo = base + n * dt
    t_hi = base + (n + 1) * dt
    return SlabMesh(
        topology,
        mesh.positions(t_lo),
        mesh.positions(t_hi),
        t_lo,
        t_hi,
        index=n,
    )


def classify_facets(slab):
    """Return the facet sets of the slab (classification is built at
    construction; exposed here for inspection and tests)."""
    return facet_sets(slab.topology)


def compute_cell_h(slab):
    """Per-cell penalty length: diameter of the parent spatial triangle at
    the slab's bottom time level."""
    return slab.cell_h
