"""Assembly of the space-time variational forms on slab meshes.

Unknowns per slab: broken cell fields (velocity in [P_k]^2, pressure in
P_{k-1}) and facet trace fields (velocity and pressure in P_k) living on the
lateral facets only.  Every bilinear form decomposes into per-cell dense
blocks over the local layout [u1 | u2 | p] plus per-(cell, local facet)
coupling blocks against the facet slot layout [ubar1 | ubar2 | pbar]:

    A  (nw x nw)      cell-cell        B (nw x 3*n2)    cell-trace
    C  (3*n2 x nw)    trace-cell       D (3*n2 x 3*n2)  trace-trace

The assembler is batched over all cells of a slab (the hot path) but exposes
per-cell views so each form can be pinned against a naive quadrature oracle
on standalone tetrahedra.
"""

import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from itertools import permutations

import numpy as np

from .errors import ConfigError, GeometryError, SolverError
from .meshing import FACET_NEUMANN, REF_TET, REF_TRI
from .quadrature import quadrature_for
from .spaces import simplex_basis

log = logging.getLogger(__name__)

ADVECTIVE_FORMS = ("full", "conservative", "none")


@dataclass(frozen=True)
class FormParams:
    """Physical and numerical parameters entering the forms.

    alpha is the interior-penalty coefficient (already multiplied by k^2;
    see ``params_for``); forcing/neumann are callables mapping space-time
    points (m, 3) -> (m, 2), or None for zero data.
    """

    nu: float
    alpha: float
    forcing: object = None
    neumann: object = None
    advective: str = "full"

    def __post_init__(self):
        if self.advective not in ADVECTIVE_FORMS:
            raise ConfigError(
                f"advective_form must be one of {ADVECTIVE_FORMS}, "
                f"got {self.advective!r}"
            )
        if not self.nu > 0:
            raise ConfigError(f"viscosity nu must be positive, got {self.nu}")
        if not self.alpha > 0:
            raise ConfigError(f"penalty alpha must be positive, got {self.alpha}")


def params_for(degree, nu, *, penalty_c=6.0, forcing=None, neumann=None,
               advective="full"):
    """FormParams with the default degree-scaled penalty alpha = c * k**2."""
    return FormParams(
        nu=nu,
        alpha=penalty_c * degree * degree,
        forcing=forcing,
        neumann=neumann,
        advective=advective,
    )


# ---------------------------------------------------------------------------
# degree-level tables (independent of mesh topology)
# ---------------------------------------------------------------------------

# facet embeddings into the reference tet take only finitely many forms: each
# is determined by which reference vertex hosts each of the facet's three
# (sorted) vertices.  Encode (i0, i1, i2) as i0*16 + i1*4 + i2.


def _sig3(i0, i1, i2):
    return i0 * 16 + i1 * 4 + i2


def _sig2(i0, i1, i2):
    return i0 * 9 + i1 * 3 + i2


def _embed_codes(embed, ref):
    """Signature codes of embedding rows against reference vertices."""
    weights = np.arange(1, ref.shape[1] + 1, dtype=float)
    idx = np.rint(embed @ weights).astype(np.int64)  # rows of ref -> 0..dim
    if ref.shape[1] == 3:
        return _sig3(idx[..., 0], idx[..., 1], idx[..., 2])
    return _sig2(idx[..., 0], idx[..., 1], idx[..., 2])


class DegreeTables:
    """Reference-element data for one polynomial degree: quadrature rules,
    basis values, and the contracted reference tensors used by the volume
    kernels."""

    def __init__(self, degree):
        k = degree
        self.degree = k
        self.basis3 = simplex_basis(3, k)
        self.basis_p = simplex_basis(3, k - 1)
        self.basis2 = simplex_basis(2, k)
        self.n3 = self.basis3.n_nodes
        self.np3 = self.basis_p.n_nodes
        self.n2 = self.basis2.n_nodes

        rv = quadrature_for(3 * k, "tetrahedron")
        self.qv_pts, self.wv = rv.points, rv.weights
        self.PHI3 = self.basis3.eval_at(self.qv_pts)
        self.GREF3 = self.basis3.grad_at(self.qv_pts)
        self.PHIP = self.basis_p.eval_at(self.qv_pts)
        # contracted reference tensors (indices: ref-dims first, then dofs)
        self.KREF = np.einsum("q,qia,qjb->abij", self.wv, self.GREF3, self.GREF3)
        self.PREF = np.einsum("q,qia,qm->aim", self.wv, self.GREF3, self.PHIP)
        self.NREF = np.einsum("q,qia,qj->aij", self.wv, self.GREF3, self.PHI3)

        rf = quadrature_for(3 * k + 1, "triangle")
        self.qf_pts, self.wf = rf.points, rf.weights
        self.nqf = len(self.wf)
        self.PHI2 = self.basis2.eval_at(self.qf_pts)

        # cell basis traced onto each possible facet embedding
        self.SIG_PHI = np.zeros((64, self.nqf, self.n3))
        self.SIG_GREF = np.zeros((64, self.nqf, self.n3, 3))
        for combo in permutations(range(4), 3):
            V = REF_TET[list(combo)]
            pts = (
                V[0]
                + self.qf_pts[:, 0:1] * (V[1] - V[0])
                + self.qf_pts[:, 1:2] * (V[2] - V[0])
            )
            code = _sig3(*combo)
            self.SIG_PHI[code] = self.basis3.eval_at(pts)
            self.SIG_GREF[code] = self.basis3.grad_at(pts)

        # spatial (parent-triangle) basis traced onto each bottom-facet
        # parametrization, used to read carried data at facet points
        self.SIG2_PHI = np.zeros((27, self.nqf, self.n2))
        for combo in permutations(range(3), 3):
            V = REF_TRI[list(combo)]
            pts = (
                V[0]
                + self.qf_pts[:, 0:1] * (V[1] - V[0])
                + self.qf_pts[:, 1:2] * (V[2] - V[0])
            )
            self.SIG2_PHI[_sig2(*combo)] = self.basis2.eval_at(pts)


@lru_cache(maxsize=8)
def degree_tables(degree):
    return DegreeTables(degree)


# ---------------------------------------------------------------------------
# topology-level tables (shared by every slab extruded from one topology)
# ---------------------------------------------------------------------------


class TopologyTables:
    def __init__(self, topology, degree):
        dtab = degree_tables(degree)
        self.topology = topology
        self.sig = _embed_codes(topology.facet_ref_embed, REF_TET)  # (T, 4)
        self.flpos = topology.facet_lateral_pos[topology.cell_facets]  # (T, 4)
        kinds = topology.facet_kind[topology.cell_facets]
        own = topology.facet_owner[topology.cell_facets] == np.arange(
            topology.num_cells
        )[:, None]
        self.neumann_side = (kinds == FACET_NEUMANN) & own

        def side_of(facets):
            cells = topology.facet_owner[facets]
            local = np.argmax(topology.cell_facets[cells] == facets[:, None], axis=1)
            return cells, local

        self.bottom_cell, self.bottom_local = side_of(topology.tri_bottom_facet)
        self.top_cell, self.top_local = side_of(topology.tri_top_facet)
        self.sig2_bot = _embed_codes(topology.bottom_ref_embed, REF_TRI)
        neu = np.flatnonzero(topology.facet_kind == FACET_NEUMANN)
        self.neumann_facets = neu
        self.neu_cell, self.neu_local = side_of(neu) if len(neu) else (neu, neu)

        # top-facet nodal extraction: cell-basis values at the parent
        # triangle's lattice nodes, giving the exact polynomial trace
        nt = len(self.top_cell)
        nodes2 = dtab.basis2.nodes  # (n2, 2) parent-triangle coords
        self.TOPNODE = np.empty((nt, dtab.n2, dtab.n3))
        cache = {}
        sig2_top = _embed_codes(topology.top_ref_embed, REF_TRI)
        for t in range(nt):
            c, l = self.top_cell[t], self.top_local[t]
            key = (int(sig2_top[t]), int(self.sig[c, l]))
            if key not in cache:
                B = topology.top_ref_embed[t]  # facet param -> parent coords
                M = np.column_stack([B[1] - B[0], B[2] - B[0]])
                st = (nodes2 - B[0]) @ np.linalg.inv(M).T
                E = topology.facet_ref_embed[c, l]  # facet param -> cell ref
                R = E[0] + st[:, 0:1] * (E[1] - E[0]) + st[:, 1:2] * (E[2] - E[0])
                cache[key] = dtab.basis3.eval_at(R)
            self.TOPNODE[t] = cache[key]


@lru_cache(maxsize=64)
def topology_tables(topology, degree):
    return TopologyTables(topology, degree)


# ---------------------------------------------------------------------------
# per-batch geometry
# ---------------------------------------------------------------------------


@dataclass
class CellBatchGeometry:
    """Geometry factors for a batch of affine space-time tets, with per-side
    facet frames (outward normals, areas) and facet embedding signatures."""

    detJ: np.ndarray  # (T,)
    jac: np.ndarray  # (T, 3, 3), columns are edge vectors
    invJ: np.ndarray  # (T, 3, 3)
    sig: np.ndarray  # (T, 4) embedding codes
    normal: np.ndarray  # (T, 4, 3) outward unit space-time normals
    area: np.ndarray  # (T, 4)
    lateral: np.ndarray  # (T, 4) bool
    neumann: np.ndarray  # (T, 4) bool
    flpos: np.ndarray  # (T, 4) lateral facet index or -1
    h: np.ndarray  # (T,) spatial cell length scale

    @property
    def num_cells(self):
        return self.detJ.shape[0]

    @classmethod
    def from_slab(cls, slab, ttab):
        topo = slab.topology
        cf = topo.cell_facets
        own = topo.facet_owner[cf] == np.arange(topo.num_cells)[:, None]
        sign = np.where(own, 1.0, -1.0)
        return cls(
            detJ=slab.cell_det,
            jac=slab.cell_jac,
            invJ=slab.cell_invjac,
            sig=ttab.sig,
            normal=slab.facet_normal[cf] * sign[:, :, None],
            area=slab.facet_area[cf],
            lateral=topo.is_lateral_local,
            neumann=ttab.neumann_side,
            flpos=ttab.flpos,
            h=slab.cell_h,
        )

    @classmethod
    def from_tets(cls, verts, h, *, neumann=True):
        """Standalone batch of tets; every facet is treated as lateral (and,
        if requested, as a Neumann boundary facet so those terms are
        exercised too)."""
        verts = np.asarray(verts, dtype=float)
        if verts.ndim == 2:
            verts = verts[None]
        T = verts.shape[0]
        jac = np.stack([verts[:, i] - verts[:, 0] for i in (1, 2, 3)], axis=2)
        detJ = np.linalg.det(jac)
        if np.any(detJ <= 0):
            raise GeometryError("standalone tets must be positively oriented")
        combos = [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]
        normal = np.empty((T, 4, 3))
        area = np.empty((T, 4))
        centroid = verts.mean(axis=1)
        for l, (i0, i1, i2) in enumerate(combos):
            e1 = verts[:, i1] - verts[:, i0]
            e2 = verts[:, i2] - verts[:, i0]
            raw = np.cross(e1, e2)
            nrm = np.linalg.norm(raw, axis=1)
            area[:, l] = 0.5 * nrm
            n = raw / nrm[:, None]
            fc = (verts[:, i0] + verts[:, i1] + verts[:, i2]) / 3.0
            flip = np.sum(n * (fc - centroid), axis=1) < 0
            n[flip] = -n[flip]
            normal[:, l] = n
        sig = np.tile([_sig3(*c) for c in combos], (T, 1))
        h = np.broadcast_to(np.asarray(h, dtype=float), (T,)).copy()
        return cls(
            detJ=detJ,
            jac=jac,
            invJ=np.linalg.inv(jac),
            sig=sig,
            normal=normal,
            area=area,
            lateral=np.ones((T, 4), dtype=bool),
            neumann=np.full((T, 4), bool(neumann)),
            flpos=np.arange(4 * T, dtype=np.int64).reshape(T, 4),
            h=h,
        )


# ---------------------------------------------------------------------------
# block containers
# ---------------------------------------------------------------------------


class BlockArrays:
    """Batched local blocks: A (T,nw,nw), B/C/D per (cell, local facet),
    cell loads F (T,nw) and trace loads G (T,4,3*n2)."""

    __slots__ = ("A", "B", "C", "D", "F", "G")

    def __init__(self, T, nw, m):
        self.A = np.zeros((T, nw, nw))
        self.B = np.zeros((T, 4, nw, m))
        self.C = np.zeros((T, 4, m, nw))
        self.D = np.zeros((T, 4, m, m))
        self.F = np.zeros((T, nw))
        self.G = np.zeros((T, 4, m))

    def add(self, other):
        self.A += other.A
        self.B += other.B
        self.C += other.C
        self.D += other.D
        self.F += other.F
        self.G += other.G
        return self

    def copy(self):
        out = BlockArrays.__new__(BlockArrays)
        for name in self.__slots__:
            setattr(out, name, getattr(self, name).copy())
        return out


@dataclass
class LocalBlocks:
    """One cell's dense blocks, sliced out of a batch.

    ``pair(test, trial)`` pulls the sub-block for a (test, trial) field pair
    with test in {v, q, vbar, qbar} and trial in {u, p, ubar, pbar}; blocks
    involving a trace field are returned per local facet (leading axis 4).
    """

    n3: int
    np3: int
    n2: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray
    G: np.ndarray

    def _cell_slice(self, field):
        return {"v": slice(0, 2 * self.n3), "u": slice(0, 2 * self.n3),
                "q": slice(2 * self.n3, 2 * self.n3 + self.np3),
                "p": slice(2 * self.n3, 2 * self.n3 + self.np3)}[field]

    def _trace_slice(self, field):
        return {"vbar": slice(0, 2 * self.n2), "ubar": slice(0, 2 * self.n2),
                "qbar": slice(2 * self.n2, 3 * self.n2),
                "pbar": slice(2 * self.n2, 3 * self.n2)}[field]

    def pair(self, test, trial):
        cell_test = test in ("v", "q")
        cell_trial = trial in ("u", "p")
        if cell_test and cell_trial:
            return self.A[self._cell_slice(test), self._cell_slice(trial)]
        if cell_test:
            return self.B[:, self._cell_slice(test), self._trace_slice(trial)]
        if cell_trial:
            return self.C[:, self._trace_slice(test), self._cell_slice(trial)]
        return self.D[:, self._trace_slice(test), self._trace_slice(trial)]


# ---------------------------------------------------------------------------
# the batched assembler
# ---------------------------------------------------------------------------


class BatchAssembler:
    """Evaluates every form over a batch of cells.

    The facet kernels share three primitive contractions (cell x cell,
    cell x trace, trace x trace with a scalar coefficient field at the facet
    quadrature points); each form only chooses coefficients and signs.
    """

    def __init__(self, dtab, geom, ttab=None):
        self.dtab = dtab
        self.geom = geom
        self.ttab = ttab
        T = geom.num_cells
        self.T = T
        self.nw = 2 * dtab.n3 + dtab.np3
        self.m = 3 * dtab.n2

        self.PHI3F = [dtab.SIG_PHI[geom.sig[:, l]] for l in range(4)]
        # n . grad(phi) (spatial) at facet points, per local facet
        self.GN = []
        for l in range(4):
            K = np.einsum(
                "tad,td->ta", geom.invJ[:, :, :2], geom.normal[:, l, :2]
            )
            gref = dtab.SIG_GREF[geom.sig[:, l]]
            self.GN.append(np.einsum("tqia,ta->tqi", gref, K, optimize=True))
        # lateral surface weights (zero on bottom/top facets)
        self.wlat = [
            2.0 * geom.area[:, l, None] * dtab.wf[None, :] * geom.lateral[:, l, None]
            for l in range(4)
        ]
        self.wneu = [
            2.0 * geom.area[:, l, None] * dtab.wf[None, :] * geom.neumann[:, l, None]
            for l in range(4)
        ]
        # physical spatial gradients at volume points (for advective terms)
        self.GPHYS2 = np.einsum(
            "qia,tad->tqid", dtab.GREF3, geom.invJ[:, :, :2], optimize=True
        )

        if ttab is not None:
            wtop = np.zeros((T, 4, dtab.nqf))
            tc, tl = ttab.top_cell, ttab.top_local
            wtop[tc, tl] = 2.0 * geom.area[tc, tl][:, None] * dtab.wf[None, :]
            self.wtop = wtop
        else:
            self.wtop = None

    def zeros(self):
        return BlockArrays(self.T, self.nw, self.m)

    # -- primitive facet contractions --------------------------------------
    def _uu(self, l, cw):
        return np.einsum("tq,tqa,tqb->tab", cw, self.PHI3F[l], self.PHI3F[l],
                         optimize=True)

    def _ut(self, l, cw):
        return np.einsum("tq,tqa,qj->taj", cw, self.PHI3F[l], self.dtab.PHI2,
                         optimize=True)

    def _tt(self, l, cw):
        return np.einsum("tq,qi,qj->tij", cw, self.dtab.PHI2, self.dtab.PHI2,
                         optimize=True)

    def _gu(self, l, cw):
        # rows: normal-derivative dof, cols: value dof
        return np.einsum("tq,tqa,tqb->tab", cw, self.GN[l], self.PHI3F[l],
                         optimize=True)

    def _gt(self, l, cw):
        return np.einsum("tq,tqa,qj->taj", cw, self.GN[l], self.dtab.PHI2,
                         optimize=True)

    # -- index helpers ------------------------------------------------------
    def _su(self, d):
        n3 = self.dtab.n3
        return slice(d * n3, (d + 1) * n3)

    @property
    def _sp(self):
        return slice(2 * self.dtab.n3, self.nw)

    def _tu(self, d):
        n2 = self.dtab.n2
        return slice(d * n2, (d + 1) * n2)

    @property
    def _tp(self):
        return slice(2 * self.dtab.n2, self.m)

    # -- forms ---------------------------------------------------------------
    def add_viscous(self, out, nu, alpha):
        """Broken viscous form: volume gradient term, interior penalty, and
        the two symmetrizing consistency terms on lateral facets."""
        g = self.geom
        G = np.einsum("tad,tbd->tab", g.invJ[:, :, :2], g.invJ[:, :, :2])
        Kv = nu * g.detJ[:, None, None] * np.einsum(
            "tab,abij->tij", G, self.dtab.KREF, optimize=True
        )
        for d in range(2):
            out.A[:, self._su(d), self._su(d)] += Kv
        pen = (nu * alpha / g.h)[:, None]
        for l in range(4):
            w = self.wlat[l]
            cwp = pen * w
            Mp = self._uu(l, cwp)
            Gu = self._gu(l, w)
            Auu = Mp - nu * (Gu + Gu.transpose(0, 2, 1))
            Bul = -self._ut(l, cwp) + nu * self._gt(l, w)
            Dp = self._tt(l, cwp)
            for d in range(2):
                out.A[:, self._su(d), self._su(d)] += Auu
                out.B[:, l, self._su(d), self._tu(d)] += Bul
                out.C[:, l, self._tu(d), self._su(d)] += Bul.transpose(0, 2, 1)
                out.D[:, l, self._tu(d), self._tu(d)] += Dp
        return out

    def add_pressure(self, out):
        """Pressure coupling: -(p, div v) plus the trace term pairing the
        facet pressure with (v - vbar).n, and the transposed constraint
        rows."""
        g = self.geom
        for d in range(2):
            PB = -g.detJ[:, None, None] * np.einsum(
                "ta,aim->tim", g.invJ[:, :, d], self.dtab.PREF, optimize=True
            )
            out.A[:, self._su(d), self._sp] += PB
            out.A[:, self._sp, self._su(d)] += PB.transpose(0, 2, 1)
        for l in range(4):
            for d in range(2):
                cw = self.wlat[l] * self.geom.normal[:, l, d][:, None]
                Mn = self._ut(l, cw)
                Tn = self._tt(l, cw)
                out.B[:, l, self._su(d), self._tp] += Mn
                out.C[:, l, self._tp, self._su(d)] += Mn.transpose(0, 2, 1)
                out.D[:, l, self._tu(d), self._tp] -= Tn
                out.D[:, l, self._tp, self._tu(d)] -= Tn
        return out

    def add_time(self, out):
        """Time-stepping part of the advective form: the -(u, dv/dt) volume
        term and the upwind mass term on slab-top facets."""
        g = self.geom
        N = -g.detJ[:, None, None] * np.einsum(
            "ta,aij->tij", g.invJ[:, :, 2], self.dtab.NREF, optimize=True
        )
        for d in range(2):
            out.A[:, self._su(d), self._su(d)] += N
        if self.wtop is not None:
            for l in range(4):
                if not np.any(self.wtop[:, l]):
                    continue
                Mt = self._uu(l, self.wtop[:, l])
                for d in range(2):
                    out.A[:, self._su(d), self._su(d)] += Mt
        return out

    def _facet_velocity(self, l, wcell):
        return np.einsum("tqb,tdb->tqd", self.PHI3F[l], wcell, optimize=True)

    def _trace_velocity(self, l, svals):
        sv = svals[self.geom.flpos[:, l]]  # (T, 3*n2); masked rows are junk
        n2 = self.dtab.n2
        return np.stack(
            [sv[:, d * n2:(d + 1) * n2] @ self.dtab.PHI2.T for d in range(2)],
            axis=2,
        )  # (T, nqf, 2)

    def _volume_advection(self, wcell):
        """M3[a,b] = -int (w . grad phi_a) phi_b over each cell."""
        d = self.dtab
        WQ = np.einsum("qb,tdb->tqd", d.PHI3, wcell, optimize=True)
        S = np.einsum("tqd,tqad->tqa", WQ, self.GPHYS2, optimize=True)
        return -self.geom.detJ[:, None, None] * np.einsum(
            "tqa,q,qb->tab", S, d.wv, d.PHI3, optimize=True
        )

    def add_advective_upwind(self, out, wcell, svals):
        """Mesh-plus-material upwind advection: the lateral-facet flux with
        the inflow switch, the volume transport terms, the Neumann outflow
        term, and nothing else (conservative pieces only, minus the time
        terms which live in add_time)."""
        g = self.geom
        M3 = self._volume_advection(wcell)
        for d in range(2):
            out.A[:, self._su(d), self._su(d)] += M3
        for l in range(4):
            wF = self._facet_velocity(l, wcell)
            beta = g.normal[:, l, 2][:, None] + np.einsum(
                "tqd,td->tq", wF, g.normal[:, l, :2]
            )
            lam = beta < 0.0
            fu = np.where(lam, 0.0, beta) * self.wlat[l]
            fb = np.where(lam, beta, 0.0) * self.wlat[l]
            Mu = self._uu(l, fu)
            Mub = self._ut(l, fb)
            Cu = self._ut(l, fu)
            Db = self._tt(l, fb)
            for d in range(2):
                out.A[:, self._su(d), self._su(d)] += Mu
                out.B[:, l, self._su(d), self._tu(d)] += Mub
                out.C[:, l, self._tu(d), self._su(d)] -= Cu.transpose(0, 2, 1)
                out.D[:, l, self._tu(d), self._tu(d)] -= Db
            if np.any(g.neumann[:, l]):
                tF = self._trace_velocity(l, svals)
                tbeta = g.normal[:, l, 2][:, None] + np.einsum(
                    "tqd,td->tq", tF, g.normal[:, l, :2]
                )
                c5 = np.maximum(tbeta, 0.0) * self.wneu[l]
                M5 = self._tt(l, c5)
                for d in range(2):
                    out.D[:, l, self._tu(d), self._tu(d)] += M5
        return out

    def add_energy_stab(self, out, wcell, svals):
        """Skew-symmetrizing correction: half the advective flux moved back
        into the volume, its facet counterweight, and the matching Neumann
        term.  Adding this to the conservative form yields the full form."""
        g = self.geom
        M3 = self._volume_advection(wcell)
        M4 = -0.5 * (M3 + M3.transpose(0, 2, 1))
        for d in range(2):
            out.A[:, self._su(d), self._su(d)] += M4
        for l in range(4):
            wF = self._facet_velocity(l, wcell)
            wn = np.einsum("tqd,td->tq", wF, g.normal[:, l, :2])
            Mu = self._uu(l, -0.5 * wn * self.wlat[l])
            Dt = self._tt(l, 0.5 * wn * self.wlat[l])
            for d in range(2):
                out.A[:, self._su(d), self._su(d)] += Mu
                out.D[:, l, self._tu(d), self._tu(d)] += Dt
            if np.any(g.neumann[:, l]):
                tF = self._trace_velocity(l, svals)
                tn = np.einsum("tqd,td->tq", tF, g.normal[:, l, :2])
                D6 = self._tt(l, -0.5 * tn * self.wneu[l])
                for d in range(2):
                    out.D[:, l, self._tu(d), self._tu(d)] += D6
        return out


# ---------------------------------------------------------------------------
# slab-level assembler used by the solver
# ---------------------------------------------------------------------------


class SlabAssembler:
    """Bundles degree, topology and slab geometry, caches the static part
    (viscous + pressure + time terms), and produces the per-iteration
    advective blocks."""

    def __init__(self, slab, spaces, params):
        if params.advective == "conservative" and spaces.variant.value == "edg":
            raise ConfigError(
                "conservative advective form requires facet-local trace "
                "spaces; it is not available with the edg variant"
            )
        self.slab = slab
        self.spaces = spaces
        self.params = params
        self.dtab = degree_tables(spaces.degree)
        self.ttab = topology_tables(slab.topology, spaces.degree)
        geom = CellBatchGeometry.from_slab(slab, self.ttab)
        self.batch = BatchAssembler(self.dtab, geom, self.ttab)
        self._static = None

    @property
    def geom(self):
        return self.batch.geom

    def static_blocks(self):
        """Everything that does not change across Picard iterations."""
        if self._static is None:
            out = self.batch.zeros()
            self.batch.add_viscous(out, self.params.nu, self.params.alpha)
            self.batch.add_pressure(out)
            if self.params.advective != "none":
                self.batch.add_time(out)
            self._static = out
        return self._static

    def dynamic_blocks(self, wcell, svals):
        """Advective terms frozen at the given iterate (cell coefficients
        (T,2,n3) and facet slot values (FL, 3*n2))."""
        if self.params.advective == "none":
            return None
        out = self.batch.zeros()
        self.batch.add_advective_upwind(out, wcell, svals)
        if self.params.advective == "full":
            self.batch.add_energy_stab(out, wcell, svals)
        return out

    def iteration_blocks(self, wcell, svals):
        out = self.static_blocks().copy()
        dyn = self.dynamic_blocks(wcell, svals)
        if dyn is not None:
            out.add(dyn)
        return out

    def cell(self, index):
        return CellContext(self.batch, index, self)

    # -- loads ---------------------------------------------------------------
    def load_blocks(self, u_minus, params=None):
        """Cell loads (forcing + carried bottom data) and Neumann trace
        loads for this slab."""
        if params is None:
            params = self.params
        if u_minus is None and params.advective != "none":
            raise SolverError(
                f"slab {self.slab.index}: no carried velocity data for the "
                "bottom facets (u_minus missing)"
            )
        d, g, topo = self.dtab, self.geom, self.slab.topology
        out = self.batch.zeros()

        if params.forcing is not None:
            v0 = self.slab.coords[topo.cells[:, 0]]
            X = v0[:, None, :] + np.einsum("qa,tda->tqd", d.qv_pts, g.jac)
            fv = np.asarray(
                params.forcing(X.reshape(-1, 3)), dtype=float
            ).reshape(self.batch.T, -1, 2)
            for dd in range(2):
                out.F[:, self.batch._su(dd)] += g.detJ[:, None] * np.einsum(
                    "tq,q,qa->ta", fv[:, :, dd], d.wv, d.PHI3, optimize=True
                )

        if params.advective != "none":
            bc, bl = self.ttab.bottom_cell, self.ttab.bottom_local
            cwb = 2.0 * g.area[bc, bl][:, None] * d.wf[None, :]
            um = self._bottom_values(u_minus)
            PHIB = d.SIG_PHI[g.sig[bc, bl]]
            for dd in range(2):
                out.F[bc, self.batch._su(dd)] += np.einsum(
                    "tq,tqa->ta", cwb * um[:, :, dd], PHIB, optimize=True
                )

        neu = self.ttab.neumann_facets
        if len(neu) and params.neumann is not None:
            pts = self.slab.facet_points(neu, d.qf_pts)
            gv = np.asarray(
                params.neumann(pts.reshape(-1, 3)), dtype=float
            ).reshape(len(neu), -1, 2)
            cw = 2.0 * self.slab.facet_area[neu][:, None] * d.wf[None, :]
            nc, nl = self.ttab.neu_cell, self.ttab.neu_local
            for dd in range(2):
                out.G[nc, nl, self.batch._tu(dd)] -= np.einsum(
                    "nq,qj->nj", cw * gv[:, :, dd], d.PHI2
                )
        return out

    def _bottom_values(self, u_minus):
        """Carried velocity at the bottom-facet quadrature points, either
        from a spatial nodal field on the parent triangles or a callable."""
        d = self.dtab
        if callable(u_minus):
            pts = self.slab.facet_points(
                self.slab.topology.tri_bottom_facet, d.qf_pts
            )
            return np.asarray(u_minus(pts.reshape(-1, 3)), dtype=float).reshape(
                pts.shape[0], -1, 2
            )
        coeffs = np.asarray(u_minus.coeffs, dtype=float)  # (nt, 2, n2)
        PHI = d.SIG2_PHI[self.ttab.sig2_bot]  # (nt, nqf, n2)
        return np.einsum("tqi,tdi->tqd", PHI, coeffs, optimize=True)

    def extract_top_coeffs(self, ucell):
        """Exact nodal trace of the cell velocity on the slab-top facets,
        as parent-triangle coefficients (nt, 2, n2) for the next slab."""
        return np.einsum(
            "tia,tda->tdi", self.ttab.TOPNODE, ucell[self.ttab.top_cell],
            optimize=True,
        )


# ---------------------------------------------------------------------------
# per-cell views (oracle seam)
# ---------------------------------------------------------------------------


@dataclass
class CellContext:
    """Handle to one cell of a batch, for per-cell form evaluation.

    ``assembler`` is set when the batch came from a slab, enabling the load
    assembly (which needs bottom facets and physical coordinates)."""

    batch: BatchAssembler
    index: int
    assembler: object = None


def standalone_tets(verts, degree, h=1.0, *, neumann=True):
    """BatchAssembler over free-floating tets (all facets lateral)."""
    geom = CellBatchGeometry.from_tets(verts, h, neumann=neumann)
    return BatchAssembler(degree_tables(degree), geom)


def _slice_cell(batch, out, c):
    d = batch.dtab
    return LocalBlocks(
        n3=d.n3, np3=d.np3, n2=d.n2,
        A=out.A[c], B=out.B[c], C=out.C[c], D=out.D[c], F=out.F[c], G=out.G[c],
    )


def assemble_viscous(cell, spaces, params):
    out = cell.batch.zeros()
    cell.batch.add_viscous(out, params.nu, params.alpha)
    return _slice_cell(cell.batch, out, cell.index)


def assemble_pressure(cell, spaces):
    out = cell.batch.zeros()
    cell.batch.add_pressure(out)
    return _slice_cell(cell.batch, out, cell.index)


def assemble_advective_conservative(cell, spaces, params, w_field, wbar_field):
    out = cell.batch.zeros()
    cell.batch.add_time(out)
    cell.batch.add_advective_upwind(out, w_field, wbar_field)
    return _slice_cell(cell.batch, out, cell.index)


def assemble_energy_stab(cell, spaces, params, w_field, wbar_field):
    out = cell.batch.zeros()
    cell.batch.add_energy_stab(out, w_field, wbar_field)
    return _slice_cell(cell.batch, out, cell.index)


def assemble_advective_full(cell, spaces, params, w_field, wbar_field):
    out = cell.batch.zeros()
    cell.batch.add_time(out)
    cell.batch.add_advective_upwind(out, w_field, wbar_field)
    cell.batch.add_energy_stab(out, w_field, wbar_field)
    return _slice_cell(cell.batch, out, cell.index)


def assemble_load(cell, spaces, params, u_minus):
    """One cell's load vectors; needs a slab-backed cell (bottom-facet data
    lives on the slab, not on free-floating tets)."""
    if cell.assembler is None:
        raise SolverError("load assembly needs a slab-backed cell context")
    out = cell.assembler.load_blocks(u_minus, params)
    return _slice_cell(cell.batch, out, cell.index)
