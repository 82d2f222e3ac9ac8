"""Measured quantities of a computed flow: space-time errors, divergence and
normal-jump norms, kinetic energies, per-cell momentum balance, boundary
forces, and trace DOF accounting.

Everything here is post-processing over immutable slab solutions.  The norms
use their own quadrature (degree 2k+4) rather than the assembly rules: the
divergence and jump claims are statements about the polynomial fields
themselves and must not be artifacts of an undersized rule.

Conventions: space-time points are (x1, x2, t); facet normals are unit
space-time vectors whose first two components n_bar are the spatial part
(not renormalized).  A facet integral is 2 * area * sum(w_q f_q) since the
reference-triangle weights sum to 1/2.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import permutations

import numpy as np

from .errors import ConfigError
from .forms import CellBatchGeometry, _sig2, _sig3, degree_tables, topology_tables
from .meshing import REF_TET, REF_TRI
from .quadrature import quadrature_for
from .spaces import build_spaces, simplex_basis

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# reference tables at diagnostic quadrature degree
# ---------------------------------------------------------------------------


class DiagnosticTables:
    """Basis evaluations at the (degree 2k+4) diagnostic rules, including
    the cell basis traced onto every facet embedding signature."""

    def __init__(self, degree):
        k = degree
        self.degree = k
        basis3 = simplex_basis(3, k)
        basis_p = simplex_basis(3, k - 1)
        basis2 = simplex_basis(2, k)
        self.n3, self.np3, self.n2 = (
            basis3.n_nodes, basis_p.n_nodes, basis2.n_nodes,
        )

        rv = quadrature_for(2 * k + 4, "tetrahedron")
        self.qv_pts, self.wv = rv.points, rv.weights
        self.PHI3 = basis3.eval_at(self.qv_pts)
        self.GREF3 = basis3.grad_at(self.qv_pts)
        self.PHIP = basis_p.eval_at(self.qv_pts)

        rf = quadrature_for(2 * k + 4, "triangle")
        self.qf_pts, self.wf = rf.points, rf.weights
        nqf = len(self.wf)
        self.PHI2 = basis2.eval_at(self.qf_pts)

        self.SIG_PHI = np.zeros((64, nqf, self.n3))
        self.SIG_GREF = np.zeros((64, nqf, self.n3, 3))
        self.SIG_PHIP = np.zeros((64, nqf, self.np3))
        for combo in permutations(range(4), 3):
            V = REF_TET[list(combo)]
            pts = (
                V[0]
                + self.qf_pts[:, 0:1] * (V[1] - V[0])
                + self.qf_pts[:, 1:2] * (V[2] - V[0])
            )
            code = _sig3(*combo)
            self.SIG_PHI[code] = basis3.eval_at(pts)
            self.SIG_GREF[code] = basis3.grad_at(pts)
            self.SIG_PHIP[code] = basis_p.eval_at(pts)

        self.SIG2_PHI = np.zeros((27, nqf, self.n2))
        for combo in permutations(range(3), 3):
            V = REF_TRI[list(combo)]
            pts = (
                V[0]
                + self.qf_pts[:, 0:1] * (V[1] - V[0])
                + self.qf_pts[:, 1:2] * (V[2] - V[0])
            )
            self.SIG2_PHI[_sig2(*combo)] = basis2.eval_at(pts)


@lru_cache(maxsize=8)
def diagnostic_tables(degree):
    return DiagnosticTables(degree)


class SlabEvaluator:
    """Shared geometry/tables for evaluating one slab's fields.

    ``tables`` defaults to the diagnostic rules; the momentum balance passes
    the assembly tables instead so the upwind switch is sampled at exactly
    the points that defined the discrete equations."""

    def __init__(self, slab, spaces, tables=None):
        self.slab = slab
        self.spaces = spaces
        self.d = tables if tables is not None else diagnostic_tables(
            spaces.degree
        )
        self.ttab = topology_tables(slab.topology, spaces.degree)
        self.geom = CellBatchGeometry.from_slab(slab, self.ttab)

    def volume_points(self):
        topo = self.slab.topology
        v0 = self.slab.coords[topo.cells[:, 0]]
        return v0[:, None, :] + np.einsum(
            "qa,tda->tqd", self.d.qv_pts, self.geom.jac
        )

    def u_volume(self, sol):
        return np.einsum("qi,tdi->tqd", self.d.PHI3, sol.ucell)

    def p_volume(self, sol):
        return sol.pcell @ self.d.PHIP.T

    def du_volume(self, sol, d_comp, a_spatial):
        """Derivative of velocity component d along axis a at volume points,
        contracted term-by-term to avoid a (T, nq, n, 3) intermediate."""
        out = 0.0
        for b in range(3):
            out = out + (sol.ucell[:, d_comp] @ self.d.GREF3[:, :, b].T) \
                * self.geom.invJ[:, b, a_spatial, None]
        return out

    def facet_u(self, sol, l):
        """Cell-side velocity at facet quadrature points of local facet l."""
        PHIS = self.d.SIG_PHI[self.geom.sig[:, l]]  # (T, nq, n3)
        return np.einsum("tqi,tdi->tqd", PHIS, sol.ucell)

    def facet_grad_u(self, sol, l):
        """Cell-side spatial velocity gradient (T, nq, 2 comp, 2 axis)."""
        GS = self.d.SIG_GREF[self.geom.sig[:, l]]  # (T, nq, n3, 3)
        gphys = np.einsum("tqib,tba->tqia", GS, self.geom.invJ[:, :, :2])
        return np.einsum("tqia,tdi->tqda", gphys, sol.ucell)

    def lateral_trace(self, sol):
        """Trace values at facet points for every lateral facet:
        (ubar (FL, nq, 2), pbar (FL, nq))."""
        n2 = self.d.n2
        sv = sol.slot_values
        ubar = np.einsum(
            "qi,fdi->fqd", self.d.PHI2,
            sv[:, : 2 * n2].reshape(len(sv), 2, n2),
        )
        pbar = sv[:, 2 * n2:] @ self.d.PHI2.T
        return ubar, pbar

    def bottom_u_minus(self, u_minus):
        """Carried velocity at bottom-facet quadrature points (nt, nq, 2)."""
        if callable(u_minus):
            pts = self.slab.facet_points(
                self.slab.topology.tri_bottom_facet, self.d.qf_pts
            )
            return np.asarray(u_minus(pts.reshape(-1, 3)), dtype=float).reshape(
                pts.shape[0], -1, 2
            )
        PHI = self.d.SIG2_PHI[self.ttab.sig2_bot]
        return np.einsum("tqi,tdi->tqd", PHI, u_minus.coeffs)


# ---------------------------------------------------------------------------
# norms and errors
# ---------------------------------------------------------------------------


@dataclass
class NormReport:
    """Space-time norms accumulated over a run.

    ``slab_energies[n]`` is the kinetic energy carried out of slab n, i.e.
    the spatial integral of |u_h|^2 at the slab's top time level.
    """

    velocity_l2_error: float = 0.0
    pressure_l2_error: float = 0.0
    divergence_l2: float = 0.0
    normal_jump_l2: float = 0.0
    gradient_l2: float = 0.0
    slab_energies: list = field(default_factory=list)


def _divergence_sq(ev, sol):
    div = ev.du_volume(sol, 0, 0) + ev.du_volume(sol, 1, 1)
    return float(np.einsum("t,q,tq->", ev.geom.detJ, ev.d.wv, div**2))


def _gradient_sq(ev, sol):
    total = 0.0
    for d in range(2):
        for a in range(2):
            du = ev.du_volume(sol, d, a)
            total += np.einsum("t,q,tq->", ev.geom.detJ, ev.d.wv, du**2)
    return float(total)


def _jump_sq(ev, sol):
    topo = ev.slab.topology
    FL = topo.num_lateral_facets
    nq = len(ev.d.wf)
    un_sum = np.zeros((FL, nq))
    nsides = np.zeros(FL, dtype=np.int64)
    for l in range(4):
        lat = ev.geom.lateral[:, l]
        if not np.any(lat):
            continue
        uf = ev.facet_u(sol, l)[lat]
        nbar = ev.geom.normal[lat, l, :2]
        fpos = ev.geom.flpos[lat, l]
        np.add.at(un_sum, fpos, np.einsum("tqd,td->tq", uf, nbar))
        np.add.at(nsides, fpos, 1)
    ubar, _ = ev.lateral_trace(sol)
    single = nsides == 1
    if np.any(single):
        owner_n = ev.slab.facet_normal[topo.lateral_ids[single], :2]
        un_sum[single] -= np.einsum("fqd,fd->fq", ubar[single], owner_n)
    areas = ev.slab.facet_area[topo.lateral_ids]
    return float(
        np.einsum("f,q,fq->", 2.0 * areas, ev.d.wf, un_sum**2)
    )


def kinetic_energy_top(slab, spaces, sol, ev=None):
    """Spatial integral of |u_h|^2 over the slab's top time level."""
    ev = ev or SlabEvaluator(slab, spaces)
    tc, tl = ev.ttab.top_cell, ev.ttab.top_local
    PHIS = ev.d.SIG_PHI[ev.geom.sig[tc, tl]]
    u = np.einsum("tqi,tdi->tqd", PHIS, sol.ucell[tc])
    areas = ev.geom.area[tc, tl]
    return float(np.einsum("t,q,tqd->", 2.0 * areas, ev.d.wf, u**2))


def kinetic_energy_bottom(slab, spaces, u_minus, ev=None):
    """Spatial integral of |u^-|^2 over the slab's bottom time level."""
    ev = ev or SlabEvaluator(slab, spaces)
    um = ev.bottom_u_minus(u_minus)
    bc, bl = ev.ttab.bottom_cell, ev.ttab.bottom_local
    areas = ev.geom.area[bc, bl]
    return float(np.einsum("t,q,tqd->", 2.0 * areas, ev.d.wf, um**2))


def compute_field_errors(slabs, solutions, spaces, exact_u, exact_p):
    """Space-time L2 errors plus the constraint norms, over all slabs."""
    vel2 = p2 = div2 = jump2 = grad2 = 0.0
    energies = []
    for slab, sol in zip(slabs, solutions):
        ev = SlabEvaluator(slab, spaces)
        X = ev.volume_points().reshape(-1, 3)
        w = ev.geom.detJ[:, None] * ev.d.wv[None, :]
        du = ev.u_volume(sol) - np.asarray(
            exact_u(X), dtype=float
        ).reshape(ev.geom.num_cells, -1, 2)
        vel2 += float(np.einsum("tq,tqd->", w, du**2))
        dp = ev.p_volume(sol) - np.asarray(
            exact_p(X), dtype=float
        ).reshape(ev.geom.num_cells, -1)
        p2 += float(np.einsum("tq,tq->", w, dp**2))
        div2 += _divergence_sq(ev, sol)
        jump2 += _jump_sq(ev, sol)
        grad2 += _gradient_sq(ev, sol)
        energies.append(kinetic_energy_top(slab, spaces, sol, ev))
    return NormReport(
        velocity_l2_error=np.sqrt(vel2),
        pressure_l2_error=np.sqrt(p2),
        divergence_l2=np.sqrt(div2),
        normal_jump_l2=np.sqrt(jump2),
        gradient_l2=np.sqrt(grad2),
        slab_energies=energies,
    )


def compute_divergence_norm(slabs, solutions, spaces):
    """L2 norm of the spatial velocity divergence over all slabs."""
    return float(np.sqrt(sum(
        _divergence_sq(SlabEvaluator(s, spaces), sol)
        for s, sol in zip(slabs, solutions)
    )))


def compute_gradient_norm(slabs, solutions, spaces):
    """L2 norm of the spatial velocity gradient (normalization scale)."""
    return float(np.sqrt(sum(
        _gradient_sq(SlabEvaluator(s, spaces), sol)
        for s, sol in zip(slabs, solutions)
    )))


def compute_normal_jump_norm(slabs, solutions, spaces):
    """Normal-velocity jump norm over all lateral facets of all slabs.

    Interior facets measure the two-sided jump of u.n_bar; boundary facets
    measure (u - ubar).n_bar against the trace field.
    """
    return float(np.sqrt(sum(
        _jump_sq(SlabEvaluator(s, spaces), sol)
        for s, sol in zip(slabs, solutions)
    )))


# ---------------------------------------------------------------------------
# energy ledger
# ---------------------------------------------------------------------------


@dataclass
class EnergyRow:
    slab: int
    energy_bottom: float
    energy_top: float

    @property
    def gain(self):
        return self.energy_top - self.energy_bottom


def energy_ledger(slabs, solutions, spaces, carried):
    """Per-slab kinetic energy balance.

    ``carried[n]`` is the velocity data entering slab n (SpatialField or
    callable).  The discrete stability statement is that with no forcing and
    homogeneous boundary data each row satisfies energy_top <= energy_bottom
    up to roundoff; callers assert with their own tolerance.
    """
    rows = []
    for slab, sol, um in zip(slabs, solutions, carried):
        ev = SlabEvaluator(slab, spaces)
        rows.append(EnergyRow(
            slab=slab.index,
            energy_bottom=kinetic_energy_bottom(slab, spaces, um, ev),
            energy_top=kinetic_energy_top(slab, spaces, sol, ev),
        ))
    return rows


# ---------------------------------------------------------------------------
# momentum balance
# ---------------------------------------------------------------------------


@dataclass
class MomentumReport:
    residual: np.ndarray  # (T, 2) per-cell space-time balance defect
    flux_mismatch: float  # max facet moment of the two-sided flux defect

    @property
    def max_residual(self):
        return float(np.abs(self.residual).max())


def _sigma_hat(ev, sol, ubar, pbar, nu, alpha, l):
    """Numerical momentum flux through local facet l, cell side (T, nq, 2).

    sigma_hat = (n_t + u.n_bar) (u + lam (ubar - u)) + pbar n_bar
                - nu grad(u) n_bar + (nu alpha / h) (u - ubar)
    with lam the inflow switch on the advective speed; this is exactly the
    facet coupling seen by a constant cell test function.
    """
    geom = ev.geom
    lat = geom.lateral[:, l]
    u = ev.facet_u(sol, l)
    gu = ev.facet_grad_u(sol, l)
    n = geom.normal[:, l]  # (T, 3) space-time outward
    nbar = n[:, :2]
    fpos = np.where(lat, geom.flpos[:, l], 0)
    ub = ubar[fpos]
    pb = pbar[fpos]
    speed = n[:, 2][:, None] + np.einsum("tqd,td->tq", u, nbar)
    lam = (speed < 0.0).astype(float)
    upwind = u + lam[:, :, None] * (ub - u)
    visc = np.einsum("tqda,ta->tqd", gu, nbar)
    pen = (nu * alpha / geom.h)[:, None, None] * (u - ub)
    sig = (
        speed[:, :, None] * upwind
        + pb[:, :, None] * nbar[:, None, :]
        - nu * visc
        + pen
    )
    return sig, lat


def momentum_balance(slab, spaces, params, sol, u_minus):
    """Per-cell space-time momentum balance of a conservative-form solution.

    The residual integrates the carried data in through the slab bottom, the
    solution out through the top, the forcing over the cell, and the
    numerical flux through the lateral facets; it vanishes identically for
    the facet-discontinuous variants run with the conservative form.  Also
    reports the worst two-sided flux disagreement on interior facets (zero
    only when both traces are facet-local).

    Evaluation deliberately reuses the assembly quadrature: the upwind
    switch makes the flux only piecewise smooth, so the balance is exact at
    the rule that defined the equations, not at an arbitrary finer one."""
    ev = SlabEvaluator(slab, spaces, degree_tables(spaces.degree))
    geom, d, ttab = ev.geom, ev.d, ev.ttab
    T = geom.num_cells
    R = np.zeros((T, 2))

    if params.forcing is not None:
        X = ev.volume_points().reshape(-1, 3)
        fv = np.asarray(params.forcing(X), dtype=float).reshape(T, -1, 2)
        R -= np.einsum("t,q,tqd->td", geom.detJ, d.wv, fv)

    tc, tl = ttab.top_cell, ttab.top_local
    PHIS = d.SIG_PHI[geom.sig[tc, tl]]
    utop = np.einsum("tqi,tdi->tqd", PHIS, sol.ucell[tc])
    R[tc] += np.einsum("t,q,tqd->td", 2.0 * geom.area[tc, tl], d.wf, utop)

    bc, bl = ttab.bottom_cell, ttab.bottom_local
    um = ev.bottom_u_minus(u_minus)
    R[bc] -= np.einsum("t,q,tqd->td", 2.0 * geom.area[bc, bl], d.wf, um)

    topo = slab.topology
    FL = topo.num_lateral_facets
    moments = np.zeros((FL, d.n2, 2))
    nsides = np.zeros(FL, dtype=np.int64)
    ubar, pbar = ev.lateral_trace(sol)
    for l in range(4):
        sig, lat = _sigma_hat(ev, sol, ubar, pbar, params.nu, params.alpha, l)
        cw = 2.0 * geom.area[:, l]
        R += np.where(
            lat[:, None], np.einsum("t,q,tqd->td", cw, d.wf, sig), 0.0
        )
        fpos = geom.flpos[lat, l]
        # facet-polynomial moments of the outward flux: the flux is
        # single-valued only weakly, so the two-sided defect is measured
        # against the facet space, not pointwise
        np.add.at(
            moments, fpos,
            np.einsum("t,q,qj,tqd->tjd", cw[lat], d.wf, d.PHI2, sig[lat]),
        )
        np.add.at(nsides, fpos, 1)

    interior = nsides == 2
    mismatch = (
        float(np.abs(moments[interior]).max()) if np.any(interior) else 0.0
    )
    return MomentumReport(residual=R, flux_mismatch=mismatch)


# ---------------------------------------------------------------------------
# boundary forces
# ---------------------------------------------------------------------------


@dataclass
class ForceSample:
    """Per-slab boundary force integrals (1/(r*dt)) * int (sigma n).e_j with
    sigma = p I - nu grad(u) and n the unit spatial normal pointing out of
    the fluid.  ``along_x1``/``along_x2`` are the raw axis components; the
    naming of lift and drag is the caller's convention choice."""

    slab: int
    along_x1: float
    along_x2: float


def compute_forces(slab, spaces, params, sol, facet_ids, radius, dt):
    """Integrate the traction over the given lateral boundary facets.

    The space-time surface integral of (sigma n_bar) with the facet's actual
    area measure reproduces the time integral of the spatial traction over
    the moving boundary curve, because the spatial normal times the spatial
    arc length element is exactly the spatial part of the space-time normal
    times the facet area element."""
    facet_ids = np.asarray(facet_ids, dtype=np.int64)
    if facet_ids.size == 0:
        raise ConfigError("force computation needs a nonempty facet set")
    ev = SlabEvaluator(slab, spaces)
    topo = slab.topology
    own = topo.facet_owner[facet_ids]
    local = np.argmax(topo.cell_facets[own] == facet_ids[:, None], axis=1)
    d = ev.d
    sig = ev.geom.sig[own, local]
    gphys = np.einsum(
        "fqib,fba->fqia", d.SIG_GREF[sig], ev.geom.invJ[own][:, :, :2]
    )
    gu = np.einsum("fqia,fdi->fqda", gphys, sol.ucell[own])
    p = np.einsum("fqi,fi->fq", d.SIG_PHIP[sig], sol.pcell[own])
    nbar = ev.geom.normal[own, local, :2]
    traction = p[:, :, None] * nbar[:, None, :] - params.nu * np.einsum(
        "fqda,fa->fqd", gu, nbar
    )
    areas = ev.geom.area[own, local]
    total = np.einsum("f,q,fqd->d", 2.0 * areas, d.wf, traction)
    scale = 1.0 / (radius * dt)
    return ForceSample(
        slab=slab.index,
        along_x1=float(scale * total[0]),
        along_x2=float(scale * total[1]),
    )


@dataclass
class ForceReport:
    """Accumulated per-slab force samples with running extrema."""

    samples: list = field(default_factory=list)

    def add(self, sample):
        self.samples.append(sample)

    def extrema(self):
        x1 = [s.along_x1 for s in self.samples]
        x2 = [s.along_x2 for s in self.samples]
        return {
            "min_x1": min(x1), "max_x1": max(x1),
            "min_x2": min(x2), "max_x2": max(x2),
        }


# ---------------------------------------------------------------------------
# trace DOF accounting
# ---------------------------------------------------------------------------


def spatial_complex_counts(topology):
    """(V, E, T) of the spatial triangulation under a slab topology."""
    tris = topology.mesh.triangles
    edges = {
        tuple(sorted((int(t[i]), int(t[j]))))
        for t in tris
        for i, j in ((0, 1), (1, 2), (2, 0))
    }
    return topology.num_spatial_vertices, len(edges), len(tris)


def trace_dof_formula(variant, k, V, E, T):
    """Closed-form trace DOF count from the spatial complex.

    One slab's lateral facet complex has 2V vertices (two time levels),
    3E + V edges (bottom + top + one quad diagonal per spatial edge, plus
    one vertical edge per vertex; prism-internal facets reuse existing
    edges), and 2(E + T) triangles (two per spatial edge, two internal per
    prism)."""
    n2 = (k + 1) * (k + 2) // 2
    Fc = 2 * (E + T)
    Ec = 3 * E + V
    Vc = 2 * V
    nodes = Vc + (k - 1) * Ec + ((k - 1) * (k - 2) // 2) * Fc
    name = str(getattr(variant, "value", variant)).lower()
    if name == "hdg":
        return 3 * n2 * Fc
    if name == "ehdg":
        return 2 * nodes + n2 * Fc
    if name == "edg":
        return 3 * nodes
    raise ConfigError(f"unknown variant {variant!r}")


@dataclass
class DofReport:
    spatial: tuple  # (V, E, T)
    counts: dict  # variant -> built trace DOF total
    formulas: dict  # variant -> closed-form count


def dof_report(topology, k):
    """Trace DOF totals for all variants, measured and closed-form."""
    V, E, T = spatial_complex_counts(topology)
    counts, formulas = {}, {}
    for name in ("hdg", "ehdg", "edg"):
        spaces = build_spaces(topology, name, k)
        counts[name] = 2 * spaces.trace_u.n_keys + spaces.trace_p.n_keys
        formulas[name] = trace_dof_formula(name, k, V, E, T)
    return DofReport(spatial=(V, E, T), counts=counts, formulas=formulas)
