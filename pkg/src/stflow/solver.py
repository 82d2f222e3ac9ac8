"""Global slab systems: static condensation, sparse solve, Picard loop.

Per slab the unknowns split into cell coefficients W (block-diagonal
couplings A) and trace coefficients, giving

    [A  B] [W ]   [F]
    [C  D] [Wbar] [G]

which is solved by eliminating W cell-wise:

    (D - C A^-1 B) Wbar = G - C A^-1 F,      W = A^-1 (F - B Wbar).

Every per-cell block couples the cell's four facet slot groups, so the
condensed matrix is assembled from dense (4m x 4m) cell contributions with a
precomputed COO -> CSR position map (the sparsity pattern depends only on
topology, variant and degree).

Pressure gauge.  Because the divergence constraint involves only spatial
derivatives, a slab with no Neumann facet admits pressure null modes beyond
the usual constant: any polynomial of the slab time coordinate (paired with
its elementwise L2 projection onto the cell pressure space) is invisible to
the momentum residual, and with facet-local trace pressures there is one
additional mode that flips sign with the facet's orientation in time (each
lateral facet has one constant-time edge; the mode is a polynomial in time
whose sign follows whether the facet's lone off-level vertex sits on the
top or the bottom).  These candidates are evaluated cheaply per slab; the
actual null directions are detected from the condensed matrix and removed
with a bordered (Lagrange-multiplier) solve, which commutes exactly with
static condensation because it touches only the trace block.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NonConvergenceError, SolverError
from .forms import SlabAssembler, degree_tables
from .meshing import FACET_NEUMANN

log = logging.getLogger(__name__)

ZERO_DENOM_FLOOR = 1e-14


@dataclass
class PicardConfig:
    tol: float = 1e-12
    max_iterations: int = 50

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError(f"tolerance must be positive, got {self.tol}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")


@dataclass
class SlabSolution:
    """Converged (or single-solve) coefficients for one slab."""

    ucell: np.ndarray  # (T, 2, n3)
    pcell: np.ndarray  # (T, np3)
    trace: np.ndarray  # (n_trace,) free trace vector [interleaved u, then p]
    slot_values: np.ndarray  # (FL, 3*n2) full trace values incl. Dirichlet
    iterations: int = 1
    history: list = field(default_factory=list)
    wall_time: float = 0.0
    gauge: object = field(default=None, repr=False)
    gauge_residual: float = 0.0

    @property
    def trace_pressure(self):
        n2 = self.slot_values.shape[1] // 3
        return self.slot_values[:, 2 * n2:]


class ScatterPlan:
    """Precomputed scatter of stacked per-cell trace blocks into the
    condensed CSR matrix.  Slot order per cell: local facets 0..3, each
    [ubar1 | ubar2 | pbar]; slots on non-lateral facets or Dirichlet keys
    map to a trash bin."""

    def __init__(self, spaces):
        topo = spaces.topology
        T = topo.num_cells
        m = 3 * spaces.n2
        self.m4 = 4 * m
        flpos = topo.facet_lateral_pos[topo.cell_facets]  # (T, 4)
        lateral = topo.is_lateral_local
        self.flpos = flpos
        self.lateral = lateral
        self.n = spaces.n_trace

        gdof = np.where(
            lateral[:, :, None], spaces.slot_global[flpos], -1
        ).reshape(T, self.m4)
        self.gdof = gdof
        valid = gdof >= 0
        self.valid = valid

        n1 = self.n + 1
        rows = np.where(valid, gdof, self.n)
        keys = (rows[:, :, None].astype(np.int64) * n1 + rows[:, None, :])
        keys[~(valid[:, :, None] & valid[:, None, :])] = self.n * n1 + self.n
        keys = keys.ravel()
        order = np.argsort(keys, kind="stable")
        skeys = keys[order]
        newgrp = np.empty(len(skeys), dtype=bool)
        newgrp[0] = True
        np.not_equal(skeys[1:], skeys[:-1], out=newgrp[1:])
        grp = np.cumsum(newgrp) - 1
        ukeys = skeys[newgrp]
        posmap = np.empty(len(keys), dtype=np.int32)
        posmap[order] = grp
        if len(ukeys) and ukeys[-1] == self.n * n1 + self.n:
            self.nnz = len(ukeys) - 1
        else:
            self.nnz = len(ukeys)
        self.posmap = posmap
        urows = (ukeys[: self.nnz] // n1).astype(np.int32)
        self.indices = (ukeys[: self.nnz] % n1).astype(np.int32)
        self.indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(urows, minlength=self.n), out=self.indptr[1:])
        self.rhs_rows = rows  # (T, 4m) with trash bin self.n

    def csr(self, cell_blocks):
        data = np.bincount(
            self.posmap, weights=cell_blocks.ravel(), minlength=self.nnz + 1
        )[: self.nnz]
        return sp.csr_matrix(
            (data, self.indices, self.indptr), shape=(self.n, self.n)
        )

    def rhs(self, cell_rhs):
        return np.bincount(
            self.rhs_rows.ravel(), weights=cell_rhs.ravel(), minlength=self.n + 1
        )[: self.n]


def scatter_plan(spaces):
    plan = getattr(spaces, "_scatter_plan", None)
    if plan is None:
        plan = ScatterPlan(spaces)
        plan.gauge_Z = _gauge_candidates(spaces)
        spaces._scatter_plan = plan
    return plan


def _gauge_candidates(spaces):
    """Unit-norm trace vectors spanning every possible pressure null mode
    of a slab system (see module docstring).  Values are nodal: the slab
    time coordinate s in [0, 1] at a node is a purely topological quantity
    (barycentric weights against the facet's vertex layers)."""
    topo = spaces.topology
    tp = spaces.trace_p
    nodes = degree_tables(spaces.degree).basis2.nodes
    bary = np.column_stack([1.0 - nodes.sum(axis=1), nodes])  # (n2, 3)
    rep = tp.key_rep
    fids = topo.lateral_ids[rep[:, 0]]
    layer = (topo.facet_verts[fids] >= topo.num_spatial_vertices).astype(float)
    s = np.einsum("ka,ka->k", bary[rep[:, 1]], layer)
    k = spaces.degree
    cols = [s**j for j in range(k + 1)]
    if spaces.variant.value != "edg":
        # facet-local trace pressures also admit orientation-signed modes
        eps = np.where(layer.sum(axis=1) == 1.0, 1.0, -1.0)
        cols += [eps * s**j for j in range(k + 1)]
    Z = np.zeros((spaces.n_trace, len(cols)))
    Z[spaces.n_trace_u_free:, :] = np.stack(cols, axis=1)
    norms = np.linalg.norm(Z, axis=0)
    return Z / np.where(norms > 0, norms, 1.0)


@dataclass
class PressureGauge:
    """Detected pressure null directions of one slab system (trace parts;
    the cell parts follow by back-substitution)."""

    right: np.ndarray  # (n_trace, r) orthonormal right-null basis
    left: np.ndarray  # (n_trace, r) orthonormal left-null basis
    scale: float

    @property
    def dim(self):
        return self.right.shape[1]


def _kernel_combos(R, tau):
    if R.size == 0:
        return np.zeros((R.shape[1], 0))
    u_, s_, vt_ = np.linalg.svd(R, full_matrices=False)
    return vt_[s_ <= tau].T


def _factorize(K):
    """Sparse LU tuned for the condensed trace matrix.

    The facet-coupling graph is structurally symmetric (facet i sees facet
    j exactly when they share a cell), so a symmetric fill-reducing
    ordering with mild diagonal pivoting beats the default unsymmetric
    ordering by a wide margin in both fill and time; the relaxed pivot
    threshold is safe because threshold pivoting still swaps rows whenever
    the diagonal entry is genuinely small."""
    return spla.splu(
        K.tocsc(),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.001,
        options=dict(SymmetricMode=True),
    )


# Linear solves inside a Picard loop (and across consecutive slabs) differ
# only by slowly varying advection and mesh-motion terms, so one LU keeps
# preconditioning Krylov solves well long after the matrix it factored is
# gone.  Accept an iterative solve only when its true residual is at the
# level a fresh factorization would deliver.
GMRES_RELTOL = 2e-13
GMRES_ACCEPT = 5e-13
GMRES_MAX_KRYLOV = 30


class FactorCache:
    """Holds the most recent LU and reuses it as a preconditioner.

    `solve` first tries GMRES preconditioned with the stored factorization
    (seeded with the previous solution) and falls back to a fresh
    factorization whenever the Krylov solve cannot reach direct-solver
    accuracy.  Callers that never pass a cache get a fresh factorization
    every time, which is the plain direct method."""

    def __init__(self):
        self.lu = None
        self.last_x = None
        self.n_reused = 0
        self.n_factored = 0

    def solve(self, K, rhs):
        bnorm = float(np.linalg.norm(rhs))
        if bnorm == 0.0:
            return np.zeros_like(rhs)
        if self.lu is not None and self.lu.shape == K.shape:
            x = self._try_gmres(K, rhs, bnorm)
            if x is not None:
                self.n_reused += 1
                self.last_x = x
                return x
        lu = _factorize(K)
        self.lu = lu
        self.n_factored += 1
        x = lu.solve(rhs)
        self.last_x = x
        return x

    def _try_gmres(self, K, rhs, bnorm):
        n = K.shape[0]
        M = spla.LinearOperator((n, n), matvec=self.lu.solve)
        x0 = None
        if self.last_x is not None and self.last_x.shape == rhs.shape:
            x0 = self.last_x
        x, info = spla.gmres(
            K, rhs, x0=x0, M=M, rtol=GMRES_RELTOL, atol=0.0,
            restart=GMRES_MAX_KRYLOV, maxiter=1,
        )
        if info != 0:
            return None
        rel = float(np.linalg.norm(K @ x - rhs)) / bnorm
        if rel > GMRES_ACCEPT:
            return None
        return x


def detect_pressure_gauge(S, plan, scale):
    """Find which gauge candidates (or combinations) the condensed matrix
    actually annihilates, from both sides."""
    Z = plan.gauge_Z
    empty = np.zeros((plan.n, 0))
    if plan.n == 0 or Z.shape[1] == 0:
        return PressureGauge(empty, empty, scale)
    tau = 1e-10 * max(scale, float(np.abs(S.data).max()) if S.nnz else 0.0)
    kr = _kernel_combos(S @ Z, tau)
    kl = _kernel_combos(S.T @ Z, tau)
    if kr.shape[1] != kl.shape[1]:
        raise SolverError(
            "pressure gauge detection found mismatched left/right null "
            f"dimensions ({kl.shape[1]} vs {kr.shape[1]})"
        )
    if kr.shape[1] == 0:
        return PressureGauge(empty, empty, scale)
    Zr, _ = np.linalg.qr(Z @ kr)
    Zl, _ = np.linalg.qr(Z @ kl)
    return PressureGauge(Zr, Zl, scale)


@dataclass
class SlabSystem:
    """One linearized slab system: assembled blocks with loads already
    folded into F and G, plus the trace Dirichlet values."""

    blocks: object  # BlockArrays
    spaces: object
    dirichlet_values: np.ndarray  # (FL, 3*n2), zeros at free slots

    def gauge_scale(self):
        # identical in the condensed and uncondensed paths so that both
        # give bitwise-comparable answers
        return max(1.0, float(np.abs(self.blocks.D).max()))

    def stacked(self):
        """Per-cell stacked arrays over the 4*m trace slot layout."""
        b = self.blocks
        T, nw = b.A.shape[0], b.A.shape[1]
        m = b.D.shape[2]
        Bs = b.B.transpose(0, 2, 1, 3).reshape(T, nw, 4 * m)
        Cs = b.C.reshape(T, 4 * m, nw)
        Ds = np.zeros((T, 4 * m, 4 * m))
        for l in range(4):
            Ds[:, l * m:(l + 1) * m, l * m:(l + 1) * m] = b.D[:, l]
        Gs = b.G.reshape(T, 4 * m)
        return Bs, Cs, Ds, Gs

    def dirichlet_stacked(self, plan):
        T = self.blocks.A.shape[0]
        dv = np.where(
            plan.lateral[:, :, None], self.dirichlet_values[plan.flpos], 0.0
        ).reshape(T, plan.m4)
        return dv


def _local_solves(A, B, F):
    """Batched A^-1 B and A^-1 F with per-cell blame on failure."""
    try:
        AinvB = np.linalg.solve(A, B)
        AinvF = np.linalg.solve(A, F[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        for t in range(A.shape[0]):
            try:
                np.linalg.solve(A[t], F[t])
            except np.linalg.LinAlgError:
                raise SolverError(
                    f"local cell matrix for cell {t} is singular (degenerate "
                    "geometry or missing pressure constraint)"
                ) from None
        raise
    return AinvB, AinvF


def _bordered_solve(S, rhs, gauge, cache=None):
    """Direct solve with the detected null directions constrained out.

    Solves [[S, g*Zl], [g*Zr^T, 0]] [x; lam] = [rhs; 0]; for a consistent
    right-hand side lam vanishes and x is the exact solution with zero
    component along the null directions.  Returns (x, |g*lam|_inf)."""
    solver = cache.solve if cache is not None else (
        lambda K, b: _factorize(K).solve(b)
    )
    r = gauge.dim
    if r == 0:
        try:
            return solver(S, rhs), 0.0
        except RuntimeError as exc:
            raise SolverError(
                "condensed trace matrix is singular beyond the detected "
                f"pressure gauge modes ({exc})"
            ) from exc
    g = gauge.scale
    K = sp.bmat(
        [[S, g * sp.csc_matrix(gauge.left)],
         [g * sp.csc_matrix(gauge.right.T), None]],
        format="csr",
    )
    try:
        sol = solver(K, np.concatenate([rhs, np.zeros(r)]))
    except RuntimeError as exc:
        raise SolverError(
            "condensed trace matrix is singular beyond the detected "
            "pressure gauge modes (pure-Dirichlet pressure null space "
            f"handling failed: {exc})"
        ) from exc
    n = S.shape[0]
    lam = g * sol[n:]
    return sol[:n], float(np.abs(lam).max()) if r else 0.0


def _solution_from(spaces, W, x, svals):
    T, n3, np3 = spaces.num_cells, spaces.n3, spaces.np3
    return SlabSolution(
        ucell=W[:, : 2 * n3].reshape(T, 2, n3).copy(),
        pcell=W[:, 2 * n3:].copy(),
        trace=x,
        slot_values=svals,
    )


def _full_slot_values(spaces, x, dirichlet_values):
    svals = dirichlet_values.copy()
    mask = spaces.slot_global >= 0
    svals[mask] = x[spaces.slot_global[mask]]
    return svals


def condense_and_solve(system, gauge=None):
    """Schur-complement solve of one slab system."""
    spaces = system.spaces
    plan = scatter_plan(spaces)
    b = system.blocks
    Bs, Cs, Ds, Gs = system.stacked()
    AinvB, AinvF = _local_solves(b.A, Bs, b.F)
    S = Ds - Cs @ AinvB
    rhs_cells = Gs - np.einsum("tij,tj->ti", Cs, AinvF)
    dv = system.dirichlet_stacked(plan)
    if np.any(dv):
        rhs_cells -= np.einsum("tij,tj->ti", S, dv)

    gauge_residual = 0.0
    if plan.n:
        mat = plan.csr(S)
        rhs = plan.rhs(rhs_cells)
        if gauge is None:
            gauge = detect_pressure_gauge(mat, plan, system.gauge_scale())
        x, gauge_residual = _bordered_solve(mat, rhs, gauge)
    else:
        x = np.zeros(0)
        if gauge is None:
            gauge = PressureGauge(
                np.zeros((0, 0)), np.zeros((0, 0)), system.gauge_scale()
            )

    svals = _full_slot_values(spaces, x, system.dirichlet_values)
    wbar = np.where(plan.lateral[:, :, None], svals[plan.flpos], 0.0)
    wbar = wbar.reshape(len(b.A), plan.m4)
    W = AinvF - np.einsum("tij,tj->ti", AinvB, wbar)
    sol = _solution_from(spaces, W, x, svals)
    sol.gauge = gauge
    sol.gauge_residual = gauge_residual
    return sol


def _detect_from_system(system, plan):
    b = system.blocks
    Bs, Cs, Ds, _ = system.stacked()
    AinvB, _ = _local_solves(b.A, Bs, b.F)
    S = plan.csr(Ds - Cs @ AinvB)
    return detect_pressure_gauge(S, plan, system.gauge_scale())


def solve_monolithic(system, gauge=None):
    """Uncondensed sparse solve of the same system (reference path for
    cross-checking the condensation; meant for small problems)."""
    spaces = system.spaces
    plan = scatter_plan(spaces)
    b = system.blocks
    Bs, Cs, Ds, Gs = system.stacked()
    T, nw = b.A.shape[0], b.A.shape[1]
    ncell = T * nw
    n = ncell + plan.n
    dv = system.dirichlet_stacked(plan)

    cdof = (np.arange(T)[:, None] * nw + np.arange(nw)[None, :])
    tdof = np.where(plan.valid, ncell + plan.gdof, -1)

    rows, cols, vals = [], [], []

    def emit(r, c, v):
        keep = (r >= 0) & (c >= 0)
        rows.append(r[keep])
        cols.append(c[keep])
        vals.append(v[keep])

    emit(
        np.broadcast_to(cdof[:, :, None], b.A.shape).ravel(),
        np.broadcast_to(cdof[:, None, :], b.A.shape).ravel(),
        b.A.ravel(),
    )
    emit(
        np.broadcast_to(cdof[:, :, None], Bs.shape).ravel(),
        np.broadcast_to(tdof[:, None, :], Bs.shape).ravel(),
        Bs.ravel(),
    )
    emit(
        np.broadcast_to(tdof[:, :, None], Cs.shape).ravel(),
        np.broadcast_to(cdof[:, None, :], Cs.shape).ravel(),
        Cs.ravel(),
    )
    emit(
        np.broadcast_to(tdof[:, :, None], Ds.shape).ravel(),
        np.broadcast_to(tdof[:, None, :], Ds.shape).ravel(),
        Ds.ravel(),
    )
    rhs = np.zeros(n)
    np.add.at(rhs, cdof.ravel(), (b.F - np.einsum("tij,tj->ti", Bs, dv)).ravel())
    trhs = Gs - np.einsum("tij,tj->ti", Ds, dv)
    keep = plan.valid.ravel()
    np.add.at(rhs, tdof.ravel()[keep], trhs.ravel()[keep])

    if gauge is None:
        if plan.n:
            gauge = _detect_from_system(system, plan)
        else:
            gauge = PressureGauge(np.zeros((0, 0)), np.zeros((0, 0)), 1.0)
    g = gauge.scale
    for j in range(gauge.dim):
        nzr = np.nonzero(gauge.right[:, j])[0]
        rows.append(n + j + np.zeros(nzr.size, dtype=np.int64))
        cols.append(ncell + nzr)
        vals.append(g * gauge.right[nzr, j])
        nzl = np.nonzero(gauge.left[:, j])[0]
        rows.append(ncell + nzl)
        cols.append(n + j + np.zeros(nzl.size, dtype=np.int64))
        vals.append(g * gauge.left[nzl, j])
    ntot = n + gauge.dim
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ntot, ntot),
    ).tocsc()
    try:
        sol = spla.splu(mat).solve(np.concatenate([rhs, np.zeros(gauge.dim)]))
    except RuntimeError as exc:
        raise SolverError(f"monolithic matrix is singular ({exc})") from exc
    W = sol[:ncell].reshape(T, nw)
    x = sol[ncell:n]
    svals = _full_slot_values(spaces, x, system.dirichlet_values)
    out = _solution_from(spaces, W, x, svals)
    out.gauge = gauge
    out.gauge_residual = float(g * np.abs(sol[n:]).max()) if gauge.dim else 0.0
    return out


def _field_update_ratio(new, old, floor=ZERO_DENOM_FLOOR):
    """Relative l-inf update against the total change from the zero start;
    a vanishing denominator counts as converged only if the step itself
    vanishes."""
    num = np.abs(new - old).max() if new.size else 0.0
    den = np.abs(new).max() if new.size else 0.0
    if den < floor:
        return 0.0 if num < floor else np.inf
    return num / den


def picard_solve(slab, spaces, params, config, u_minus, dirichlet=None,
                 solve=condense_and_solve):
    """Fixed-point iteration on the advective velocity.

    Starts from the zero iterate, freezes the advected velocity at the
    previous solution, and stops when the update of the full coefficient
    vector (cell velocity and pressure plus traces) is small relative to
    its magnitude.  Measuring fields jointly keeps the ratio meaningful
    when one field is identically zero (uniform flow has zero pressure:
    a per-field ratio would divide solver noise by solver noise and
    never fall below one).  The linear solve path is injectable so the
    condensed and monolithic branches can be cross-checked.
    """
    t0 = time.perf_counter()
    asm = SlabAssembler(slab, spaces, params)
    loads = asm.load_blocks(u_minus)
    topo = slab.topology
    if dirichlet is not None:
        key_vals = spaces.dirichlet_key_values(slab, dirichlet)
    else:
        key_vals = np.zeros((spaces.trace_u.n_keys, 2))
    slot_dir = spaces.slot_values(key_vals)
    pin = not np.any(topo.facet_kind == FACET_NEUMANN)

    T, n3 = topo.num_cells, spaces.n3
    W = np.zeros((T, spaces.nw))
    x = np.zeros(spaces.n_trace)
    svals = slot_dir.copy()
    history = []
    linear = params.advective == "none"
    # the advective terms only touch velocity blocks, so the pressure null
    # space is the same for every Picard iterate: detect once, reuse.
    gauge = None

    for it in range(1, config.max_iterations + 1):
        blocks = asm.iteration_blocks(W[:, : 2 * n3].reshape(T, 2, n3), svals)
        blocks.F += loads.F
        blocks.G += loads.G
        system = SlabSystem(blocks, spaces, slot_dir)
        sol = solve(system, gauge=gauge)
        gauge = sol.gauge
        Wn = np.concatenate(
            [sol.ucell.reshape(T, 2 * n3), sol.pcell], axis=1
        )
        if not (np.all(np.isfinite(Wn)) and np.all(np.isfinite(sol.trace))):
            raise SolverError(
                f"slab {slab.index}: Picard iteration {it} produced "
                "non-finite values (diverged)"
            )
        znew = np.concatenate([Wn.ravel(), sol.trace])
        zold = np.concatenate([W.ravel(), x])
        stop = _field_update_ratio(znew, zold)
        history.append(float(stop))
        W, x, svals = Wn, sol.trace, sol.slot_values
        log.debug("slab %d picard %d: stop=%.3e", slab.index, it, stop)
        if stop < config.tol or linear:
            sol.iterations = it
            sol.history = history
            sol.wall_time = time.perf_counter() - t0
            if pin:
                _shift_pressure_to_zero_mean(asm, sol)
            return sol

    raise NonConvergenceError(
        f"slab {slab.index}: Picard failed to reach tol={config.tol:g} in "
        f"{config.max_iterations} iterations (last stop={history[-1]:.3e})",
        history=history,
    )


def _shift_pressure_to_zero_mean(asm, sol):
    """Remove the arbitrary constant from the reported pressure (enclosed
    flows determine the pressure only up to the gauge)."""
    d = asm.dtab
    pref = d.wv @ d.PHIP  # reference integrals of the pressure basis
    det = asm.geom.detJ
    total = det.sum() / 6.0
    mean = (det * (sol.pcell @ pref)).sum() / total
    sol.pcell -= mean
    n2 = d.n2
    sol.slot_values[:, 2 * n2:] -= mean
    nuf = asm.spaces.n_trace_u_free
    sol.trace[nuf:] -= mean
