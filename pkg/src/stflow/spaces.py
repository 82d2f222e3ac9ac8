"""Nodal simplex bases and degree-of-freedom maps for the three variants.

Cell unknowns are a broken [P_k]^2 velocity and a broken P_{k-1} pressure
on space-time tetrahedra.  Trace unknowns are P_k per facet for both the
velocity (2 components) and the pressure, living only on lateral facets:

    hdg   velocity and pressure traces both per-facet discontinuous
    ehdg  velocity trace continuous on the facet complex, pressure per-facet
    edg   velocity and pressure traces both continuous

Continuity is a pure node-identification problem for nodal bases: facet
nodes are keyed by the mesh entity they sit on (vertex id / edge with step
index / facet interior) and shared keys collapse to one global unknown.

Global DOF ordering: all cell velocity, then all cell pressure, then trace
velocity, then trace pressure.  Dirichlet trace-velocity DOFs are removed
from the global system; their data values are folded into loads at assembly.
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from math import comb

import numpy as np

from .errors import ConfigError
from .meshing import FACET_DIRICHLET

log = logging.getLogger(__name__)

MAX_DEGREE = 4  # equispaced nodal bases are well conditioned up to here


class MethodVariant(str, Enum):
    HDG = "hdg"
    EHDG = "ehdg"
    EDG = "edg"

    @property
    def continuous_velocity_trace(self):
        return self is not MethodVariant.HDG

    @property
    def continuous_pressure_trace(self):
        return self is MethodVariant.EDG

    @classmethod
    def parse(cls, name):
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ConfigError(
                f"unknown method variant {name!r}; expected one of hdg, ehdg, edg"
            ) from None


def space_dim(dim, degree):
    """dim P_degree on a dim-simplex."""
    return comb(degree + dim, dim)


# ---------------------------------------------------------------------------
# monomial machinery
# ---------------------------------------------------------------------------


def _multi_indices(dim, degree):
    idx = [
        a
        for a in itertools.product(range(degree + 1), repeat=dim)
        if sum(a) <= degree
    ]
    idx.sort(key=lambda a: (sum(a), a))
    return np.array(idx, dtype=np.int64).reshape(len(idx), dim)


def _mono_eval(expo, pts):
    return np.prod(pts[:, None, :] ** expo[None, :, :], axis=2)


def _mono_grad(expo, pts):
    npts, dim = pts.shape
    nm = expo.shape[0]
    out = np.zeros((npts, nm, dim))
    for d in range(dim):
        dropped = expo.copy()
        dropped[:, d] = np.maximum(dropped[:, d] - 1, 0)
        out[:, :, d] = _mono_eval(dropped, pts) * expo[:, d]
    return out


def _classify_nodes(lattice, dim, degree):
    """Entity of each lattice node: ("v", vertex) | ("e", (i, j), step from i)
    | ("f", face, rank) | ("i", rank), in barycentric vertex numbering."""
    if degree == 0:
        return (("i", 0),)
    ents = []
    counters = {}
    for a in lattice:
        b = np.concatenate([[degree - int(a.sum())], a])
        nz = tuple(int(i) for i in np.flatnonzero(b > 0))
        if len(nz) == 1:
            ents.append(("v", nz[0]))
        elif len(nz) == 2:
            i, j = nz
            ents.append(("e", (i, j), int(b[j])))
        elif dim == 3 and len(nz) == 3:
            key = ("f", nz)
            rank = counters.get(key, 0)
            counters[key] = rank + 1
            ents.append(("f", nz, rank))
        else:
            rank = counters.get("i", 0)
            counters["i"] = rank + 1
            ents.append(("i", rank))
    return tuple(ents)


class SimplexBasis:
    """Nodal Lagrange basis on the reference dim-simplex (equispaced nodes)."""

    def __init__(self, dim, degree):
        if degree < 0:
            raise ConfigError(f"polynomial degree must be >= 0, got {degree}")
        self.dim = dim
        self.degree = degree
        self.exponents = _multi_indices(dim, degree)
        if degree == 0:
            self.nodes = np.full((1, dim), 1.0 / (dim + 1))
        else:
            self.nodes = self.exponents / float(degree)
        vand = _mono_eval(self.exponents, self.nodes)
        self.coeff = np.linalg.inv(vand)
        self.node_entity = _classify_nodes(self.exponents, dim, degree)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    def eval_at(self, pts):
        """(npts, n_nodes) basis values at reference points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return _mono_eval(self.exponents, pts) @ self.coeff

    def grad_at(self, pts):
        """(npts, n_nodes, dim) reference gradients at reference points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.einsum(
            "pmd,mn->pnd", _mono_grad(self.exponents, pts), self.coeff
        )


@lru_cache(maxsize=None)
def simplex_basis(dim, degree):
    return SimplexBasis(dim, degree)


# ---------------------------------------------------------------------------
# trace DOF identification
# ---------------------------------------------------------------------------


@dataclass
class TraceMap:
    """Node-key table for one trace field over the lateral facets.

    ``facet_keys[f, i]`` is the global key of facet-local node i on lateral
    facet f; distinct keys are distinct scalar unknowns (times the number of
    field components).  For discontinuous variants every (facet, node) pair
    is its own key.
    """

    n_keys: int
    facet_keys: np.ndarray  # (FL, n_facet_nodes) int
    key_rep: np.ndarray  # (n_keys, 2): first (lateral facet pos, local node)
    key_dirichlet: np.ndarray  # (n_keys,) bool
    key_free: np.ndarray  # (n_keys,) free index or -1
    n_free_keys: int


def _build_trace_map(topology, basis2, continuous, constrain_dirichlet):
    lateral = topology.lateral_ids
    fverts = topology.facet_verts[lateral]
    kinds = topology.facet_kind[lateral]
    degree = basis2.degree
    nn = basis2.n_nodes
    FL = lateral.shape[0]

    facet_keys = np.empty((FL, nn), dtype=np.int64)
    index = {}
    rep = []
    for f in range(FL):
        gv = fverts[f]
        for i, ent in enumerate(basis2.node_entity):
            if not continuous:
                key = (0, f, i)
            elif ent[0] == "v":
                key = (1, int(gv[ent[1]]))
            elif ent[0] == "e":
                a, b = ent[1]
                ga, gb = int(gv[a]), int(gv[b])
                if ga < gb:
                    key = (2, ga, gb, ent[2])
                else:  # unreachable for sorted facet tuples; kept for safety
                    key = (2, gb, ga, degree - ent[2])
            else:
                key = (3, f, ent[1])
            k = index.get(key)
            if k is None:
                k = len(rep)
                index[key] = k
                rep.append((f, i))
            facet_keys[f, i] = k
    n_keys = len(rep)

    dirichlet = np.zeros(n_keys, dtype=bool)
    if constrain_dirichlet:
        on_d = kinds == FACET_DIRICHLET
        if np.any(on_d):
            dirichlet[np.unique(facet_keys[on_d])] = True
    key_free = np.full(n_keys, -1, dtype=np.int64)
    free = ~dirichlet
    key_free[free] = np.arange(int(free.sum()))
    return TraceMap(
        n_keys=n_keys,
        facet_keys=facet_keys,
        key_rep=np.array(rep, dtype=np.int64).reshape(n_keys, 2),
        key_dirichlet=dirichlet,
        key_free=key_free,
        n_free_keys=int(free.sum()),
    )


# ---------------------------------------------------------------------------
# method spaces
# ---------------------------------------------------------------------------


@dataclass
class MethodSpaces:
    """Bases plus cell/trace DOF maps for one (variant, degree) pair."""

    variant: MethodVariant
    degree: int
    topology: object
    basis_cell: SimplexBasis  # P_k on the tet, per velocity component
    basis_cell_p: SimplexBasis  # P_{k-1} on the tet
    basis_facet: SimplexBasis  # P_k on the facet triangle
    trace_u: TraceMap
    trace_p: TraceMap
    slot_global: np.ndarray = field(repr=False)  # (FL, 3*n2) trace index or -1
    slot_dirichlet: np.ndarray = field(repr=False)  # (FL, 3*n2) bool

    # -- dimensions -------------------------------------------------------
    @property
    def n3(self):
        return self.basis_cell.n_nodes

    @property
    def np3(self):
        return self.basis_cell_p.n_nodes

    @property
    def n2(self):
        return self.basis_facet.n_nodes

    @property
    def nw(self):
        """Per-cell local block size, layout [u1 | u2 | p]."""
        return 2 * self.n3 + self.np3

    @property
    def num_cells(self):
        return self.topology.num_cells

    @property
    def n_cell_u(self):
        return self.num_cells * 2 * self.n3

    @property
    def n_cell_p(self):
        return self.num_cells * self.np3

    @property
    def n_trace_u_raw(self):
        return 2 * self.trace_u.n_keys

    @property
    def n_trace_p_raw(self):
        return self.trace_p.n_keys

    @property
    def n_trace_u_free(self):
        return 2 * self.trace_u.n_free_keys

    @property
    def n_trace(self):
        """Free (globally coupled) trace unknowns after Dirichlet removal."""
        return self.n_trace_u_free + self.n_trace_p_raw

    @property
    def n_total_free(self):
        return self.n_cell_u + self.n_cell_p + self.n_trace

    def dof_counts(self):
        return {
            "cell_velocity": self.n_cell_u,
            "cell_pressure": self.n_cell_p,
            "trace_velocity": self.n_trace_u_raw,
            "trace_pressure": self.n_trace_p_raw,
            "trace_total": self.n_trace_u_raw + self.n_trace_p_raw,
            "trace_velocity_free": self.n_trace_u_free,
            "trace_total_free": self.n_trace,
        }

    # -- global layout helpers ---------------------------------------------
    def cell_dof_indices(self):
        """(T, nw) global indices of each cell's local [u1|u2|p] block."""
        T, n3, np3 = self.num_cells, self.n3, self.np3
        out = np.empty((T, self.nw), dtype=np.int64)
        c = np.arange(T)[:, None]
        out[:, : 2 * n3] = c * 2 * n3 + np.arange(2 * n3)[None, :]
        out[:, 2 * n3 :] = self.n_cell_u + c * np3 + np.arange(np3)[None, :]
        return out

    # -- Dirichlet data -----------------------------------------------------
    def trace_u_key_points(self, slab):
        """Physical space-time coordinates of every velocity trace key."""
        rep = self.trace_u.key_rep
        nodes = self.basis_facet.nodes
        fids = self.topology.lateral_ids[rep[:, 0]]
        fv = slab.coords[self.topology.facet_verts[fids]]  # (n_keys, 3, 3)
        xi = nodes[rep[:, 1]]  # (n_keys, 2)
        return (
            fv[:, 0]
            + xi[:, 0:1] * (fv[:, 1] - fv[:, 0])
            + xi[:, 1:2] * (fv[:, 2] - fv[:, 0])
        )

    def dirichlet_key_values(self, slab, data):
        """Nodal interpolation of Dirichlet data at constrained keys.

        ``data(points) -> (npts, 2)`` takes space-time points (x1, x2, t).
        Returns (n_keys, 2) with zeros at free keys.
        """
        vals = np.zeros((self.trace_u.n_keys, 2))
        mask = self.trace_u.key_dirichlet
        if np.any(mask):
            pts = self.trace_u_key_points(slab)[mask]
            vals[mask] = np.asarray(data(pts), dtype=float).reshape(-1, 2)
        return vals

    def slot_values(self, key_values):
        """Spread per-key velocity values onto the (FL, 3*n2) slot layout
        (pressure slots zero) for load folding in the assembler."""
        FL, n2 = self.trace_u.facet_keys.shape
        out = np.zeros((FL, 3 * n2))
        for d in range(2):
            out[:, d * n2 : (d + 1) * n2] = key_values[self.trace_u.facet_keys, d]
        return out


def _build_slots(topology, trace_u, trace_p, n2):
    FL = trace_u.facet_keys.shape[0]
    n_u_free = 2 * trace_u.n_free_keys
    slots = np.full((FL, 3 * n2), -1, dtype=np.int64)
    dirichlet = np.zeros((FL, 3 * n2), dtype=bool)
    for d in range(2):
        fk = trace_u.key_free[trace_u.facet_keys]  # (FL, n2), -1 constrained
        cols = slice(d * n2, (d + 1) * n2)
        slots[:, cols] = np.where(fk >= 0, 2 * fk + d, -1)
        dirichlet[:, cols] = trace_u.key_dirichlet[trace_u.facet_keys]
    slots[:, 2 * n2 :] = n_u_free + trace_p.facet_keys
    return slots, dirichlet


def build_spaces(slab_or_topology, variant, k):
    """DOF maps for one variant at degree k over a slab topology.

    The result depends only on connectivity, so it is cached and reused for
    every slab of a run.
    """
    topology = getattr(slab_or_topology, "topology", slab_or_topology)
    variant = MethodVariant.parse(variant)
    if not isinstance(k, int) or isinstance(k, bool):
        raise ConfigError(f"polynomial degree k must be an integer, got {k!r}")
    if k < 1:
        raise ConfigError(f"polynomial degree k must be >= 1, got {k}")
    if k > MAX_DEGREE:
        raise ConfigError(
            f"polynomial degree k = {k} not supported (max {MAX_DEGREE})"
        )
    return _build_spaces_cached(topology, variant, k)


@lru_cache(maxsize=64)
def _build_spaces_cached(topology, variant, k):
    basis_cell = simplex_basis(3, k)
    basis_cell_p = simplex_basis(3, k - 1)
    basis_facet = simplex_basis(2, k)
    trace_u = _build_trace_map(
        topology, basis_facet, variant.continuous_velocity_trace, True
    )
    trace_p = _build_trace_map(
        topology, basis_facet, variant.continuous_pressure_trace, False
    )
    slots, dirichlet = _build_slots(topology, trace_u, trace_p, basis_facet.n_nodes)
    spaces = MethodSpaces(
        variant=variant,
        degree=k,
        topology=topology,
        basis_cell=basis_cell,
        basis_cell_p=basis_cell_p,
        basis_facet=basis_facet,
        trace_u=trace_u,
        trace_p=trace_p,
        slot_global=slots,
        slot_dirichlet=dirichlet,
    )
    log.debug(
        "spaces %s k=%d: %d cells, trace dofs raw %d (free %d)",
        variant.value,
        k,
        topology.num_cells,
        spaces.n_trace_u_raw + spaces.n_trace_p_raw,
        spaces.n_trace,
    )
    return spaces


def eval_basis(spaces, points, *, which="cell", invjac=None):
    """Basis values (and physical derivatives for cell bases) at reference
    points.

    For ``which="cell"`` and an ``invjac`` (3,3) of an affine cell, returns
    (values, spatial gradients (npts, n, 2), time derivatives (npts, n));
    otherwise reference values only.
    """
    if which == "cell":
        basis = spaces.basis_cell
    elif which == "cell_p":
        basis = spaces.basis_cell_p
    elif which == "facet":
        basis = spaces.basis_facet
    else:
        raise ConfigError(f"unknown basis selector {which!r}")
    vals = basis.eval_at(points)
    if which == "facet" or invjac is None:
        return vals
    gref = basis.grad_at(points)
    gphys = np.einsum("pna,ad->pnd", gref, np.asarray(invjac, dtype=float))
    return vals, gphys[:, :, :2], gphys[:, :, 2]
