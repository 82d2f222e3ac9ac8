"""Named flow setups as ready-to-run configurations.

Four full cases — a manufactured traveling-wave flow on a deforming unit
square (with analytic forcing and outflow data), channel flow past a rigid
cylinder, flow past a vertically oscillating cylinder, and a pitching and
plunging NACA0012 airfoil — plus two small analytic setups used by the
conservation and stability checks (uniform free-stream transport on the
deforming square, and a decaying vortex in a closed box).

Mesh motion is always prescribed on the reference vertices; blended motions
weight a rigid body displacement by a piecewise-linear falloff between an
inner box (or radius) that moves rigidly and an outer box (or radius) that
stays fixed.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .meshing import (
    FACET_DIRICHLET,
    FACET_NEUMANN,
    read_mesh,
    refine_uniform,
    unit_square_mesh,
)

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
DATA_DIR = Path(__file__).parent / "data"


@dataclass(frozen=True)
class CaseDefinition:
    """A complete, runnable flow setup with its defaults.

    ``mesh_factory(refine)`` builds the spatial mesh (motion attached) at
    the requested uniform refinement level.  ``initial`` selects how the
    first slab's carried velocity is produced: "exact" projects the exact
    solution at t=0, "stokes" solves a steady flow problem on the initial
    mesh, "field" projects ``initial_velocity``.
    """

    name: str
    mesh_factory: object
    dirichlet: object = None
    neumann: object = None
    forcing: object = None
    exact_u: object = None
    exact_p: object = None
    initial: str = "exact"
    initial_velocity: object = None
    nu: float = 1e-3
    degree: int = 2
    dt: float = 0.05
    end_time: float = 1.0
    tol: float = 1e-12
    variant: str = "hdg"
    advective: str = "full"
    body_predicate: object = None  # reference-edge-midpoint test for forces
    body_radius: float = 1.0

    def build_mesh(self, refine=0):
        return self.mesh_factory(refine)


# ---------------------------------------------------------------------------
# blending helpers
# ---------------------------------------------------------------------------


def box_blend_weight(pts, inner, outer):
    """1 inside the inner box, 0 outside the outer box, linear falloff per
    side in between; boxes are (xlo, xhi, ylo, yhi) with inner nested in
    outer."""
    ixlo, ixhi, iylo, iyhi = inner
    oxlo, oxhi, oylo, oyhi = outer
    x, y = pts[:, 0], pts[:, 1]
    r = np.maximum((ixlo - x) / (ixlo - oxlo), (x - ixhi) / (oxhi - ixhi))
    r = np.maximum(r, (iylo - y) / (iylo - oylo))
    r = np.maximum(r, (y - iyhi) / (oyhi - iyhi))
    return 1.0 - np.clip(r, 0.0, 1.0)


def radial_blend_weight(pts, center, r_inner, r_outer):
    """1 within r_inner of center, 0 beyond r_outer, linear in between."""
    d = np.linalg.norm(pts - np.asarray(center), axis=1)
    return 1.0 - np.clip((d - r_inner) / (r_outer - r_inner), 0.0, 1.0)


def body_facet_ids(topology, predicate):
    """Lateral boundary facets whose spatial edge midpoint (on the reference
    mesh) satisfies the predicate — used to pick out an immersed body's
    boundary for force integration."""
    ref = topology.mesh.reference_vertices
    nv = topology.num_spatial_vertices
    ids = []
    for f in topology.lateral_ids:
        if topology.facet_kind[f] not in (FACET_DIRICHLET, FACET_NEUMANN):
            continue
        verts = np.unique(topology.facet_verts[f] % nv)
        if predicate(ref[verts].mean(axis=0)):
            ids.append(int(f))
    ids = np.array(ids, dtype=np.int64)
    if ids.size == 0:
        raise ConfigError("body predicate selected no boundary facets")
    return ids


# ---------------------------------------------------------------------------
# manufactured traveling-wave flow on a deforming unit square
# ---------------------------------------------------------------------------


def square_wave_motion(t, ref):
    """Deforming unit square: each coordinate is displaced by a traveling
    sine weighted to vanish on the x_i = 1 sides, driven by the transposed
    coordinate."""
    x1, x2 = ref[:, 0], ref[:, 1]
    out = np.empty_like(ref)
    out[:, 0] = x1 + 0.05 * (1.0 - x1) * np.sin(TWO_PI * (0.5 - x2 + t))
    out[:, 1] = x2 + 0.05 * (1.0 - x2) * np.sin(TWO_PI * (0.5 - x1 + t))
    return out


def traveling_wave_velocity(p):
    a = TWO_PI * (p[:, 0] - p[:, 2])
    b = TWO_PI * (p[:, 1] - p[:, 2])
    return np.stack(
        [2.0 + np.sin(a) * np.sin(b), 2.0 + np.cos(a) * np.cos(b)], axis=1
    )


def traveling_wave_pressure(p):
    a = TWO_PI * (p[:, 0] - p[:, 2])
    b = TWO_PI * (p[:, 1] - p[:, 2])
    return np.sin(a) * np.cos(b)


def _traveling_wave_forcing(nu):
    def forcing(p):
        a = TWO_PI * (p[:, 0] - p[:, 2])
        b = TWO_PI * (p[:, 1] - p[:, 2])
        sa, ca, sb, cb = np.sin(a), np.cos(a), np.sin(b), np.cos(b)
        u1 = 2.0 + sa * sb
        u2 = 2.0 + ca * cb
        f1 = (
            -TWO_PI * np.sin(a + b)               # time derivative
            + TWO_PI * (u1 * ca * sb + u2 * sa * cb)  # advection
            + 2.0 * TWO_PI**2 * nu * sa * sb      # -nu laplacian
            + TWO_PI * ca * cb                    # pressure gradient
        )
        f2 = (
            TWO_PI * np.sin(a + b)
            - TWO_PI * (u1 * sa * cb + u2 * ca * sb)
            + 2.0 * TWO_PI**2 * nu * ca * cb
            - TWO_PI * sa * sb
        )
        return np.stack([f1, f2], axis=1)

    return forcing


def _traveling_wave_outflow(nu):
    """Boundary data on the static x1 = 1 side: the advective part of the
    outflow operator vanishes there (n_t = 0 and u1 >= 1 > 0), leaving the
    traction p*n - nu*grad(u)*n with n = e1."""

    def g(p):
        a = TWO_PI * (p[:, 0] - p[:, 2])
        b = TWO_PI * (p[:, 1] - p[:, 2])
        g1 = np.sin(a) * np.cos(b) - nu * TWO_PI * np.cos(a) * np.sin(b)
        g2 = nu * TWO_PI * np.sin(a) * np.cos(b)
        return np.stack([g1, g2], axis=1)

    return g


def _square_mesh_factory(base_n, motion, neumann_predicate):
    def factory(refine=0):
        mesh = unit_square_mesh(
            base_n * 2**refine, neumann_predicate=neumann_predicate
        )
        return replace(mesh, motion=motion)

    return factory


def convergence_case(nu=1e-7, degree=2):
    """Manufactured traveling-wave flow on the deforming unit square;
    outflow side x1 = 1, analytic forcing and boundary data."""
    return CaseDefinition(
        name="convergence",
        mesh_factory=_square_mesh_factory(
            8, square_wave_motion, lambda x: x[0] > 1.0 - 1e-9
        ),
        dirichlet=traveling_wave_velocity,
        neumann=_traveling_wave_outflow(nu),
        forcing=_traveling_wave_forcing(nu),
        exact_u=traveling_wave_velocity,
        exact_p=traveling_wave_pressure,
        initial="exact",
        nu=nu,
        degree=degree,
        dt=0.05,
        end_time=1.0,
        tol=1e-12,
        variant="hdg",
        advective="full",
    )


def free_stream_case(u_const=(2.0, 3.0)):
    """Uniform flow transported across the deforming unit square: constant
    exact velocity, zero pressure, zero forcing and outflow data.  The
    discrete solution must reproduce the constant exactly regardless of the
    mesh motion."""
    c = np.asarray(u_const, dtype=float)
    if c[0] <= 0:
        raise ConfigError(
            "free-stream velocity must point out of the x1 = 1 side"
        )
    const_u = lambda p: np.tile(c, (len(p), 1))
    return CaseDefinition(
        name="free_stream",
        mesh_factory=_square_mesh_factory(
            8, square_wave_motion, lambda x: x[0] > 1.0 - 1e-9
        ),
        dirichlet=const_u,
        neumann=None,
        forcing=None,
        exact_u=const_u,
        exact_p=lambda p: np.zeros(len(p)),
        initial="exact",
        nu=1e-3,
        degree=2,
        dt=0.05,
        end_time=0.25,
        tol=1e-12,
        variant="hdg",
        advective="full",
    )


def decaying_vortex_velocity(p):
    """Divergence-free field vanishing on the unit-square boundary (curl of
    the bump stream function sin^2(pi x) sin^2(pi y))."""
    x, y = p[:, 0], p[:, 1]
    return np.stack(
        [
            np.pi * np.sin(np.pi * x) ** 2 * np.sin(TWO_PI * y),
            -np.pi * np.sin(TWO_PI * x) * np.sin(np.pi * y) ** 2,
        ],
        axis=1,
    )


def energy_decay_case(moving=False):
    """Closed box, no forcing, homogeneous walls, nonzero initial vortex:
    the kinetic energy carried across slab interfaces must not grow."""
    motion = square_wave_motion if moving else None
    return CaseDefinition(
        name="energy_decay_moving" if moving else "energy_decay",
        mesh_factory=_square_mesh_factory(8, motion, None),
        dirichlet=None,
        neumann=None,
        forcing=None,
        initial="field",
        initial_velocity=decaying_vortex_velocity,
        nu=1e-2,
        degree=2,
        dt=0.05,
        end_time=0.5,
        tol=1e-12,
        variant="hdg",
        advective="full",
    )


# ---------------------------------------------------------------------------
# channel flow past a rigid cylinder
# ---------------------------------------------------------------------------

CHANNEL_HEIGHT = 0.41
CYLINDER_CENTER = np.array([0.2, 0.2])
CYLINDER_RADIUS = 0.05


def channel_inflow(p):
    u1 = np.where(
        p[:, 0] < 1e-9,
        6.0 * p[:, 1] * (CHANNEL_HEIGHT - p[:, 1]) / CHANNEL_HEIGHT**2,
        0.0,
    )
    return np.stack([u1, np.zeros(len(p))], axis=1)


def _file_mesh_factory(filename, motion=None):
    def factory(refine=0):
        mesh = read_mesh(DATA_DIR / filename)
        if motion is not None:
            mesh = replace(mesh, motion=motion)
        if refine:
            mesh = refine_uniform(mesh, refine)
        return mesh

    return factory


def rigid_cylinder_case():
    """Fixed channel with a circular obstacle: parabolic inflow, no-slip
    walls and cylinder, open outflow."""
    return CaseDefinition(
        name="rigid_cylinder",
        mesh_factory=_file_mesh_factory("cylinder_channel.mesh"),
        dirichlet=channel_inflow,
        neumann=None,
        forcing=None,
        initial="stokes",
        nu=1e-3,
        degree=3,
        dt=5e-3,
        end_time=5.0,
        tol=1e-10,
        variant="ehdg",
        advective="full",
        body_predicate=lambda m: np.linalg.norm(m - CYLINDER_CENTER)
        < 3.0 * CYLINDER_RADIUS,
        body_radius=CYLINDER_RADIUS,
    )


# ---------------------------------------------------------------------------
# flow past a vertically oscillating cylinder
# ---------------------------------------------------------------------------

OSC_PERIOD = 5.94
OSC_RADIUS = 0.5


def oscillating_center_height(t):
    return 0.48 * np.sin(TWO_PI * t / OSC_PERIOD)


def oscillating_cylinder_motion(t, ref):
    w = box_blend_weight(ref, (-2.0, 2.0, -2.0, 2.0), (-4.0, 4.0, -4.0, 4.0))
    out = ref.copy()
    out[:, 1] += w * oscillating_center_height(t)
    return out


def _oscillating_dirichlet(p):
    dy = oscillating_center_height(p[:, 2])
    on_body = p[:, 0] ** 2 + (p[:, 1] - dy) ** 2 < 2.0**2
    u1 = np.where(on_body, 0.0, 1.0)
    return np.stack([u1, np.zeros(len(p))], axis=1)


def oscillating_cylinder_case():
    """Free stream past a cylinder forced to oscillate vertically; the mesh
    follows the body rigidly near it and blends to rest across a fixed
    outer box."""
    return CaseDefinition(
        name="oscillating_cylinder",
        mesh_factory=_file_mesh_factory(
            "cylinder_oscillating.mesh", oscillating_cylinder_motion
        ),
        dirichlet=_oscillating_dirichlet,
        neumann=None,
        forcing=None,
        initial="stokes",
        nu=1e-2,
        degree=3,
        dt=0.025,
        end_time=4.0 * OSC_PERIOD,
        tol=1e-9,
        variant="ehdg",
        advective="full",
        body_predicate=lambda m: np.linalg.norm(m) < 2.0 * OSC_RADIUS,
        body_radius=OSC_RADIUS,
    )


# ---------------------------------------------------------------------------
# pitching and plunging NACA0012 airfoil
# ---------------------------------------------------------------------------

TRAILING_EDGE = np.array([-0.5, 0.5])
PITCH_AMPLITUDE = np.deg2rad(10.0)
FLAP_OMEGA = TWO_PI * 0.5  # non-dimensional frequency 0.5


def airfoil_te_height(t):
    """Vertical position of the trailing edge (starts at the top, +0.5)."""
    return 0.5 * np.cos(FLAP_OMEGA * t)


def airfoil_angle(t):
    """Angle of attack in radians (starts level, swings +/- 10 degrees)."""
    return PITCH_AMPLITUDE * np.sin(FLAP_OMEGA * t)


def airfoil_motion(t, ref):
    dy = airfoil_te_height(t) - TRAILING_EDGE[1]
    wb = box_blend_weight(ref, (-3.0, 7.0, -2.5, 3.5), (-4.0, 8.0, -4.5, 4.5))
    out = ref.copy()
    out[:, 1] += wb * dy
    te_now = TRAILING_EDGE + np.array([0.0, dy])
    wr = radial_blend_weight(ref, TRAILING_EDGE, 1.5, 2.0)
    theta = wr * airfoil_angle(t)
    rel = out - te_now
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    out[:, 0] = te_now[0] + cos_t * rel[:, 0] - sin_t * rel[:, 1]
    out[:, 1] = te_now[1] + sin_t * rel[:, 0] + cos_t * rel[:, 1]
    return out


def _airfoil_dirichlet(p):
    te_y = airfoil_te_height(p[:, 2])
    near = (p[:, 0] - TRAILING_EDGE[0]) ** 2 + (p[:, 1] - te_y) ** 2 < 2.5**2
    u1 = np.where(near, 0.0, 1.0)
    return np.stack([u1, np.zeros(len(p))], axis=1)


def airfoil_case():
    """Free stream past a NACA0012 pitching about its trailing edge while
    plunging vertically; rotation blends off radially, plunge blends off
    across nested boxes."""
    return CaseDefinition(
        name="airfoil",
        mesh_factory=_file_mesh_factory("naca0012.mesh", airfoil_motion),
        dirichlet=_airfoil_dirichlet,
        neumann=None,
        forcing=None,
        initial="stokes",
        nu=1e-3,
        degree=2,
        dt=0.01,
        end_time=4.0,
        tol=1e-7,
        variant="ehdg",
        advective="full",
        body_predicate=lambda m: np.linalg.norm(m - TRAILING_EDGE) < 1.2,
        body_radius=1.0,  # unit chord
    )


# ---------------------------------------------------------------------------
# registries
# ---------------------------------------------------------------------------

CASES = {
    "convergence": convergence_case,
    "free_stream": free_stream_case,
    "energy_decay": energy_decay_case,
    "energy_decay_moving": lambda: energy_decay_case(moving=True),
    "rigid_cylinder": rigid_cylinder_case,
    "oscillating_cylinder": oscillating_cylinder_case,
    "airfoil": airfoil_case,
}

MOTIONS = {
    "none": None,
    "square_wave": square_wave_motion,
    "oscillating_cylinder": oscillating_cylinder_motion,
    "airfoil": airfoil_motion,
}


def get_case(name):
    try:
        factory = CASES[name]
    except KeyError:
        known = ", ".join(sorted(CASES))
        raise ConfigError(f"unknown case {name!r} (known cases: {known})")
    return factory()


def get_motion(name):
    try:
        return MOTIONS[name]
    except KeyError:
        known = ", ".join(sorted(MOTIONS))
        raise ConfigError(f"unknown motion {name!r} (known motions: {known})")
