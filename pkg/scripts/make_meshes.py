#!/usr/bin/env python3
"""Generate the packaged unstructured meshes and verify them.

Builds point clouds (body-fitted rings plus graded background grids),
triangulates with Delaunay, carves out the body by centroid test, extracts
and marks the boundary, then checks element quality and — for the moving
cases — that no space-time element inverts over a full motion period.

Writes cylinder_channel.mesh, cylinder_oscillating.mesh and naca0012.mesh
into src/stflow/data/.  Deterministic: no randomness anywhere.
"""

import sys
from pathlib import Path

import numpy as np
from matplotlib.path import Path as PolyPath
from scipy.spatial import Delaunay, cKDTree

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from stflow import cases
from stflow.meshing import (
    FACET_DIRICHLET,
    FACET_NEUMANN,
    MovingSpatialMesh,
    SlabTopology,
    extrude_slab,
    write_mesh,
)

OUT_DIR = Path(__file__).resolve().parent.parent / "src" / "stflow" / "data"


# ---------------------------------------------------------------------------
# point-cloud helpers
# ---------------------------------------------------------------------------


def graded(stops, hs):
    """1D points from stops[0] to stops[-1]; target spacing hs[i] on each
    segment (rounded to a whole number of cells)."""
    xs = [np.array([stops[0]])]
    for (a, b), h in zip(zip(stops, stops[1:]), hs):
        n = max(1, round((b - a) / h))
        xs.append(np.linspace(a, b, n + 1)[1:])
    return np.concatenate(xs)


def grid(xs, ys):
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def ring(center, r, n, phase=0.0):
    th = phase + np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.column_stack(
        [center[0] + r * np.cos(th), center[1] + r * np.sin(th)]
    )


def accept(batches):
    """Concatenate point batches in priority order; each batch keeps only
    points farther than its clearance from everything accepted so far."""
    pts = None
    for batch, clearance in batches:
        batch = np.asarray(batch, dtype=float)
        if pts is None:
            pts = batch
            continue
        keep = cKDTree(pts).query(batch)[0] > clearance
        pts = np.vstack([pts, batch[keep]])
    return pts


def resample_polyline(pts, spacing, closed=True):
    """Greedy arc-length resampling of a dense polyline; ``spacing`` is a
    scalar or a callable(point) -> local spacing."""
    out = [pts[0]]
    acc = 0.0
    h = spacing(pts[0]) if callable(spacing) else spacing
    for a, b in zip(pts[:-1], pts[1:]):
        acc += float(np.linalg.norm(b - a))
        if acc >= h:
            out.append(b)
            acc = 0.0
            h = spacing(b) if callable(spacing) else spacing
    out = np.array(out)
    if closed and len(out) > 1 and np.linalg.norm(out[-1] - out[0]) < 0.5 * h:
        out = out[:-1]
    return out


def offset_polygon(poly, dist):
    """Offset a closed CCW polygon outward by ``dist`` along averaged vertex
    normals (adequate for convex bodies and small offsets)."""
    nxt = np.roll(poly, -1, axis=0)
    edge = nxt - poly
    en = np.column_stack([edge[:, 1], -edge[:, 0]])
    en /= np.linalg.norm(en, axis=1)[:, None]
    vn = en + np.roll(en, 1, axis=0)
    nrm = np.linalg.norm(vn, axis=1)
    nrm[nrm < 1e-12] = 1.0
    vn /= nrm[:, None]
    return poly + dist * vn


# ---------------------------------------------------------------------------
# triangulation + boundary extraction
# ---------------------------------------------------------------------------


def delaunay_mesh(points, inside_body, outflow_x, name):
    points = np.asarray(points, dtype=float)
    tri = Delaunay(points)
    cells = tri.simplices.astype(np.int64)
    if inside_body is not None:
        cent = points[cells].mean(axis=1)
        cells = cells[~inside_body(cent)]

    # drop zero-area slivers defensively (should not occur)
    p = points[cells]
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]
    ) * (p[:, 2, 0] - p[:, 0, 0])
    scale = float(np.abs(area2).max())
    degenerate = np.abs(area2) < 1e-12 * scale
    if degenerate.any():
        raise RuntimeError(f"{name}: {degenerate.sum()} degenerate triangles")

    used = np.unique(cells)
    remap = -np.ones(len(points), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = points[used]
    cells = remap[cells]

    edges = np.sort(
        np.concatenate([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [0, 2]]]),
        axis=1,
    )
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    bedges = uniq[counts == 1]
    mids = verts[bedges].mean(axis=1)
    marks = np.where(
        np.abs(mids[:, 0] - outflow_x) < 1e-9, FACET_NEUMANN, FACET_DIRICHLET
    )
    mesh = MovingSpatialMesh(verts, cells, bedges, marks)
    print(
        f"{name}: {mesh.num_vertices} vertices, {mesh.num_triangles} "
        f"triangles, {len(bedges)} boundary edges "
        f"({int((marks == FACET_NEUMANN).sum())} outflow), "
        f"min angle {min_angle_deg(mesh):.1f} deg"
    )
    return mesh


def min_angle_deg(mesh, positions=None):
    p = (positions if positions is not None else mesh.reference_vertices)[
        mesh.triangles
    ]
    angles = []
    for i in range(3):
        a = p[:, (i + 1) % 3] - p[:, i]
        b = p[:, (i + 2) % 3] - p[:, i]
        cosv = np.einsum("td,td->t", a, b) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        )
        angles.append(np.degrees(np.arccos(np.clip(cosv, -1.0, 1.0))))
    return float(np.min(angles))


def check_motion(mesh, dt, period, name):
    """Extrude every slab of one full period; SlabMesh construction raises
    on any inverted space-time element."""
    topo = SlabTopology(mesh)
    n_slabs = int(np.ceil(period / dt)) + 1
    worst = np.inf
    for n in range(n_slabs):
        slab = extrude_slab(mesh, n, dt, topology=topo)
        worst = min(worst, float(slab.cell_det.min()))
    ang = min(
        min_angle_deg(mesh, mesh.positions(t))
        for t in np.linspace(0.0, period, 97)
    )
    print(
        f"{name}: {n_slabs} slabs checked, min space-time det {worst:.3e}, "
        f"min moving angle {ang:.1f} deg"
    )


# ---------------------------------------------------------------------------
# case meshes
# ---------------------------------------------------------------------------


def channel_cylinder_mesh():
    c = cases.CYLINDER_CENTER
    rings = [
        (ring(c, 0.05, 26), 0.0),
        (ring(c, 0.072, 26, phase=0.12), 0.008),
        (ring(c, 0.100, 28, phase=0.0), 0.010),
        (ring(c, 0.135, 30, phase=0.10), 0.012),
    ]
    xs = graded([0.0, 0.08, 0.36, 0.8, 2.2], [0.04, 0.035, 0.055, 0.085])
    ys = graded([0.0, 0.41], [0.034])
    g = grid(xs, ys)
    g = g[np.linalg.norm(g - c, axis=1) > 0.165]
    pts = accept(rings + [(g, 0.015)])
    return delaunay_mesh(
        pts,
        lambda x: np.linalg.norm(x - c, axis=1) < 0.05,
        outflow_x=2.2,
        name="cylinder_channel",
    )


def oscillating_cylinder_mesh():
    c = (0.0, 0.0)
    rings = [
        (ring(c, 0.50, 32), 0.0),
        (ring(c, 0.68, 32, phase=0.10), 0.06),
        (ring(c, 0.92, 30, phase=0.0), 0.08),
        (ring(c, 1.22, 30, phase=0.10), 0.10),
        (ring(c, 1.60, 28, phase=0.0), 0.13),
        (ring(c, 2.00, 28, phase=0.11), 0.16),
    ]
    xs = graded([-6.0, -4.0, 4.0, 9.0, 20.0], [1.0, 0.62, 0.75, 1.15])
    ys = graded([-6.0, -4.0, 4.0, 6.0], [1.0, 0.62, 1.0])
    g = grid(xs, ys)
    g = g[np.linalg.norm(g, axis=1) > 2.3]
    pts = accept(rings + [(g, 0.26)])
    return delaunay_mesh(
        pts,
        lambda x: np.linalg.norm(x, axis=1) < 0.5,
        outflow_x=20.0,
        name="cylinder_oscillating",
    )


def naca0012_polygon(n_dense=900):
    """Closed CCW polygon: chord 1, trailing edge at (-0.5, 0.5), leading
    edge at (-1.5, 0.5)."""
    xb = 0.5 * (1.0 - np.cos(np.linspace(0.0, np.pi, n_dense)))
    yt = (
        5.0
        * 0.12
        * (
            0.2969 * np.sqrt(xb)
            - 0.1260 * xb
            - 0.3516 * xb**2
            + 0.2843 * xb**3
            - 0.1036 * xb**4
        )
    )
    x = -1.5 + xb
    lower = np.column_stack([x, 0.5 - yt])  # LE -> TE
    upper = np.column_stack([x, 0.5 + yt])[::-1]  # TE -> LE
    return np.vstack([lower[:-1], upper[:-1]])  # CCW, no duplicate joints


def naca0012_mesh():
    poly = naca0012_polygon()
    path = PolyPath(poly)

    def h_surface(p):
        xb = np.clip(p[0] + 1.5, 0.0, 1.0)  # chordwise fraction
        return 0.016 + 0.020 * np.sin(np.pi * xb)

    surface = resample_polyline(np.vstack([poly, poly[:1]]), h_surface)
    layers = [(surface, 0.0)]
    for d, h in [(0.032, 0.036), (0.072, 0.048), (0.125, 0.065),
                 (0.20, 0.09), (0.30, 0.12)]:
        off = offset_polygon(surface, d)
        layers.append((resample_polyline(np.vstack([off, off[:1]]), h),
                       0.45 * h))

    surf_tree = cKDTree(poly)

    def far_from_body(p, cut):
        return (surf_tree.query(p)[0] > cut) & ~path.contains_points(p)

    local = grid(
        graded([-3.1, 2.1], [0.26]), graded([-2.2, 3.2], [0.26])
    )
    local = local[far_from_body(local, 0.42)]
    middle = grid(graded([-3.0, 7.0], [0.5]), graded([-2.5, 3.5], [0.5]))
    inside_local = (
        (middle[:, 0] > -3.1) & (middle[:, 0] < 2.1)
        & (middle[:, 1] > -2.2) & (middle[:, 1] < 3.2)
    )
    middle = middle[~inside_local]
    outer = grid(graded([-5.0, 10.0], [0.95]), graded([-5.0, 5.0], [0.95]))
    inside_middle = (
        (outer[:, 0] > -3.0) & (outer[:, 0] < 7.0)
        & (outer[:, 1] > -2.5) & (outer[:, 1] < 3.5)
    )
    outer = outer[~inside_middle]

    pts = accept(
        layers + [(local, 0.12), (middle, 0.225), (outer, 0.42)]
    )
    return delaunay_mesh(
        pts,
        lambda x: path.contains_points(x),
        outflow_x=10.0,
        name="naca0012",
    )


def main():
    OUT_DIR.mkdir(exist_ok=True)

    channel = channel_cylinder_mesh()
    check_motion(channel, dt=5e-3, period=5e-3, name="cylinder_channel")
    write_mesh(channel, OUT_DIR / "cylinder_channel.mesh")

    osc = oscillating_cylinder_mesh()
    osc.motion = cases.oscillating_cylinder_motion
    check_motion(osc, dt=0.025, period=cases.OSC_PERIOD,
                 name="cylinder_oscillating")
    osc.motion = None
    write_mesh(osc, OUT_DIR / "cylinder_oscillating.mesh")

    foil = naca0012_mesh()
    foil.motion = cases.airfoil_motion
    check_motion(foil, dt=0.01, period=4.0, name="naca0012")
    foil.motion = None
    write_mesh(foil, OUT_DIR / "naca0012.mesh")

    print(f"meshes written to {OUT_DIR}")


if __name__ == "__main__":
    main()
