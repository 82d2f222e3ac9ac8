"""Space-time hybridized DG solvers for incompressible flow on moving
2D domains.

Submodules: meshing (slab extrusion), spaces (trace maps), forms
(assembly), solver (static condensation + Picard), diagnostics (norms,
energy, momentum balance, forces), spatial (initial fields), cases
(named setups), config/output/run/cli (driver layers).
"""

__version__ = "0.1.0"
