"""Structure-preserving finite-element workbench for time-dependent
incompressible MHD with block preconditioners.

Velocity is discretized with vector P2 elements, pressure with P0,
the magnetic flux density with lowest-order Raviart-Thomas elements,
and the scalar electric field with P1.  The discrete curl mapping P1
into RT0 is an integer incidence matrix, so magnetic field updates of
the form B <- B_prev - k*curl(E) keep div B = 0 to machine precision
(in fact exactly, in integer arithmetic on the incidence structure).

The linear systems arising from a symmetric Picard linearization are
solved with MINRES, GMRES, or flexible GMRES, preconditioned by
block-diagonal or block-triangular preconditioners built from the
weighted norms that make the linearized operator well-posed uniformly
in the time step, Reynolds and magnetic Reynolds numbers.
"""

__version__ = "0.1.0"
