"""Numerical toolkit for heat equations on model fibered-boundary collars.

Subpackages by capability:

- :mod:`phiheat.geometry` -- model metrics, the degenerate Laplacian's
  coefficients, collar distances, volume-growth completeness test.
- :mod:`phiheat.fields` -- log-radial x Fourier x time grids and fields.
- :mod:`phiheat.holder` -- frame-derivative calculus and sampled weighted
  Holder norms.
- :mod:`phiheat.heatspace` -- blow-up charts, blowdown maps, expansion
  evaluation, leading-order kernel model.
- :mod:`phiheat.solver` -- flux-form discretization, Crank-Nicolson
  semigroup, Duhamel convolution, mass diagnostics.
- :mod:`phiheat.schauder` -- empirical mapping bounds between weighted
  Holder spaces.
- :mod:`phiheat.picard` -- semilinear fixed-point solver with measured
  contraction bookkeeping.
- :mod:`phiheat.cli` -- the ``phi-heat`` batch front-end.
"""

__version__ = "0.1.0"
