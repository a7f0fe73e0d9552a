"""Numerical machinery for pressure regularity of the transient Stokes system.

Subpackages and modules:

* :mod:`stokes_pressure.geometry` -- star-shaped domains, boundary charts, cutoffs
* :mod:`stokes_pressure.bogovskii` -- the Bogovskii operator and its identities
* :mod:`stokes_pressure.helmholtz` -- extension and Leray projection on a periodic box
* :mod:`stokes_pressure.stokes` -- MAC-grid transient Stokes solver
* :mod:`stokes_pressure.transform` -- boundary flattening and pressure Hessian recovery
* :mod:`stokes_pressure.norms` -- discrete Sobolev and Bochner norms
* :mod:`stokes_pressure.harness` -- CLI, configuration and reporting
"""

__version__ = "0.1.0"
