"""Numerical toolkit for ensemble controllability of nonlinear systems.

Subpackages:

- ``polyfield``: exact Lie algebra of polynomial vector fields
- ``exprdsl``: expression language with Taylor-mode differentiation
- ``signals``: closed-form control signals
- ``odesim``: ensemble RK4 integration and L_p(Theta) norms
- ``rigidbody``: rigid-body ensemble controllability determinant tests
- ``moments``: moment-method control synthesis on the scalar model ensemble
- ``lieext``: fast-oscillation Lie extensions and flow decompositions
- ``cli``: scenario-driven command line front end (``ensctl``)
"""

__version__ = "0.1.0"
