"""Numerical toolkit for S'-valued diffusions driven by translations.

Solutions of dY = A(Y) dB + L(Y) dt started at a tempered distribution y are
realised as Y_t = tau_{z_t} y, where z_t solves a finite-dimensional SDE with
coefficients <sigma, tau_z y> and <b, tau_z y>.  Modules:

    hermite       Hermite functions, truncations, quadrature, ladder operators
    sobolev       Hermite-Sobolev norms, pairings, Dirac coefficients
    distribution  distribution variants, translation, pairing, A and L
    sde           Brownian paths and the Euler-Maruyama engine
    flow          the distribution-valued flow and its checks
    monotonicity  the constant-coefficient monotonicity inequality
    evolution     kernels, nonlinear convolution, evolution/forward equations
    verify, cli   acceptance battery and command line
"""

__version__ = "0.1.0"
