"""Numerical laboratory for the Schroedinger equation with white-noise dispersion.

Modules: ``rng_paths`` (dyadic Brownian paths), ``singular_kernel`` (cell
integrals of |W_t - W_s|^-alpha), ``hls_mc`` (Monte Carlo HLS checks),
``propagator`` (random Fourier multiplier), ``nls_solver`` (Picard and
split-step solvers) and ``experiments`` / ``cli`` (the ``wnd`` command).
"""

__version__ = "0.1.0"
