# coding: utf-8

# # Schroedinger flow with white-noise dispersion
#
# The linear flow multiplies mode xi by exp(-i |xi|^2 (W_t - W_s)).  We watch a
# Gaussian spread, then solve the nonlinear equation two ways and compare.

# In[1]:

import numpy as np

from wnd.nls_solver import SolverParams, calibrate_constants, globalize, split_step_evolve
from wnd.propagator import GridSpec, apply_propagator, gaussian_field, lp_norm
from wnd.rng_paths import DyadicGrid, generate_path, spawn_seed


# Peak amplitude follows (1 + 4 tau^2)^(-1/4) whatever the sign of tau.

# In[2]:

g = GridSpec(1, 2048, 256.0)
psi0 = gaussian_field(g)
for tau in (-8.0, -1.0, 0.5, 8.0):
    print(tau, lp_norm(apply_propagator(psi0, tau), np.inf), (1 + 4 * tau**2) ** -0.25)


# Along a Brownian path the phase wanders back and forth, so the peak does not
# decay monotonically in time.

# In[3]:

path = generate_path(DyadicGrid(1.0, 8), spawn_seed(3, 0))
peaks = [lp_norm(apply_propagator(psi0, w), np.inf) for w in path.values[::32]]
print(np.round(peaks, 3))


# Mild-form Picard slabs against Lie splitting, cubic defocusing case.  The
# slab rule needs Strichartz constants; we estimate them from free flows.

# In[4]:

G = GridSpec(1, 256, 32.0)
u0 = 0.5 * gaussian_field(G)
T = 0.25
cal = [generate_path(DyadicGrid(T, 10), spawn_seed(3, 1 + i)) for i in range(5)]
C1, C2 = calibrate_constants(u0, 1.0, 6.0, cal, 2.0**-10, T=T)
path = generate_path(DyadicGrid(T, 10), spawn_seed(3, 0))
for k in (8, 9, 10):
    prm = SolverParams(1, 1.0, 1.0, 6.0, T, G, 2.0**-k, C1_hat=C1, C2_hat=C2)
    pic = globalize(u0, path, prm)
    spl = split_step_evolve(u0, path, prm)
    print(k, int(pic.slab_id.max()) + 1, "slabs; difference", lp_norm(pic.final - spl.final, 2))
