# coding: utf-8

# # Extremal values of the discrete bilinear form
#
# For a cell table I and exponents p, q the quantity of interest is the
# largest value of sum f_j I_jk g_k over nonnegative step functions with unit
# L^p and L^q norms.  The alternating Hoelder ascent finds it; at p = q = 2 it
# is the top singular value divided by h.

# In[1]:

import numpy as np

from wnd.hls_mc import TAIL_QUAD, classical_check, extremal_search
from wnd.rng_paths import DyadicGrid, generate_path, spawn_seed
from wnd.singular_kernel import cell_table, deterministic_cell_table


# In[2]:

tab = deterministic_cell_table(5, 0.5)
r = extremal_search(tab, 2.0, 2.0)
print(r.value, np.linalg.svd(tab.entries, compute_uv=False)[0] / tab.h, r.iterations)


# The history never decreases: every half step is an exact maximiser.

# In[3]:

r = extremal_search(tab, 1.25, 1.25)
print(np.all(np.diff(r.history) >= 0), r.history[:5])


# Classical kernel on its scaling line 1/p + 1/q = 2 - alpha: values level off.

# In[4]:

vals, slope = classical_check(0.5, 4 / 3, 4 / 3, range(3, 9))
print(vals, slope)


# One Brownian path, levels 4..7, with 1/p + 1/q = 1.6 (below 2 - alpha/2).

# In[5]:

path = generate_path(DyadicGrid(1.0, 7 + TAIL_QUAD.interp_margin), spawn_seed(13, 0))
for N in range(4, 8):
    t = cell_table(path, N, 0.5, TAIL_QUAD)
    print(N, extremal_search(t, 1.25, 1.25, restarts=2).value)
