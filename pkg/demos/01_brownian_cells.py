# coding: utf-8

# # Singular Brownian cell integrals
#
# The atomic object here is the double integral of |W_t - W_s|^(-alpha) over
# a pair of dyadic cells.  We draw a few paths, look at one table, and check
# the mean of the unit-cell integral against its Fubini value.

# In[1]:

import numpy as np
from scipy.special import gamma

from wnd.hls_mc import Ensemble, moment_from_samples, sample_cell_integrals
from wnd.rng_paths import DyadicGrid, generate_path, spawn_seed
from wnd.singular_kernel import cell_table, deterministic_cell_table


# A path is determined by (master seed, path index); refining it later only
# adds bridge midpoints and never moves existing nodes.

# In[2]:

path = generate_path(DyadicGrid(1.0, 9), spawn_seed(2024, 0))
print("W(1) =", path.values[-1])


# The level-3 table of this path next to the classical |t - s|^-alpha table.
# Diagonal cells dominate in both, but the Brownian table is much rougher.

# In[3]:

tab = cell_table(path, 3, 0.5)
det = deterministic_cell_table(3, 0.5)
np.set_printoptions(precision=4, suppress=True)
print(tab.entries)
print(det.entries)


# Mean of the unit-cell integral over 2000 paths.  By Fubini it equals the
# integral of |t - s|^(-alpha/2) (32/21 at alpha = 1/2) times E|Z|^-alpha.

# In[4]:

ens = Ensemble(DyadicGrid(1.0, 0), 2000, 1)
x = sample_cell_integrals(ens, 0, 0, 0.5)
fubini = 32 / 21 * 2**-0.25 * gamma(0.25) / gamma(0.5)
print(f"MC mean {x.mean():.4f} +- {x.std(ddof=1) / np.sqrt(x.size):.4f}, Fubini {fubini:.4f}")


# Shrinking the cell by 2 shrinks the integral by 2^(2 - alpha/2) in law, so
# log E[I] against log h has slope 1.75.

# In[5]:

means = []
for N in range(2, 7):
    y = sample_cell_integrals(ens, 0, 0, 0.5, N=N)
    means.append(moment_from_samples(y, 1, 0.5, N, 2.0**-N).mean)
slope = np.polyfit(np.log(2.0 ** -np.arange(2, 7)), np.log(means), 1)[0]
print("slope", slope)
