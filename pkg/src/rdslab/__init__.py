"""Simulation and certification of random dynamical systems.

Two model families are covered: a coordinate-wise martingale diffusion on
the unit cube and random Volterra polynomial stochastic operators on the
probability simplex.
"""

import os

# The default TBB layer on some systems is too old for numba and warns on
# first parallel call; the work-queue layer is always available.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
if "RDSLAB_THREADS" in os.environ:
    os.environ.setdefault("NUMBA_NUM_THREADS", os.environ["RDSLAB_THREADS"])

__version__ = "0.1.0"
