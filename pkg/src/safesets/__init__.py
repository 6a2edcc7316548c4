"""Safe-control synthesis via control barrier function filters.

Subpackages group the filter families: fixed-time (fxt), robust (rcbf),
input-constrained (iccbf), consolidated (ccbf), rate-tunable (rtcbf),
predictive (becbf), sampled-data (zoh), multi-agent adversarial
(adversarial), and nonsmooth selections (nonsmooth). `numkit` holds the
embedded QP/LP solver and integrators; `lab` holds the scenario runner.
"""

from . import errors
from .numkit import (
    OdeProblem,
    QuadraticProgram,
    Solution,
    chebyshev_center,
    finite_diff,
    integrate_zoh,
    solve_qp,
)

__all__ = [
    "errors",
    "OdeProblem",
    "QuadraticProgram",
    "Solution",
    "chebyshev_center",
    "finite_diff",
    "integrate_zoh",
    "solve_qp",
]

__version__ = "0.1.0"
