"""State-of-charge estimation for a 2RC equivalent-circuit lithium-ion cell."""

from socest.kernels import BACKEND

__version__ = "0.1.0"
