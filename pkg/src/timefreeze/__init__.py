"""Time-freezing reformulation of ODEs with state jumps.

Impacts are replaced by auxiliary spring-damper dynamics during which an
extra clock state stands still. The resulting Filippov system is simulated
with fixed-step integrators, and time-optimal control problems are transcribed
into penalized complementarity NLPs solved by an interior-point method.
"""
from .dynamics import *  # noqa: F401,F403
from .dynamics import __all__ as _dyn_all
from .kernels import BACKEND
from .ocp import *  # noqa: F401,F403
from .ocp import __all__ as _ocp_all
from .simulate import *  # noqa: F401,F403
from .simulate import __all__ as _sim_all

__version__ = "0.1.0"

__all__ = [*_dyn_all, *_sim_all, *_ocp_all, "BACKEND", "__version__"]
