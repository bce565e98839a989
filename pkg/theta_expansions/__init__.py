import importlib.metadata
import warnings

from theta_expansions.errors import ThetaExpansionError
from theta_expansions.measure import MeasureContext
from theta_expansions.models import ThetaParams
from theta_expansions.qfield import QuadNumber

try:
    __version__ = importlib.metadata.version("theta-expansions")
except importlib.metadata.PackageNotFoundError as e:  # pragma: no cover
    warnings.warn(f"Could not determine version of {__name__}\n{e!s}", stacklevel=2)
    __version__ = "unknown"

__all__ = [
    "MeasureContext",
    "QuadNumber",
    "ThetaExpansionError",
    "ThetaParams",
    "__version__",
]
