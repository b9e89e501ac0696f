"""Figure rendering for the dimer sampling benchmark's CSV outputs."""

__version__ = "0.1.0"

from .figures import FigureSpec, render  # noqa: F401
from .schemas import SchemaError  # noqa: F401
