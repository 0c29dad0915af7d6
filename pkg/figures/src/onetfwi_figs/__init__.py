"""Figure rendering for onetfwi exports (file-based interface only)."""

from .render import FigureSpec, render
from .schemas import SchemaError

__all__ = ["FigureSpec", "render", "SchemaError"]
