"""Catheter electrode localisation from C-arm fluoroscopy.

Modules: ``camera`` (projection geometry), ``simulate`` (synthetic helix
sequences and rendered frames), ``filters`` (electrode segmentation),
``reconstruct`` (triangulation and monoplane recovery), ``mapping``
(convex hull, activation times, fusion) and ``cli``.
"""
__version__ = "0.1.0"

from ._backend import backend_name  # noqa: E402,F401
