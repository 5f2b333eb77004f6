"""Multi-view collaborative 3D hand pose estimation at desk scale.

Pure numpy with optional numba kernels (``MVHAND_DISABLE_NUMBA=1`` turns them off).
"""
__version__ = "0.1.0"
