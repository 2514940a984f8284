"""Hot numeric kernels: numba @njit builds plus pure-numpy fallbacks.

Modules here contain no domain logic, only tight loops.  Each public
kernel exists as ``<name>_numba`` and ``<name>_numpy``; the library-facing
callable is chosen via :mod:`tlonlab.backend`.
"""
