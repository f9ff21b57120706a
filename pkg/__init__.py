"""
ncsolve
=======

First-order solvers for structured nonconvex composite problems with
computable stationarity certificates.
"""

__version__ = "1.0.0"
__description__ = "Structured nonconvex composite solvers with stationarity certificates"
