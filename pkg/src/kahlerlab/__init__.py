"""kahlerlab: chart-based numerics for Kähler geometry.

Model manifolds with exact metric jets, h-projective solution fields,
Frobenius prolongation transport, extended-operator spectra, and curve
integration, driven either as a library or through the ``kahlerlab`` CLI.
"""

__version__ = "0.1.0"
