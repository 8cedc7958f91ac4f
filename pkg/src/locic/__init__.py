"""Multitier language toolchain.

One coherent module describes every peer of a distributed system; the
compiler checks placement and tie conformance, splits the module into
per-peer components, and a layered runtime executes them with pull-based
remote values and push-based remote event streams.
"""

__version__ = "0.1.0"
