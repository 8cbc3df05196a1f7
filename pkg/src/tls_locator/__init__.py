"""Batch toolkit for locating two-level-system defects at a qubit film edge.

The pipeline stages are: electrostatic field simulation of the film-edge
cross-section, synthetic swap-spectroscopy generation, hyperbolic trace
fitting, inverse localization from tunability ratios, and parameter sweeps
for error analysis.  Each stage reads and writes plain files, so stages can
be re-run in isolation; see the ``tls-locator`` command line entry point.
"""

__version__ = "0.1.0"
