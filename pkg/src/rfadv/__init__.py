"""Simulated RF modulation classification under adversarial perturbation.

Modules: ``modem`` (constellations, pulse shaping, demodulation),
``channel`` (AWGN, phase and time offsets), ``receiver`` (correlation
sync and BER), ``data`` (datasets and their file format), ``neural``
(the numpy classifier), ``attacks`` (PGD, universal and class-universal
perturbations) and ``experiments`` (sweeps and reports behind the CLI).
"""

__version__ = "0.1.0"
