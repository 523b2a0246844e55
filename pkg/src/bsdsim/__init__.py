"""Simulation toolkit for a variable-elastic back support device.

Modules: ``band`` (clutched spring network), ``pneumo`` (IPAM gas dynamics),
``vea`` (composite actuator and bench scenarios), ``controller`` (profile
selection and valve logic), ``estimator`` (state/weight forests), ``synth``
(synthetic sensor traces), ``liftopt`` (static optimization), ``replay``
(closed-loop harness) and ``cli``.
"""
__version__ = "0.1.0"
