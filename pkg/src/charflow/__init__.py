"""Transport of signed atomic measures along characteristic flows.

Subpackages cover: moduli of continuity and Gronwall-Osgood envelopes
(`moduli`), velocity fields with empirical condition checkers (`fields`),
characteristic-flow integration (`flowmap`), signed atomic measures
(`measures`), continuity-equation transport and an upwind reference solver
(`transport`, `upwind`), and discrete space-time current decomposition
(`currents`).
"""

__version__ = "0.1.0"
