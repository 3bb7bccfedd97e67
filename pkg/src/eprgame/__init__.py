"""EPR 2-2-2 experiment as an extensive-form game.

Exact and smooth Perfectly Transparent Equilibrium solvers, parameterised
reward models trained against Born-rule statistics, and Bell/CHSH
evaluation of deterministic hidden-variable runs.
"""

__version__ = "0.1.0"
