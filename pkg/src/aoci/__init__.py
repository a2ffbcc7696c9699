"""Optimal status updating under the age of changed information (AoCI).

Modules
-------
process     physical-process Markov chains and return probabilities
mdp         the (AoCI, AoI) update MDP: lattice, kernel, costs, Q operators
solver      relative value / policy iteration and structural checks
threshold   closed-form threshold analysis for AoI-independent return probabilities
simulator   slotted Monte Carlo simulation and baseline policies
experiments config-driven tasks, figure presets and result bundles
"""

__version__ = "0.1.0"
