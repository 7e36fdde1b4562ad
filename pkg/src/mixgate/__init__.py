"""Mixed-species light-shift gate: simulation and characterisation protocols."""
