"""Nuisance-robust prediction on synthetic families: randomize away the
nuisance-label relationship (by importance weighting or generation), then
distill a representation whose joint dependence with the nuisance is
penalized by a classification critic.  Closed-form oracles for every
family back the test suite."""

__version__ = "0.1.0"
