"""PAC-Bayes-Chernoff bounds: transforms, evaluators, optimal posteriors and Monte Carlo checks."""

__version__ = "0.1.0"
