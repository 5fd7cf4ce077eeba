"""Optimal stopping of Markovian reward processes with per-date stopping networks.

The engine prices Bermudan/American-style derivatives by expressing a randomized
stopping time through soft stopping factors, training one small feed-forward
network per exercise date against a single expected-payoff objective, and then
hardening the learned rule into a genuine stopping time whose Monte Carlo price
is a low-biased estimate of the optimal value.

Modules
-------
paths_models        time grids, correlation factors, path simulation, counter-based RNG
payoffs             exercise payoff families used by the built-in benchmarks
stopnet             per-date stopping networks: init, forward, hand-written backward
stopping_objective  soft stopping factors, the training objective, hard stopping times
optimizer           moment-based ascent (Adam-style) and plain stochastic ascent
training            the training loop, price estimation, confidence intervals
oracles             closed-form / binomial / lattice references and dimension reduction
cli_harness         config files, benchmark registry, command-line interface
figures             rendering of training curves and benchmark charts
"""

__version__ = "0.1.0"
