"""servingbench: stochastic-workload benchmarking for model-serving systems."""

__version__ = "0.1.0"
