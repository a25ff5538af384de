"""Emergency-rescue crowdsensing simulator with a value-decomposition learner."""
__version__ = "0.1.0"
