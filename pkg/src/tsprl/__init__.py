"""Deep Q-learning signal control and transit signal priority on a small intersection simulator."""

__version__ = "0.1.0"
