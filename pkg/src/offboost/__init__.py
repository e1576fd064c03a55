"""Off-policy actor-critic with an adaptive constraint toward the replay
buffer's implicit offline optimum, plus an exact tabular oracle for the
underlying policy-iteration scheme."""

__version__ = "0.1.0"
