"""INT16 CPWL nonlinearities on a reconfigurable systolic array."""

__version__ = "0.1.0"
