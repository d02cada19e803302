"""Movement-initiation detection and prediction from intracranial recordings and pose."""

__version__ = "0.1.0"
