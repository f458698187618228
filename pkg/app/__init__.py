"""Randomized low-rank plus sparse decomposition toolkit"""

__version__ = "0.1.0"
