"""Desk-scale laboratory for simultaneous translation policies.

Builds READ/WRITE policies online by binary search over an incremental
translation scorer, trains a recurrent agent on them, and measures
latency-quality trade-offs.
"""

__version__ = "0.1.0"
