"""faultlab: a desk-scale chaos experiment platform.

Simulates a small service mesh under deterministic virtual time, injects
faults into a sampled slice of traffic, watches guardrails, and judges the
canary against its baseline.
"""

__version__ = "0.1.0"
