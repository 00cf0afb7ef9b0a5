"""
MoE Lab
=======

Desk-scale sparse mixture-of-experts encoder-decoders for multi-domain
sequence transduction: a small numpy tensor engine, routing and
conditioning variants, synthetic domains, training, evaluation, cost
accounting and inference benchmarking.
"""

__version__ = "1.0.0"
