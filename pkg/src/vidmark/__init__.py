"""Video watermarking with multi-dimensional payloads.

Embeds a global bit string plus optional spatial or spatiotemporal mask
payloads into short clips, survives a configurable attack pool, and
recovers the bits, the embedded region, and the temporal frame order.
"""

__version__ = "0.1.0"
