"""Remote cache-timing attack laboratory for T-table AES-128."""

from . import aes, attack, cachesim, channel, countermeasures, harness, keysearch

__all__ = [
    "aes",
    "attack",
    "cachesim",
    "channel",
    "countermeasures",
    "harness",
    "keysearch",
]

__version__ = "0.1.0"
