"""Synthetic IoT/IIoT network traffic generator with a kill-chain attack and labelled flows."""

__version__ = "0.1.0"
