"""Emulator, assembler and adversarial test harness for the Cerisier capability machine."""

__version__ = "0.1.0"
