"""qrt: a deterministic red-teaming workbench for BB84 / decoy-state QKD."""

__version__ = "0.1.0"
