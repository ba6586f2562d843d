"""trafficlab: regression-initialized conditional-diffusion traffic scene
generation with per-type experts, an evaluation harness, and an interactive
editing service."""

__version__ = "0.1.0"
