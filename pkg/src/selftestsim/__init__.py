"""Simulator and white-box analysis toolkit for a single-device protocol that
certifies N EPR pairs (self-test) or a quantum-dimension lower bound
(dimension test) using trapdoor claw-free function families."""

from . import analysis, entcf, harness, protocol, prover, qsim, transport
from .errors import SelfTestError

__all__ = [
    "analysis",
    "entcf",
    "harness",
    "protocol",
    "prover",
    "qsim",
    "transport",
    "SelfTestError",
]

__version__ = "0.1.0"
