"""Reverse graph linearization for seq2seq AMR parsing, at desk scale."""
from ._kernels import backend
from .amr_graph import AmrGraph, parse_penman, serialize_penman
from .linearize import Order, delinearize, linearize, reverse_tokens
from .smatch import smatch

__version__ = "0.1.0"

__all__ = [
    "AmrGraph",
    "Order",
    "backend",
    "delinearize",
    "linearize",
    "parse_penman",
    "reverse_tokens",
    "serialize_penman",
    "smatch",
]
