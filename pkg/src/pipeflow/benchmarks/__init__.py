"""Bundled benchmark kernels.

Sources live next to this module as ``.knl`` files. Inner loops carry
explicit initiation intervals sized to their port budgets; ``conv1d`` leaves
its single loop to the autotuner, which must land on II = 7.
"""

from __future__ import annotations

import importlib.resources as resources

# Benchmarks whose nests form producer-consumer chains; overlap must beat
# the sequential baseline on every one of these.
PRODUCER_CONSUMER = (
    "conv_chain",
    "interloop",
    "mm2",
    "unsharp",
    "dus",
    "harris",
    "optical_flow",
)

ALL = (
    "conv1d",
    "matmul",
    "delay",
) + PRODUCER_CONSUMER


def names() -> tuple:
    return ALL


def source(name: str) -> str:
    if name not in ALL:
        raise KeyError(f"unknown benchmark {name!r}; known: {', '.join(ALL)}")
    return resources.files(__package__).joinpath(f"{name}.knl").read_text()


def load(name: str):
    from ..parser import parse_kernel

    return parse_kernel(source(name))
