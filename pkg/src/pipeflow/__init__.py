"""pipeflow: static multi-dimensional pipelining for affine loop-nest kernels.

Pipeline: parse a kernel, apply full unrolling and complete array
partitioning, derive per-dependence slacks from small exact ILPs, solve a
global scheduling ILP for operation/loop start offsets, then replay the
schedule cycle-accurately to prove validity and measure the latency gain
from overlapping producer and consumer loop nests.
"""

__version__ = "0.1.0"
