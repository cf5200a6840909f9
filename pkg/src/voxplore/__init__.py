"""Multi-agent voxel exploration: mapping, frontier goals, corridor-constrained
MIQP planning, and a deterministic simulation harness."""

__version__ = "0.1.0"
