"""DOTIN: graph-level learning with task-specific virtual nodes that drop task-irrelevant nodes."""

__version__ = "0.1.0"
