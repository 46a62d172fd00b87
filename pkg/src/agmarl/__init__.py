"""Graph-based multi-agent scheduling with stress-aware lexicographic node selection."""

__version__ = "0.1.0"
