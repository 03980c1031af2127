"""
flowdag

Samples causal DAGs with a flow network that builds a topological sort edge
by edge, plus the synthetic benchmarks, pruning and metrics around it.
"""

__version__ = "0.1.0"


def __getattr__(name):
    # `from flowdag import mcp` loads the server only when asked for
    if name == "mcp":
        from flowdag.server import mcp

        return mcp
    raise AttributeError(f"module 'flowdag' has no attribute '{name}'")
