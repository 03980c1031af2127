#!/usr/bin/env python
"""
Launcher script for the FlowDag MCP server.
Run this file (or `mcp run server_runner.py`) to start the server.
"""

import os
import sys

# Make the package importable without installing it
current_dir = os.path.dirname(os.path.abspath(__file__))
if current_dir not in sys.path:
    sys.path.insert(0, current_dir)

from flowdag.server import mcp  # noqa: E402

if __name__ == "__main__":
    print("Starting FlowDag MCP server...", file=sys.stderr)
    print(f"Runs directory: {os.environ.get('GFC_RUNS_DIR', 'runs')}", file=sys.stderr)
    mcp.run()
