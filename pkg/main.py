#!/usr/bin/env python3
"""
nightdepth - MCP server exposing synthetic night-set generation, image
enhancement and depth evaluation. Use ``nightdepth`` (cli.py) for training.
"""

from nightdepth.server import create_server


if __name__ == "__main__":
    # Create and run server
    server = create_server()
    server.run(transport='stdio')
