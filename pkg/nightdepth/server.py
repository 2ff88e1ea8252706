"""
MCP server creation and shutdown handling
"""
import atexit
import os
import signal
import logging
import threading
from typing import Callable, List
from mcp.server.fastmcp import FastMCP

from nightdepth.tools import DatasetTools, EnhanceTools, EvaluateTools
from nightdepth.tools.enhance_tool import checkpoint_cache

logger = logging.getLogger(__name__)

SHUTDOWN_SIGNALS = ("SIGINT", "SIGTERM", "SIGHUP")


class ShutdownHooks:
    """Callbacks run exactly once, at signal or interpreter exit."""

    def __init__(self):
        self._hooks: List[Callable[[], None]] = []
        self._done = threading.Event()
        self._lock = threading.Lock()

    def add(self, hook: Callable[[], None]) -> Callable[[], None]:
        if self._done.is_set():
            logger.warning(f"Shutdown already ran; hook {hook.__name__} ignored")
        else:
            self._hooks.append(hook)
        return hook

    def run(self) -> None:
        with self._lock:
            if self._done.is_set():
                return
            self._done.set()
            failures = 0
            for hook in self._hooks:
                try:
                    hook()
                except Exception as e:
                    failures += 1
                    logger.error(f"Shutdown hook {hook.__name__} failed: {e}", exc_info=True)
            logger.info(f"Ran {len(self._hooks)} shutdown hooks ({failures} failed)")

    def on_signal(self, signum: int, frame) -> None:
        logger.info(f"Received signal {signum}, shutting down")
        self.run()
        # stdio transport would otherwise block on its reader thread
        os._exit(0)

    def install(self) -> List[int]:
        """Hooks SIGINT/SIGTERM (and SIGHUP where present) plus atexit."""
        installed = []
        for name in SHUTDOWN_SIGNALS:
            signum = getattr(signal, name, None)
            if signum is None:
                continue
            try:
                signal.signal(signum, self.on_signal)
                installed.append(signum)
            except (ValueError, OSError) as e:
                # only the main thread may install handlers
                logger.warning(f"Cannot handle {name}: {e}")
        atexit.register(self.run)
        return installed


def create_server() -> FastMCP:
    """Creates the nightdepth MCP server with dataset, enhancement and evaluation tools."""
    mcp = FastMCP("nightdepth")

    DatasetTools.register_tools(mcp)
    EnhanceTools.register_tools(mcp)
    EvaluateTools.register_tools(mcp)

    hooks = ShutdownHooks()

    @hooks.add
    def release_checkpoints():
        checkpoint_cache.clear()

    hooks.install()
    logger.info(f"nightdepth MCP server ready with {len(mcp._tool_manager._tools)} tools")
    return mcp
