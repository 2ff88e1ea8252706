import inspect
import logging

from typing import Any, Optional, get_origin, Dict

from mcp.server.fastmcp import FastMCP, Context
from mcp.types import AnyFunction
from mcp.server.fastmcp.tools.base import Tool, func_metadata

from ..utils.validation import ValidationError

logger = logging.getLogger(__name__)


class ToolManager:
    """
    Registers bound methods as MCP tools whose results are wrapped in a
    uniform response envelope.
    """

    def __init__(self, mcp: FastMCP):
        self.mcp = mcp

    def prepare(self) -> None:
        """Hook run before every tool call; subclasses refresh their workspace here."""

    def response_formatter(
        self,
        result: Any,
        status: str = 'success',
        error_type: Optional[str] = None
        ) -> Dict[str, Any]:
        """Formats and returns the result"""
        response = {"result": result, "status": status}
        if status == 'error':
            response["error_type"] = error_type
        return response

    def add_tool(self, func: AnyFunction):
        """
        Adds a tool to the MCP with its function name and documentation.
        """
        try:

            def initialize_func(*args, **kwargs):
                """
                A wrapper function that calls the original function and formats the result.
                """
                try:
                    self.prepare()
                    result = func(*args, **kwargs)
                    return self.response_formatter(result)
                except ValidationError as e:
                    logger.warning(f"Tool {func.__name__} rejected input: {e}")
                    return self.response_formatter(e.to_dict(), status='error', error_type=type(e).__name__)
                except Exception as e:
                    logger.error(f"Tool {func.__name__} failed: {e}", exc_info=True)
                    return self.response_formatter(str(e), status='error', error_type=type(e).__name__)

            # Registered through Tool directly because context_kwarg has to be resolved
            # against the original signature, not the wrapper's.
            context_kwarg = None
            sig = inspect.signature(func)
            for param_name, param in sig.parameters.items():
                if get_origin(param.annotation) is not None or not inspect.isclass(param.annotation):
                    continue
                if issubclass(param.annotation, Context):
                    context_kwarg = param_name
                    break

            func_arg_metadata = func_metadata(
                func,
                skip_names=[context_kwarg] if context_kwarg is not None else [],
            )
            parameters = func_arg_metadata.arg_model.model_json_schema()

            tool = Tool(
                fn=initialize_func,
                name=func.__name__,
                title=None,
                description=func.__doc__,
                parameters=parameters,
                fn_metadata=func_arg_metadata,
                is_async=False,
                context_kwarg=context_kwarg,
                annotations=None,
            )
            self.mcp._tool_manager._tools[tool.name] = tool
            logger.debug(f"Registered tool {tool.name}")

        except Exception as e:
            raise RuntimeError(f"Failed to register tool {func.__name__}: {str(e)}")
