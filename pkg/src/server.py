#!/usr/bin/env python3
"""
MCP Server

Registers the detector adaptation tools (data generation, ingestion, teacher
training, adaptation, evaluation, zero-shot matrix, experiment grid, report)
and exposes the text artifacts of the output directory as resources. Jobs are
batch runs: a tool call returns when its run has finished.
"""

import asyncio
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional

from mcp.server import NotificationOptions, Server
from mcp.server.models import InitializationOptions
from mcp.server.stdio import stdio_server
from mcp.types import Resource, TextContent, Tool

from fretal.config import OUTPUT_ROOT_ENV
from fretal.errors import FretalError
from resources.artifact_resources import get_artifact_resources, read_artifact
from tools.data_tools import generate_data, get_data_tools, ingest_data
from tools.eval_tools import evaluate, get_eval_tools, report, zero_shot
from tools.train_tools import adapt, get_train_tools, run_experiment_tool, train_teacher

logger = logging.getLogger(__name__)

SERVER_NAME = "fretal-server"
SERVER_VERSION = "0.1.0"

Handler = Callable[[Dict[str, Any]], Awaitable[Dict[str, Any]]]

HANDLERS: Dict[str, Handler] = {
    "generate_data": generate_data,
    "ingest": ingest_data,
    "train_teacher": train_teacher,
    "adapt": adapt,
    "evaluate": evaluate,
    "zero_shot": zero_shot,
    "run_experiment": run_experiment_tool,
    "report": report,
}


class MCPServer:
    """Tool and resource registry wired to an MCP ``Server``."""

    def __init__(self, output_dir: Optional[Path] = None):
        self.server = Server(SERVER_NAME)
        self.output_dir = Path(output_dir or os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        self.tools: Dict[str, Tool] = {}
        self._register_tools()
        self._setup_handlers()
        logger.info("MCP Server initialized with %d tools over %s", len(self.tools), self.output_dir)

    def _register_tools(self) -> None:
        for tool in [*get_data_tools(), *get_train_tools(), *get_eval_tools()]:
            self.tools[tool.name] = tool
        missing = set(self.tools) ^ set(HANDLERS)
        if missing:
            raise RuntimeError(f"tools without handlers (or handlers without tools): {sorted(missing)}")

    async def call(self, name: str, arguments: Dict[str, Any]) -> List[TextContent]:
        """Route a tool call; failures come back as ``Error: ...`` text."""
        logger.info("Calling tool: %s with args: %s", name, arguments)
        handler = HANDLERS.get(name)
        try:
            if handler is None:
                raise ValueError(f"Unknown tool: {name}")
            args = dict(arguments)
            args.setdefault("out", str(self.output_dir))
            result = await handler(args)
            return [TextContent(type="text", text=json.dumps(result, indent=2, default=str))]
        except FretalError as e:
            logger.error("Tool %s failed (%s): %s", name, type(e).__name__, e)
            return [TextContent(type="text", text=f"Error: {type(e).__name__} (exit {e.exit_code}): {e}")]
        except Exception as e:
            logger.error("Error calling tool %s: %s", name, e)
            return [TextContent(type="text", text=f"Error: {e}")]

    def _setup_handlers(self) -> None:
        @self.server.list_tools()
        async def handle_list_tools() -> List[Tool]:
            return list(self.tools.values())

        @self.server.call_tool()
        async def handle_call_tool(name: str, arguments: Optional[Dict[str, Any]]) -> List[TextContent]:
            return await self.call(name, arguments or {})

        @self.server.list_resources()
        async def handle_list_resources() -> List[Resource]:
            return get_artifact_resources(self.output_dir)

        @self.server.read_resource()
        async def handle_read_resource(uri: Any) -> str:
            return await read_artifact(self.output_dir, str(uri))


async def main() -> None:
    logger.info("Starting MCP Server...")
    mcp_server = MCPServer()
    options = InitializationOptions(
        server_name=SERVER_NAME,
        server_version=SERVER_VERSION,
        capabilities=mcp_server.server.get_capabilities(
            notification_options=NotificationOptions(),
            experimental_capabilities={},
        ),
    )
    async with stdio_server() as (read_stream, write_stream):
        await mcp_server.server.run(read_stream, write_stream, options)


def run() -> None:
    # stdout carries the protocol
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    asyncio.run(main())


if __name__ == "__main__":
    run()
