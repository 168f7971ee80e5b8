# Tool handlers shared by the CLI and the MCP server
