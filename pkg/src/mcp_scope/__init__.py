"""mcp-scope: monitoring pipeline for public MCP servers and their agent tools."""

__version__ = "0.1.0"
