"""topic-explorer: bottom-up topic discovery over MCP server texts."""

__version__ = "0.1.0"
