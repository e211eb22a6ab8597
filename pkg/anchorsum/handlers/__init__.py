"""Command handlers for the anchorsum CLI."""
