"""Shipped resources: default configs, backend profiles and prompt templates."""
