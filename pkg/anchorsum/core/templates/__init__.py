"""Shipped prompt templates."""
