"""Test package for anchorsum."""
