"""Example spec files shipped with the package."""
