"""Configuration and record models."""
