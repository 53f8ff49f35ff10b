"""Subcommand handlers for the pipeline CLI."""
