"""Command line entry point of the batch engine."""
