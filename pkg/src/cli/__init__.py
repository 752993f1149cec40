"""Command-line surface of swincd."""
