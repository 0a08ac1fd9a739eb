"""Core pipeline modules for critiqa."""
