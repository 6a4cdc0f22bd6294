"""Prompt-query encoding stack and data-efficient GRPO at desk scale."""

__version__ = "0.1.0"
