"""Compact neural text-to-speech inference engine."""
