"""Forced-oscillation source localization with ensemble sparse identification."""
