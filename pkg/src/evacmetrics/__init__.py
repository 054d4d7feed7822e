"""Evacuation metrics from aggregated population and movement panels."""

from __future__ import annotations

__version__ = "0.1.0"
