"""Joint detection, recognition and localization of simultaneous acoustic
events with multiple small microphone arrays."""

__version__ = "0.1.0"
