"""Small-vocabulary HMM speech recognizer for a voice-driven Quran reader."""

__version__ = "0.1.0"
