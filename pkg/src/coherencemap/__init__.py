"""Forward simulation and reconstruction of coherence-area noise maps in twin beams."""

__version__ = "0.1.0"
