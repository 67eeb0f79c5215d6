"""Token-level C repair pipeline: mining, diff codec, tiny transformer, beams."""

__version__ = "0.1.0"
