"""Dialogue summarization with a hierarchical pointer-generator, supporting
utterance flow modeling and fact regularization."""

__version__ = "0.1.0"
