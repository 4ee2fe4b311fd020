"""Bundled word lists (stop words, verb lexicon)."""
