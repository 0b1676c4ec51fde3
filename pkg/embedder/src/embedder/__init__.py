from .encode import DEFAULT_MODEL, EmbedJob, EmbedderError, TextEncoder, embed_corpus

__version__ = "0.1.0"

__all__ = ["DEFAULT_MODEL", "EmbedJob", "EmbedderError", "TextEncoder", "embed_corpus"]
