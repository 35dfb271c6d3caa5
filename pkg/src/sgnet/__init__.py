"""Syntax-guided self-attention over dependency-tree masks."""
