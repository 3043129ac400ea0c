"""Single-request execution worker for candidate puzzle programs."""

from .runner import count_ast_nodes, main, run_validate

__all__ = ["count_ast_nodes", "main", "run_validate"]
