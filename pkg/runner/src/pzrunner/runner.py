#!/usr/bin/env python3
"""Interpreter-side worker for candidate puzzle programs.

Reads exactly one JSON request line from stdin, performs it, writes exactly
one JSON reply line to stdout, and exits. Stdlib only; launched fresh per
task so no state survives between programs.

  request: {"id": str, "program": str, "op": "validate" | "ast_count"}
  reply:   {"id": str, "outcome": str, "detail": str,
            "ast_nodes": int | null, "wall_time": float}

Outcomes: "pass" (program ran and its trailing assertion held), "fail"
(assertion failed), "runtime-error", "parse-error", "timeout" (only from
the internal watchdog; the orchestrator usually kills us first).

Exit code 0 after a well-formed reply, nonzero otherwise. A --timeout
argument arms a watchdog that force-replies "timeout" and exits at
timeout + 1s in case the parent forgets to kill us.
"""

import argparse
import ast
import io
import json
import os
import sys
import threading
import time

CAPTURE_LIMIT = 2048

VALIDATE = "validate"
AST_COUNT = "ast_count"


def count_ast_nodes(source: str) -> int:
    """Total node count of the parse tree; every node visited exactly once."""
    return sum(1 for _ in ast.walk(ast.parse(source)))


def run_validate(program: str) -> tuple[str, str]:
    """Execute a self-contained program; classify how it ended.

    Returns (outcome, detail). The program runs in a scrubbed namespace
    with builtins intact; its stdout/stderr are captured into detail.
    """
    try:
        code = compile(program, "<candidate>", "exec")
    except SyntaxError as exc:
        return "parse-error", f"SyntaxError: {exc.msg} (line {exc.lineno})"

    namespace = {"__name__": "__main__", "__builtins__": __builtins__}
    captured = io.StringIO()
    old_out, old_err = sys.stdout, sys.stderr
    sys.stdout = sys.stderr = captured
    try:
        exec(code, namespace)
        outcome, detail = "pass", ""
    except AssertionError as exc:
        outcome, detail = "fail", f"AssertionError: {exc}"
    except SystemExit as exc:
        outcome, detail = "runtime-error", f"SystemExit: {exc.code}"
    except Exception as exc:
        outcome, detail = "runtime-error", f"{type(exc).__name__}: {exc}"
    finally:
        sys.stdout, sys.stderr = old_out, old_err

    output = captured.getvalue()
    if output:
        detail += "\n--- captured output ---\n" + output[:CAPTURE_LIMIT]
    return outcome, detail


def _arm_watchdog(reply_stream, request_id: str, timeout: float) -> None:
    """Force a timeout reply if the program outlives timeout + 1s grace."""

    def fire():
        reply = {
            "id": request_id,
            "outcome": "timeout",
            "detail": f"runner watchdog fired after {timeout:.1f}s + grace",
            "ast_nodes": None,
            "wall_time": timeout,
        }
        reply_stream.write(json.dumps(reply) + "\n")
        reply_stream.flush()
        os._exit(0)

    timer = threading.Timer(timeout + 1.0, fire)
    timer.daemon = True
    timer.start()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--timeout", type=float, default=0.0)
    args = parser.parse_args(argv)

    proto_out = sys.stdout
    line = sys.stdin.readline()
    try:
        request = json.loads(line)
        request_id = request["id"]
        program = request["program"]
        op = request["op"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        sys.stderr.write(f"malformed request: {exc}\n")
        return 2
    if op not in (VALIDATE, AST_COUNT):
        sys.stderr.write(f"unknown op {op!r}\n")
        return 2
    if not isinstance(program, str):
        sys.stderr.write("program must be a string\n")
        return 2

    if args.timeout > 0:
        _arm_watchdog(proto_out, request_id, args.timeout)

    ast_nodes = None
    start = time.monotonic()
    if op == VALIDATE:
        outcome, detail = run_validate(program)
    else:
        try:
            ast_nodes = count_ast_nodes(program)
            outcome, detail = "pass", ""
        except SyntaxError as exc:
            outcome, detail = "parse-error", f"SyntaxError: {exc.msg} (line {exc.lineno})"
    wall_time = time.monotonic() - start

    reply = {
        "id": request_id,
        "outcome": outcome,
        "detail": detail,
        "ast_nodes": ast_nodes,
        "wall_time": wall_time,
    }
    proto_out.write(json.dumps(reply) + "\n")
    proto_out.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
