"""Drives candidate programs through an external runner process.

One runner process per task: the orchestrator writes a single JSON request
line to the runner's stdin, reads a single JSON reply line, and kills the
process group on timeout. Verdict classification lives here; actual
execution semantics live in the runner.

Wire protocol (one line each way):
  request: {"id": str, "program": str, "op": "validate" | "ast_count"}
  reply:   {"id": str, "outcome": str, "detail": str,
            "ast_nodes": int | null, "wall_time": float}
"""

import hashlib
import json
import logging
import os
import resource
import signal
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor

from .core import (
    OUTCOME_FAIL,
    OUTCOME_RUNTIME_ERROR,
    OUTCOME_TIMEOUT,
    OUTCOMES,
    Puzzle,
    SandboxConfig,
    ValidityVerdict,
)

logger = logging.getLogger(__name__)

_STDERR_EXCERPT = 2048


class SandboxProtocolError(Exception):
    """Runner replied with something that is not a protocol reply."""


def _request_id(program: str) -> str:
    return hashlib.sha256(program.encode("utf-8")).hexdigest()[:12]


def _make_preexec(memory_cap: int):
    # runs between fork and exec, possibly with other threads live in the
    # parent: must stay restricted to async-signal-safe calls
    def preexec():
        os.setsid()
        if memory_cap > 0:
            resource.setrlimit(resource.RLIMIT_AS, (memory_cap, memory_cap))

    return preexec


def _run_request(request: dict, cfg: SandboxConfig) -> dict:
    """Launch a runner, exchange one request/reply, enforce the timeout.

    Returns the reply dict, or a synthesized timeout/crash reply. Raises
    SandboxProtocolError on desync (garbage reply, wrong id, silent exit 0).
    """
    if not cfg.runner_command:
        raise SandboxProtocolError("no runner command configured")
    line = json.dumps(request) + "\n"
    start = time.monotonic()
    proc = subprocess.Popen(
        cfg.runner_command,
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
        preexec_fn=_make_preexec(cfg.memory_cap),
    )
    try:
        stdout, stderr = proc.communicate(input=line, timeout=cfg.timeout)
    except subprocess.TimeoutExpired:
        _kill_group(proc)
        stdout, stderr = proc.communicate()
        elapsed = time.monotonic() - start
        return {
            "id": request["id"],
            "outcome": OUTCOME_TIMEOUT,
            "detail": f"no reply within {cfg.timeout:.1f}s",
            "ast_nodes": None,
            "wall_time": elapsed,
        }

    reply_line = next((ln for ln in stdout.splitlines() if ln.strip()), "")
    if not reply_line:
        if proc.returncode == 0:
            raise SandboxProtocolError("runner exited 0 without a reply line")
        elapsed = time.monotonic() - start
        return {
            "id": request["id"],
            "outcome": OUTCOME_RUNTIME_ERROR,
            "detail": f"runner exited {proc.returncode}: {stderr[:_STDERR_EXCERPT]}",
            "ast_nodes": None,
            "wall_time": elapsed,
        }
    try:
        reply = json.loads(reply_line)
    except json.JSONDecodeError as exc:
        raise SandboxProtocolError(f"unparseable runner reply {reply_line[:200]!r}") from exc
    if reply.get("id") != request["id"]:
        raise SandboxProtocolError(
            f"reply id {reply.get('id')!r} does not match request {request['id']!r}"
        )
    if reply.get("outcome") not in OUTCOMES:
        raise SandboxProtocolError(f"unknown outcome {reply.get('outcome')!r}")
    return reply


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()


def _denylist_hit(program: str, cfg: SandboxConfig) -> str | None:
    for token in cfg.denylist:
        if token in program:
            return token
    return None


def validate(puzzle: Puzzle, cfg: SandboxConfig) -> ValidityVerdict:
    """Execute the canonical program through the runner; classify the result."""
    program = puzzle.canonical_program()
    hit = _denylist_hit(program, cfg)
    if hit is not None:
        return ValidityVerdict(OUTCOME_FAIL, f"denylisted substring {hit!r}", 0.0)
    reply = _run_request(
        {"id": _request_id(program), "program": program, "op": "validate"}, cfg
    )
    return ValidityVerdict(
        outcome=reply["outcome"],
        detail=str(reply.get("detail", "")),
        wall_time=float(reply.get("wall_time") or 0.0),
    )


def validate_batch(puzzles: list[Puzzle], cfg: SandboxConfig) -> list[ValidityVerdict]:
    """Validate many puzzles with a bounded worker pool; order is preserved."""
    if not puzzles:
        return []
    workers = max(1, min(cfg.max_concurrent, len(puzzles)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda p: validate(p, cfg), puzzles))


def count_ast_nodes(source: str, cfg: SandboxConfig) -> int | None:
    """Parse-tree node count computed runner-side; None when unparsable."""
    reply = _run_request(
        {"id": _request_id(source), "program": source, "op": "ast_count"}, cfg
    )
    nodes = reply.get("ast_nodes")
    return int(nodes) if nodes is not None else None
