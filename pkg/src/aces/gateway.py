"""Prompt assembly and response parsing for the puzzle generator and labeler.

The template bodies are fixed verbatim; rendering only substitutes the
bracketed placeholders. Parsing is tolerant of prose around code but never
invents content: fragments without both ``def f`` and ``def g`` are dropped.
"""

import ast
import logging
import re

from .core import (
    MODE_ACES,
    MODE_ELM,
    MODE_ELM_SEMANTIC,
    MODE_STATIC,
    Puzzle,
    PuzzleRecord,
    SemanticVector,
    SKILLS,
    semantic_from_indices,
)

logger = logging.getLogger(__name__)


class PromptError(Exception):
    pass


class LabelParseError(Exception):
    pass


SKILLS_DESCRIPTION = "\n".join(
    f"{s.index} - {s.name}: {s.description}" for s in SKILLS
)

LABEL_SENTINEL = "Therefore, the list of indices for the problem is:"

LABEL_TEMPLATE = """I will give you a Python programming puzzle f (and its solution g) and a list of programming skills. Your role is to say which programming skills are required to understand and solve the problem.
skills:

[Skills description]

The puzzle is:

[Insert Puzzle to label here]

After completing your reasoning (you can start by explaining the problem and the solution in a few sentences). Ensure you remove every listed skills that are unnecessary for understanding or solving the given problem. It is necessary to summarize your answer by writing every index of categories explicitly used in the problem or solution in a Python list, following the format provided below. Please ensure the correct usage of the following text where <Python list> is a list with numbers from 0 to 9: "Therefore, the list of indices for the problem is: <Python list>"
"""

ACES_TEMPLATE = """I will give you 3 (Puzzle 0 to Puzzle 2) Python Programming Puzzle (P3). A P3 consists of a problem f and its corresponding solution g. The puzzle is solved if f(g()) == True. Your role is to generate new puzzles according to the instructions given.
In addition each of those puzzles are associated with a list of skills. Here is a detailed description of those skills:

[Skills description]

Your role is to generate 3 new puzzles (Puzzle 3 to Puzzle 5) that require those skills: [Insert list skills to target].
Note that the first argument of f is the output g(). Make sure to define and set values for all arguments of the function 'f' (excluding the first argument, as it is the solution that needs to be found and given by g).
Both functions, 'f' and 'g' should have matching argument signatures: def f(arg0, arg1=value1, arg2=value2, ...) and def g(arg1=value1, arg2=value2, ...). Please provide all values (value1, value2, ... ) for all arguments. For example f(solution,arg1=1, arg2=2, ...) and g(arg1=1, arg2=2, ...). And you should not use f inside g.
Additionally, make sure to import any necessary libraries to ensure your code runs smoothly. Please ensure the mutated puzzles fall into all those skills: [Insert list skills to target].
----
Puzzle 0, required skills [Insert list of skills associated with Puzzle 0]:
[Insert Puzzle 0]
---
Puzzle 1, required skills [Insert list of skills associated with Puzzle 1] :
[Insert Puzzle 1]
---
Puzzle 2, required skills [Insert list of skills associated with Puzzle 2]:
[Insert Puzzle 2]
---

Could you please write 3 new interesting correct Python Programming Puzzles (from Puzzle 3 to Puzzle 5)? Please, ensure the new puzzles must necessitate the utilization of the following skills (required skills [Insert list skills to target]):
[Insert target skill lines]
"""

STATIC_TEMPLATE = """I will give you 3 (Puzzle 0 to Puzzle 2) Python Programming Puzzle (P3). A P3 consists of a problem f and its corresponding solution g. The puzzle is solved if f(g()) == True. Your role is to write 3 new puzzles (Puzzle 3 to Puzzle 5). Note that the first argument of f is the output g(). Make sure to define and set values for all arguments of the function 'f' (excluding the first argument, as it is the solution that needs to be found and given by g).
Both functions, 'f' and 'g' should have matching argument signatures: def f(arg0, arg1=value1, arg2=value2, ...) and def g(arg1=value1, arg2=value2, ...). Please provide all values (value1, value2, ... ) for all arguments. For example f(solution,arg1=1, arg2=2, ...) and g(arg1=1, arg2=2, ...). And you should not use f inside g.
Additionally, make sure to import any necessary libraries to ensure your code runs smoothly.
----
Puzzle 0:

[Insert Puzzle]
---
Puzzle 1:

[Insert Puzzle]
---
Puzzle 2:

[Insert Puzzle]
---
"""

ELM_TEMPLATE = """I will give you 3 (Puzzle 0 to Puzzle 2) Python Programming Puzzle (P3). A P3 consists of a problem f and its corresponding solution g. The puzzle is solved if f(g()) == True. Your role is to write 3 new puzzles (Puzzle 3 to Puzzle 5). Note that the first argument of f is the output g(). Make sure to define and set values for all arguments of the function 'f' (excluding the first argument, as it is the solution that needs to be found and given by g).
Both functions, 'f' and 'g' should have matching argument signatures: def f(arg0, arg1=value1, arg2=value2, ...) and def g(arg1=value1, arg2=value2, ...). Please provide all values (value1, value2, ... ) for all arguments. For example f(solution,arg1=1, arg2=2, ...) and g(arg1=1, arg2=2, ...). And you should not use f inside g.
Additionally, make sure to import any necessary libraries to ensure your code runs smoothly.
----
Puzzle 0:

[Insert Puzzle]
---
Puzzle 1:

[Insert Puzzle]
---
Here is the puzzle to mutate:
Puzzle 2:

[Insert Puzzle to mutate]
---
Could you please mutate the Puzzle 2 into 3 new correct Python Programming Puzzles (from Puzzle 3 to Puzzle 5)? Please, ensure the mutated puzzles are meaningfully different from the existing puzzles.
"""

TEMPLATES = {
    "aces-generate": ACES_TEMPLATE,
    "elm-mutate": ELM_TEMPLATE,
    "static-generate": STATIC_TEMPLATE,
    "label": LABEL_TEMPLATE,
}

NO_SKILLS_LINE = "no specific skills"

_PLACEHOLDER_RE = re.compile(r"\[(Skills description|Insert [^\]]*)\]")


def _substitute(template: str, replacements: list[tuple[str, str]]) -> str:
    """Replace placeholders one occurrence at a time, in the given order."""
    out = template
    for token, value in replacements:
        if token not in out:
            raise PromptError(f"placeholder {token!r} not found in template")
        out = out.replace(token, value, 1)
    leftover = _PLACEHOLDER_RE.search(out)
    if leftover:
        raise PromptError(f"unresolved placeholder {leftover.group(0)!r}")
    return out


def _skill_names(vec: SemanticVector) -> str:
    names = vec.active_names()
    return ", ".join(names) if names else NO_SKILLS_LINE


def _skill_lines(vec: SemanticVector) -> str:
    idx = vec.active_indices()
    if not idx:
        return NO_SKILLS_LINE
    return "\n".join(f"{i} - {SKILLS[i].name}" for i in idx)


def build_generation_prompt(
    mode: str,
    goal: SemanticVector | None,
    examples: list[tuple[PuzzleRecord, SemanticVector | None]],
) -> str:
    """Render the generator prompt for one call.

    aces needs a goal and a label per example; elm mutates the last example
    (Puzzle 2); static ignores labels. All three take exactly 3 examples.
    """
    if len(examples) != 3:
        raise PromptError(f"{mode} prompt needs exactly 3 examples, got {len(examples)}")
    programs = [rec.puzzle.canonical_program().rstrip("\n") for rec, _ in examples]

    if mode == MODE_ACES:
        if goal is None:
            raise PromptError("aces prompt needs a goal vector")
        labels = []
        for rec, label in examples:
            if label is None:
                raise PromptError(f"aces example {rec.id} has no label")
            labels.append(label)
        target = _skill_names(goal)
        return _substitute(
            ACES_TEMPLATE,
            [
                ("[Skills description]", SKILLS_DESCRIPTION),
                ("[Insert list skills to target]", target),
                ("[Insert list skills to target]", target),
                ("[Insert list of skills associated with Puzzle 0]", _skill_names(labels[0])),
                ("[Insert Puzzle 0]", programs[0]),
                ("[Insert list of skills associated with Puzzle 1]", _skill_names(labels[1])),
                ("[Insert Puzzle 1]", programs[1]),
                ("[Insert list of skills associated with Puzzle 2]", _skill_names(labels[2])),
                ("[Insert Puzzle 2]", programs[2]),
                ("[Insert list skills to target]", target),
                ("[Insert target skill lines]", _skill_lines(goal)),
            ],
        )
    if mode in (MODE_ELM, MODE_ELM_SEMANTIC):
        return _substitute(
            ELM_TEMPLATE,
            [
                ("[Insert Puzzle]", programs[0]),
                ("[Insert Puzzle]", programs[1]),
                ("[Insert Puzzle to mutate]", programs[2]),
            ],
        )
    if mode == MODE_STATIC:
        return _substitute(
            STATIC_TEMPLATE,
            [
                ("[Insert Puzzle]", programs[0]),
                ("[Insert Puzzle]", programs[1]),
                ("[Insert Puzzle]", programs[2]),
            ],
        )
    raise PromptError(f"unknown generation mode {mode!r}")


def build_label_prompt(puzzle: Puzzle) -> str:
    return _substitute(
        LABEL_TEMPLATE,
        [
            ("[Skills description]", SKILLS_DESCRIPTION),
            ("[Insert Puzzle to label here]", puzzle.canonical_program().rstrip("\n")),
        ],
    )


_INDEX_LIST_RE = re.compile(r"\[([^\]]*)\]")


def parse_label_response(text: str) -> SemanticVector:
    """Pull the skill-index list out of a labeler reply.

    Only the last occurrence of the sentinel sentence counts, so earlier
    restatements inside the model's reasoning don't confuse parsing.
    """
    pos = text.rfind(LABEL_SENTINEL)
    if pos < 0:
        raise LabelParseError("label sentinel sentence not found")
    tail = text[pos + len(LABEL_SENTINEL):]
    match = _INDEX_LIST_RE.search(tail)
    if not match:
        raise LabelParseError("no index list after the sentinel")
    body = match.group(1).strip()
    if not body:
        return semantic_from_indices([])
    try:
        indices = [int(tok) for tok in re.split(r"[,\s]+", body) if tok]
    except ValueError as exc:
        raise LabelParseError(f"unparseable index list {match.group(0)!r}") from exc
    return semantic_from_indices(indices)


_FENCE_RE = re.compile(r"```(?:[ \t]*\w+)?[ \t]*\n(.*?)```", re.DOTALL)
_CODEY_RE = re.compile(
    r"^(?:from\s+\S+\s+import|import\s+\S+|def\s|assert\s|@|#|[A-Za-z_][\w.]*\s*[:=])"
)


def parse_generated_puzzles(text: str) -> list[Puzzle]:
    """Extract up to 3 puzzles from a generator reply, in order of appearance.

    Fenced code blocks are preferred; without fences, contiguous code
    regions around each ``def f`` are tried. Fragments lacking either
    function are discarded.
    """
    blocks = [m.group(1) for m in _FENCE_RE.finditer(text)]
    if not blocks:
        blocks = _unfenced_regions(text)
    puzzles: list[Puzzle] = []
    for block in blocks:
        puzzles.extend(_split_block(block))
        if len(puzzles) >= 3:
            break
    return puzzles[:3]


def _unfenced_regions(text: str) -> list[str]:
    """Contiguous code regions: imports directly above a def f, through EOF/prose."""
    lines = text.split("\n")
    regions = []
    i = 0
    while i < len(lines):
        if re.match(r"^def f\b", lines[i]):
            start = i
            while start > 0 and (
                _CODEY_RE.match(lines[start - 1]) or not lines[start - 1].strip()
            ):
                start -= 1
            end = i + 1
            while end < len(lines):
                ln = lines[end]
                if ln.strip() and not (ln[0].isspace() or _CODEY_RE.match(ln) or ln.startswith(")")):
                    break
                end += 1
            regions.append("\n".join(lines[start:end]))
            i = end
        else:
            i += 1
    return regions


def _split_block(block: str) -> list[Puzzle]:
    """Split one code block into (preamble, f, g) puzzles via the parse tree.

    Everything top-level before the first ``def f`` that is not an assert
    becomes the preamble: imports, constants, helper functions.
    """
    parsed = _parse_with_trimming(block)
    if parsed is None:
        return []
    tree, block = parsed
    source_lines = block.split("\n")

    def segment(node) -> str:
        return "\n".join(source_lines[node.lineno - 1 : node.end_lineno])

    def is_puzzle_def(node) -> bool:
        return isinstance(node, ast.FunctionDef) and node.name in ("f", "g")

    first_f = next(
        (n for n in tree.body if isinstance(n, ast.FunctionDef) and n.name == "f"),
        None,
    )
    preamble_parts = [
        segment(node)
        for node in tree.body
        if first_f is not None
        and node.end_lineno < first_f.lineno
        and not is_puzzle_def(node)
        and not isinstance(node, ast.Assert)
    ]
    preamble = "\n".join(preamble_parts)

    puzzles = []
    pending_f = None
    for node in tree.body:
        if isinstance(node, ast.FunctionDef):
            if node.name == "f":
                pending_f = node
            elif node.name == "g" and pending_f is not None:
                puzzles.append(
                    Puzzle.create(segment(pending_f), segment(node), preamble)
                )
                pending_f = None
    return puzzles


def _parse_with_trimming(block: str) -> tuple[ast.Module, str] | None:
    """Parse a block, shaving contaminated leading/trailing lines if needed."""
    lines = block.split("\n")
    for start in range(min(len(lines), 50)):
        if start > 0 and re.match(r"^def f\b", lines[start - 1]):
            return None  # would trim past the puzzle itself
        tail = "\n".join(lines[start:])
        for _ in range(20):
            try:
                return ast.parse(tail), tail
            except SyntaxError:
                cut = tail.rfind("\n")
                if cut < 0:
                    break
                tail = tail[:cut]
    return None


def check_signature_compat(puzzle: Puzzle) -> bool:
    """True iff f's parameters minus the first match g's by name sequence.

    Default values are deliberately not compared; only the names and their
    order must line up.
    """
    try:
        f_params = _param_names(puzzle.f_source, "f")
        g_params = _param_names(puzzle.g_source, "g")
    except (SyntaxError, ValueError) as exc:
        logger.warning("signature check failed to parse: %s", exc)
        return False
    if not f_params:
        logger.warning("f takes no parameters; nowhere to pass the solution")
        return False
    return f_params[1:] == g_params


def _param_names(source: str, name: str) -> list[str]:
    tree = ast.parse(source)
    for node in tree.body:
        if isinstance(node, ast.FunctionDef) and node.name == name:
            a = node.args
            names = [p.arg for p in a.posonlyargs + a.args]
            if a.vararg:
                names.append("*" + a.vararg.arg)
            names.extend(p.arg for p in a.kwonlyargs)
            if a.kwarg:
                names.append("**" + a.kwarg.arg)
            return names
    raise ValueError(f"no function {name!r} in source")
