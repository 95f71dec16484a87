#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Text contracts between generator and verifier.

Prompt templates are plain-text files with a `[system]` and a `[user]`
section and `{{slot}}` placeholders. The shipped defaults live in the
`prompts` directory next to this module and can be overridden per run.
"""
import os
import re
from enum import Enum
from fractions import Fraction
from typing import Callable, Dict, List, Mapping, Optional, Tuple

from pydantic import BaseModel, Field

from .core import Message, Verdict, VerifierOutput
from .errors import PromptError


class TemplateId(str, Enum):
    GENERATOR_INITIAL = "generator_initial"
    GENERATOR_REFINE = "generator_refine"
    GENERATOR_RETRY = "generator_retry"
    VERIFIER_PLAIN = "verifier_plain"
    VERIFIER_TEACHER = "verifier_teacher"


SLOT_NAMES = ("statement", "prior_solution", "feedback", "reference_solution")

_SLOT_RE = re.compile(r"\{\{(\w+)\}\}")
_SECTION_RE = re.compile(r"^\[(system|user)\]\s*$", re.MULTILINE)

DEFAULT_PROMPT_DIR = os.path.join(os.path.dirname(__file__), "prompts")


class PromptTemplate(BaseModel):
    template_id: TemplateId
    system: str = ""
    body: str = Field(description="user message with {{slot}} placeholders")

    @property
    def slots(self) -> List[str]:
        seen = []
        for name in _SLOT_RE.findall(self.system + "\n" + self.body):
            if name not in seen:
                seen.append(name)
        return seen

    @classmethod
    def parse(cls, template_id: TemplateId, text: str) -> "PromptTemplate":
        parts = _SECTION_RE.split(text)
        if len(parts) == 1:
            return cls(template_id=template_id, body=text.strip("\n"))
        sections = {}
        for name, content in zip(parts[1::2], parts[2::2]):
            sections[name] = content.strip("\n")
        return cls(template_id=template_id, system=sections.get("system", ""), body=sections.get("user", ""))

    def validate_slots(self):
        for name in self.slots:
            if name not in SLOT_NAMES:
                raise PromptError(f"template {self.template_id.value} uses unknown slot '{name}'")
        if self.template_id == TemplateId.VERIFIER_TEACHER and "reference_solution" not in self.slots:
            raise PromptError("verifier_teacher must contain the reference_solution slot")
        if self.template_id == TemplateId.VERIFIER_PLAIN and "reference_solution" in self.slots:
            raise PromptError("verifier_plain must not contain the reference_solution slot")
        return self


class PromptSet:
    """The collection of templates used by one run."""

    def __init__(self, templates: Dict[TemplateId, PromptTemplate]):
        missing = [t.value for t in TemplateId if t not in templates]
        if missing:
            raise PromptError(f"missing prompt templates: {', '.join(missing)}")
        self.templates = {k: v.validate_slots() for k, v in templates.items()}

    @classmethod
    def load(cls, override_dir: Optional[str] = None) -> "PromptSet":
        """Load the shipped templates, replacing any found in `override_dir`."""
        templates = {}
        for tid in TemplateId:
            path = os.path.join(DEFAULT_PROMPT_DIR, f"{tid.value}.txt")
            if override_dir:
                candidate = os.path.join(override_dir, f"{tid.value}.txt")
                if os.path.exists(candidate):
                    path = candidate
            with open(path, "r", encoding="utf-8") as fh:
                templates[tid] = PromptTemplate.parse(tid, fh.read())
        return cls(templates)

    def __getitem__(self, template_id: TemplateId) -> PromptTemplate:
        return self.templates[TemplateId(template_id)]

    def render(self, template_id: TemplateId, bindings: Mapping[str, str]) -> List[Message]:
        return render_prompt(self[template_id], bindings)

    def match(self, text: str) -> Optional[Tuple[TemplateId, Dict[str, str]]]:
        return match_prompt(self, text)


_default_prompts: Optional[PromptSet] = None

def default_prompts() -> PromptSet:
    global _default_prompts
    if _default_prompts is None:
        _default_prompts = PromptSet.load()
    return _default_prompts


def render_prompt(template: PromptTemplate, bindings: Mapping[str, str]) -> List[Message]:
    """Render `template` into chat messages.

    Raises:
        PromptError: a slot used by the template is not bound
    """
    missing = [s for s in template.slots if bindings.get(s) is None]
    if missing:
        raise PromptError(f"template {template.template_id.value} is missing slot(s): {', '.join(missing)}")

    def fill(text: str) -> str:
        return _SLOT_RE.sub(lambda m: str(bindings[m.group(1)]), text)

    messages = []
    if template.system:
        messages.append(Message(role="system", content=fill(template.system)))
    messages.append(Message(role="user", content=fill(template.body)))
    return messages


def match_prompt(prompts: PromptSet, text: str) -> Optional[Tuple[TemplateId, Dict[str, str]]]:
    """Invert a rendered user message back into its template id and slot bindings.

    Templates with more slots are tried first so that a refine prompt is not
    mistaken for a shorter template.
    """
    candidates = sorted(prompts.templates.values(), key=lambda t: -len(t.slots))
    for template in candidates:
        pattern = _template_regex(template.body)
        m = pattern.match(text)
        if m:
            return template.template_id, m.groupdict()
    return None


def _template_regex(body: str) -> "re.Pattern":
    out = []
    seen = set()
    pos = 0
    for m in _SLOT_RE.finditer(body):
        out.append(re.escape(body[pos:m.start()]))
        name = m.group(1)
        if name in seen:
            out.append(f"(?P={name})")
        else:
            out.append(f"(?P<{name}>.*?)")
            seen.add(name)
        pos = m.end()
    out.append(re.escape(body[pos:]))
    return re.compile("^" + "".join(out) + "$", re.DOTALL)


# ---- verdicts ----

_VERDICT_RE = re.compile(r"verdict[^\w\n]*(?:is\s*)?[`*\"'\s]*\b(incorrect|correct)\b", re.IGNORECASE)
_SCORE_RE = re.compile(r"^[ \t*_]*score[ \t*_]*[:=][ \t]*([0-9]*\.?[0-9]+)", re.IGNORECASE | re.MULTILINE)


def parse_verdict(raw: str) -> VerifierOutput:
    """Parse a verifier response.

    The last "verdict ... CORRECT/INCORRECT" match decides. Without any match
    the verdict is reject and the whole response becomes the feedback.
    """
    raw = raw or ""
    matches = list(_VERDICT_RE.finditer(raw))
    score = None
    score_matches = list(_SCORE_RE.finditer(raw))
    if score_matches:
        value = float(score_matches[-1].group(1))
        if 0.0 <= value <= 1.0:
            score = value

    if not matches:
        return VerifierOutput(verdict=Verdict.REJECT, feedback=raw.strip(), score=score, raw=raw)

    verdict = Verdict.ACCEPT if matches[-1].group(1).lower() == "correct" else Verdict.REJECT
    kept = [line for line in raw.splitlines()
            if not _VERDICT_RE.search(line) and not _SCORE_RE.search(line)]
    feedback = "\n".join(kept).strip()
    return VerifierOutput(verdict=verdict, feedback=feedback, score=score, raw=raw)


# ---- answers ----

DEFAULT_FINAL_ANSWER_PATTERN = r"(?:final answer|answer)\s*(?:is|:)\s*(.+?)\s*\.?\s*$"


def _boxed_contents(text: str) -> List[str]:
    found = []
    for m in re.finditer(r"\\(?:boxed|fbox)\s*\{", text):
        depth = 1
        i = m.end()
        while i < len(text) and depth:
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
            i += 1
        if depth == 0:
            found.append(text[m.end():i - 1])
    return found


def extract_answer(solution: str, final_answer_pattern: str = DEFAULT_FINAL_ANSWER_PATTERN) -> Optional[str]:
    """Return the last boxed expression, else the last final-answer line, else None."""
    if not solution:
        return None
    boxed = _boxed_contents(solution)
    if boxed:
        return boxed[-1].strip()
    pattern = re.compile(final_answer_pattern, re.IGNORECASE)
    for line in reversed(solution.splitlines()):
        m = pattern.search(line)
        if m:
            return m.group(1).strip()
    return None


_LATEX_SPACING = re.compile(r"\\[,;:!]|\\ |\\quad|\\qquad|\\left|\\right")


def normalize_answer(a: str) -> str:
    s = a.strip()
    for open_, close in (("$", "$"), ("\\(", "\\)"), ("\\[", "\\]")):
        while s.startswith(open_) and s.endswith(close) and len(s) >= len(open_) + len(close):
            s = s[len(open_):len(s) - len(close)].strip()
    s = re.sub(r"\\text\{([^{}]*)\}", r"\1", s)
    s = s.replace("\\dfrac", "\\frac").replace("\\tfrac", "\\frac")
    s = _LATEX_SPACING.sub("", s)
    s = re.sub(r"\s+", "", s)
    s = s.rstrip(".")
    while s.startswith("{") and s.endswith("}") and _balanced(s[1:-1]):
        s = s[1:-1]
    if s.startswith("+"):
        s = s[1:]
    s = re.sub(r"(?<![\d.])0+(?=\d)", "", s)
    if s in ("-0", "-0.0"):
        s = s[1:]
    return s


def _balanced(s: str) -> bool:
    depth = 0
    for ch in s:
        depth += 1 if ch == "{" else -1 if ch == "}" else 0
        if depth < 0:
            return False
    return depth == 0


MAX_EXPONENT = 4000

_FRAC_RE = re.compile(r"^(-?)\\frac\{(-?[\d.]+)\}\{(-?[\d.]+)\}$")


def parse_number(s: str) -> Optional[Fraction]:
    """Parse a normalized answer as an exact rational, if it is one."""
    try:
        m = _FRAC_RE.match(s)
        if m:
            value = Fraction(m.group(2)) / Fraction(m.group(3))
            return -value if m.group(1) else value
        if re.fullmatch(r"-?\d+(?:\.\d+)?/-?\d+(?:\.\d+)?", s):
            num, den = s.split("/")
            return Fraction(num) / Fraction(den)
        m = re.fullmatch(r"-?(?:\d+\.?\d*|\.\d+)(?:[eE]([-+]?\d+))?", s)
        if m:
            if m.group(1) and abs(int(m.group(1))) > MAX_EXPONENT:
                return None
            return Fraction(s)
    except (ValueError, ZeroDivisionError):
        return None
    return None


AnswerChecker = Callable[[str, str], Optional[bool]]

_checkers: List[AnswerChecker] = []

def register_checker(checker: AnswerChecker):
    """Add a richer equivalence rule.

    A checker returns True/False when it can decide and None otherwise; it is
    consulted only when the built-in rules find the answers different.
    """
    _checkers.append(checker)
    return checker


def answers_equivalent(a: Optional[str], b: Optional[str], rel_tol: float = 1e-9) -> bool:
    if a is None or b is None:
        return False
    na, nb = normalize_answer(a), normalize_answer(b)
    if na == nb:
        return True
    x, y = parse_number(na), parse_number(nb)
    if x is not None and y is not None:
        # exact rationals; float() overflows on large answers
        if abs(x - y) <= Fraction(rel_tol) * max(abs(x), abs(y)):
            return True
    for checker in _checkers:
        decision = checker(a, b)
        if decision is not None:
            return decision
    return False
