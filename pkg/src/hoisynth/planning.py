"""Turn a free-text interaction description into an object category, contact parts and a
normalized sentence, either by asking a chat-completion service or with a keyword lexicon."""
from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

import httpx

from .errors import HoiError

log = logging.getLogger(__name__)


class PlanningError(HoiError):
    pass


class UnknownObjectError(PlanningError):
    pass


class LlmTransportError(PlanningError):
    """The service could not be reached (or kept failing) within the retry budget."""


class PlanValidationError(PlanningError):
    """The service answered, but not with a usable plan. ``raw`` keeps every reply."""

    def __init__(self, message: str, raw: Sequence[str] = ()):
        super().__init__(message)
        self.raw = list(raw)


@dataclass(frozen=True)
class Plan:
    object_category: str
    contact_parts: tuple[str, ...]
    standardized_text: str
    intermediate_thoughts: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "contact_parts", tuple(self.contact_parts))
        object.__setattr__(self, "intermediate_thoughts", tuple(self.intermediate_thoughts))

    def problems(self, categories: Iterable[str], part_names: Iterable[str]) -> list[str]:
        """Reasons this plan is unusable against the given vocabularies (empty if valid)."""
        out = []
        if self.object_category not in set(categories):
            out.append(f"unknown object category {self.object_category!r}")
        if not self.contact_parts:
            out.append("no contact parts")
        bad = [p for p in self.contact_parts if p not in set(part_names)]
        if bad:
            out.append(f"unknown body parts {bad}")
        if not self.standardized_text.strip():
            out.append("empty standardized text")
        return out

    def to_record(self) -> dict:
        return {
            "object_category": self.object_category,
            "contact_parts": list(self.contact_parts),
            "standardized_text": self.standardized_text,
            "intermediate_thoughts": list(self.intermediate_thoughts),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Plan":
        return cls(rec["object_category"], tuple(rec["contact_parts"]), rec["standardized_text"],
                   tuple(rec.get("intermediate_thoughts", ())))


# --- prompting ----------------------------------------------------------------


@dataclass(frozen=True)
class PromptTemplate:
    system_preamble: str
    few_shot_examples: tuple[tuple[str, tuple[str, str, str]], ...]
    question_forms: tuple[str, str, str]

    def __post_init__(self):
        if len(self.question_forms) != 3:
            raise ValueError("a prompt template needs exactly three questions")
        for text, answers in self.few_shot_examples:
            if len(answers) != 3:
                raise ValueError(f"few-shot example {text!r} must carry three answers")

    def query(self, text: str) -> str:
        lines = [f"Description: {text}"]
        lines += [f"Q{i + 1}: {q}" for i, q in enumerate(self.question_forms)]
        return "\n".join(lines)

    def messages(self, text: str) -> list[dict]:
        msgs = [{"role": "system", "content": self.system_preamble}]
        for example, answers in self.few_shot_examples:
            msgs.append({"role": "user", "content": self.query(example)})
            msgs.append({"role": "assistant", "content": format_answers(*answers)})
        msgs.append({"role": "user", "content": self.query(text)})
        return msgs


def format_answers(obj: str, parts: str, standardized: str) -> str:
    return f"Object: {obj}\nParts: {parts}\nStandardized: {standardized}"


def _data_path(name: str) -> Path:
    return Path(str(resources.files("hoisynth") / "data" / name))


def load_template(path=None) -> PromptTemplate:
    """Read a template from JSON; without a path the bundled default is used."""
    path = Path(path) if path is not None else _data_path("prompt_template.json")
    doc = json.loads(path.read_text(encoding="utf-8"))
    shots = tuple((s["input"], tuple(s["answers"])) for s in doc.get("few_shot_examples", []))
    return PromptTemplate(doc["system_preamble"], shots, tuple(doc["question_forms"]))


_LABELS = {"object": "object", "parts": "parts", "standardized": "standardized"}
_LINE = re.compile(r"^\s*[*#-]*\s*(object|parts|standardized)\s*[*]*\s*:\s*[*]*\s*(.*?)\s*[*]*\s*$", re.IGNORECASE)


def parse_answers(reply: str) -> tuple[str, tuple[str, ...], str]:
    """Pull the three labeled answers out of a reply; raises ValueError if any is missing."""
    found: dict[str, str] = {}
    for line in reply.splitlines():
        m = _LINE.match(line)
        if m and m.group(1).lower() not in found:
            found[m.group(1).lower()] = m.group(2).strip()
    missing = [k for k in _LABELS if not found.get(k)]
    if missing:
        raise ValueError(f"reply lacks {', '.join(missing)}")
    parts = tuple(p.strip().lower().replace(" ", "_") for p in re.split(r"[,;]", found["parts"]) if p.strip())
    return found["object"].strip().lower(), parts, found["standardized"]


# --- service client -------------------------------------------------------------


@dataclass(frozen=True)
class LlmEndpoint:
    base_url: str
    model: str
    timeout: float = 30.0
    max_retries: int = 2
    api_key_env: str | None = "OPENAI_API_KEY"
    backoff: float = 0.5

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be nonnegative")

    def url(self) -> str:
        return self.base_url.rstrip("/") + "/chat/completions"

    def headers(self) -> dict:
        key = os.environ.get(self.api_key_env) if self.api_key_env else None
        return {"Authorization": f"Bearer {key}"} if key else {}


def chat_request(endpoint: LlmEndpoint, messages: list[dict]) -> dict:
    return {"model": endpoint.model, "messages": messages, "temperature": 0}


class LlmClient:
    """Chat-completion client with retries and a cap on concurrent requests.

    ``transport`` is any httpx transport; tests pass a replaying one.
    """

    def __init__(self, endpoint: LlmEndpoint, transport: httpx.BaseTransport | None = None, max_in_flight: int = 4):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")
        self.endpoint = endpoint
        self._client = httpx.Client(transport=transport, timeout=endpoint.timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def complete(self, messages: list[dict]) -> str:
        ep = self.endpoint
        body = chat_request(ep, messages)
        last = None
        for attempt in range(ep.max_retries + 1):
            if attempt:
                time.sleep(ep.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._client.post(ep.url(), json=body, headers=ep.headers())
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
                log.debug("llm request failed (attempt %d): %s", attempt + 1, last)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise LlmTransportError(f"{ep.url()} rejected the request: HTTP {resp.status_code} {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise PlanValidationError(f"response is not a chat completion ({exc})", [resp.text]) from None
        raise LlmTransportError(f"{ep.url()} unreachable after {ep.max_retries + 1} attempts ({last})")


def _reply_to_plan(reply: str, categories, part_names) -> tuple[Plan | None, str]:
    try:
        obj, parts, standardized = parse_answers(reply)
    except ValueError as exc:
        return None, str(exc)
    plan = Plan(obj, parts, standardized, (f"Object: {obj}", f"Parts: {', '.join(parts)}", f"Standardized: {standardized}"))
    problems = plan.problems(categories, part_names)
    return (None, "; ".join(problems)) if problems else (plan, "")


def plan_llm(client: LlmClient, template: PromptTemplate, text: str, categories: Sequence[str],
             part_names: Sequence[str]) -> Plan:
    """Ask the service the three questions; one corrective reprompt if the answer is unusable."""
    if not text or not text.strip():
        raise ValueError("description text is empty")
    messages = template.messages(text.strip())
    first = client.complete(messages)
    plan, why = _reply_to_plan(first, categories, part_names)
    if plan is not None:
        return plan
    log.info("planner reply rejected (%s); asking again", why)
    messages = messages + [
        {"role": "assistant", "content": first},
        {"role": "user", "content": (
            f"That answer could not be used: {why}. Answer again with exactly three lines "
            f"'Object:', 'Parts:' and 'Standardized:'. Valid objects: {', '.join(categories)}. "
            f"Valid parts: {', '.join(part_names)}.")},
    ]
    second = client.complete(messages)
    plan, why = _reply_to_plan(second, categories, part_names)
    if plan is None:
        raise PlanValidationError(f"planner reply still unusable: {why}", [first, second])
    return plan


# --- recorded exchanges -----------------------------------------------------------


def load_recording(path) -> list[dict]:
    """A recording is a JSON list of {"request": body, "response": {"status", "body"}} pairs."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return doc if isinstance(doc, list) else [doc]


def bundled_recording(name: str) -> list[dict]:
    return load_recording(_data_path(f"llm/{name}.json"))


class ReplayTransport(httpx.BaseTransport):
    """Serves recorded responses in order; a request whose body differs from the recording fails."""

    def __init__(self, exchanges: Sequence[dict], check_requests: bool = True):
        self.exchanges = list(exchanges)
        self.check_requests = check_requests
        self.requests: list[dict] = []
        self._lock = threading.Lock()

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content.decode("utf-8")) if request.content else None
        with self._lock:
            k = len(self.requests)
            self.requests.append(body)
        if k >= len(self.exchanges):
            raise httpx.ConnectError("recording exhausted", request=request)
        ex = self.exchanges[k]
        if self.check_requests and ex.get("request") is not None and ex["request"] != body:
            raise AssertionError(f"request {k} does not match the recording")
        resp = ex["response"]
        content = resp["body"] if isinstance(resp["body"], str) else json.dumps(resp["body"])
        return httpx.Response(resp.get("status", 200), content=content.encode("utf-8"),
                              headers={"content-type": "application/json"})


def completion_body(content: str) -> dict:
    return {"choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]}


# --- rule-based planner ----------------------------------------------------------------


@dataclass(frozen=True)
class Lexicon:
    objects: dict[str, str]  # synonym (possibly several words) -> category
    verbs: dict[str, tuple[str, ...]]  # verb stem -> contact parts
    default_parts: tuple[str, ...] = ("right_hand",)
    subjects: tuple[str, ...] = ("a person", "someone", "somebody", "the person", "a man", "a woman", "the man",
                                 "the woman", "a human", "he", "she", "they")

    @property
    def categories(self) -> list[str]:
        return sorted(set(self.objects.values()))

    @classmethod
    def from_record(cls, doc: dict) -> "Lexicon":
        return cls({k.lower(): v.lower() for k, v in doc["objects"].items()},
                   {k.lower(): tuple(v) for k, v in doc.get("verbs", {}).items()},
                   tuple(doc.get("default_parts", ("right_hand",))),
                   tuple(s.lower() for s in doc.get("subjects", cls.subjects)))


def load_lexicon(path=None) -> Lexicon:
    path = Path(path) if path is not None else _data_path("lexicon.json")
    return Lexicon.from_record(json.loads(path.read_text(encoding="utf-8")))


_WORD = re.compile(r"[a-z0-9']+")


def _words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def _inflections(stem: str) -> set[str]:
    forms = {stem, stem + "s", stem + "es", stem + "ed", stem + "ing", stem + "d"}
    if stem.endswith("e"):
        forms |= {stem[:-1] + "ing"}
    if stem.endswith("y"):
        forms |= {stem[:-1] + "ies", stem[:-1] + "ied"}
    if len(stem) > 2 and stem[-1] not in "aeiouwxy" and stem[-2] in "aeiou" and stem[-3] not in "aeiou":
        forms |= {stem + stem[-1] + "ing", stem + stem[-1] + "ed"}
    return forms


def _find_object(words: list[str], lexicon: Lexicon) -> tuple[str, int, int] | None:
    """Longest synonym match (earliest on ties): (category, start, end) word span."""
    best = None
    for syn, cat in lexicon.objects.items():
        sw = _words(syn)
        n = len(sw)
        for i in range(len(words) - n + 1):
            if words[i:i + n - 1] == sw[:-1] and words[i + n - 1] in (sw[-1], sw[-1] + "s", sw[-1] + "es"):
                if best is None or n > best[2] - best[1] or (n == best[2] - best[1] and i < best[1]):
                    best = (cat, i, i + n)
                break
    return best


def plan_rules(text: str, lexicon: Lexicon) -> Plan:
    """Deterministic keyword planner used when no language-model service is configured."""
    words = _words(text)
    hit = _find_object(words, lexicon)
    if hit is None:
        raise UnknownObjectError(f"unknown object in {text!r}")
    category, start, end = hit
    parts = None
    verb_word = None
    forms = {stem: _inflections(stem) for stem in lexicon.verbs}
    for w in words:
        for stem in sorted(forms):
            if w in forms[stem]:
                parts, verb_word = lexicon.verbs[stem], w
                break
        if parts is not None:
            break
    parts = tuple(parts) if parts is not None else tuple(lexicon.default_parts)
    body = words
    for subj in sorted(lexicon.subjects, key=lambda s: -len(s.split())):
        sw = subj.split()
        if body[:len(sw)] == sw:
            body = body[len(sw):]
            start, end = start - len(sw), end - len(sw)
            break
    if start >= 0:
        body = body[:start] + [category] + body[end:]
    standardized = " ".join(["a", "person"] + body)
    thoughts = (f"Object: {category}", f"Parts: {', '.join(parts)}" + (f" (from '{verb_word}')" if verb_word else ""),
                f"Standardized: {standardized}")
    return Plan(category, parts, standardized, thoughts)


# --- accuracy harness ----------------------------------------------------------------


@dataclass(frozen=True)
class LabeledText:
    text: str
    category: str
    parts: tuple[str, ...]
    ambiguous: bool = False


@dataclass(frozen=True)
class PlannerScores:
    q1: float
    q1_star: float
    q2: float
    q2_star: float
    n: int = 0
    n_unambiguous: int = 0
    failures: tuple[str, ...] = field(default=())

    def to_record(self) -> dict:
        return {"q1_acc": self.q1, "q1_acc_star": self.q1_star, "q2_acc": self.q2, "q2_acc_star": self.q2_star,
                "n": self.n, "n_unambiguous": self.n_unambiguous}


def load_labeled(path=None) -> list[LabeledText]:
    """JSON lines with text, category, parts and an optional ambiguous flag."""
    path = Path(path) if path is not None else _data_path("planner_eval.jsonl")
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            out.append(LabeledText(rec["text"], rec["category"], tuple(rec["parts"]), bool(rec.get("ambiguous", False))))
    return out


def eval_planner(planner: Callable[[str], Plan], items: Sequence[LabeledText]) -> PlannerScores:
    """Category exact-match and part-overlap accuracy, plus both restricted to unambiguous items.

    A planner error counts as a miss on both questions.
    """
    items = list(items)
    if not items:
        raise ValueError("labeled set is empty")
    q1, q2, failures = [], [], []
    for it in items:
        try:
            plan = planner(it.text)
        except HoiError as exc:
            failures.append(f"{it.text}: {exc}")
            q1.append(False)
            q2.append(False)
            continue
        q1.append(plan.object_category == it.category)
        q2.append(bool(set(plan.contact_parts) & set(it.parts)))
    clear = [i for i, it in enumerate(items) if not it.ambiguous]

    def frac(xs, idx):
        return sum(xs[i] for i in idx) / len(idx) if idx else math.nan

    every = range(len(items))
    return PlannerScores(frac(q1, every), frac(q1, clear), frac(q2, every), frac(q2, clear), len(items), len(clear),
                         tuple(failures))
