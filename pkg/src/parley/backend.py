"""Pluggable generation boundary: candidates, relevance, follow-up checks, summaries, suggestions.

Everything that needs language intelligence sits behind one interface, with a
deterministic scripted implementation for tests and simulation, and a generic
chat-completion HTTP client for live sessions.
"""

from __future__ import annotations

import json
import os
import re
import urllib.request
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .context import ActiveContext
from .model import Turn

_WORD_RE = re.compile(r"[a-z0-9]+")

# Function words never counted as content overlap.
STOPWORDS = frozenset(
    {
        "that", "this", "with", "have", "from", "they", "them", "then", "than",
        "what", "when", "where", "which", "will", "would", "could", "should",
        "there", "their", "these", "those", "about", "because", "been", "were",
        "your", "yours", "just", "very", "some", "into", "over", "also", "only",
    }
)

# Cue words that open a follow-up: second-person or interrogative starters.
FOLLOW_UP_CUES = frozenset(
    {
        "what", "why", "how", "when", "where", "who", "which", "whose", "whom",
        "you", "your", "yours", "do", "does", "did", "can", "could", "would",
        "will", "should", "is", "are", "was", "were", "really",
    }
)


class BackendError(RuntimeError):
    pass


class BackendTimeout(BackendError):
    pass


@dataclass(frozen=True)
class Persona:
    name: str = "Lisa"
    system_prompt: str = ""
    assigned_preference: str = ""
    task_description: str = ""

    def __post_init__(self) -> None:
        if not self.system_prompt:
            raise ValueError("persona systemPrompt must be nonempty")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "systemPrompt": self.system_prompt,
            "assignedPreference": self.assigned_preference,
            "taskDescription": self.task_description,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Persona":
        return cls(
            name=data.get("name", "Lisa"),
            system_prompt=data["systemPrompt"],
            assigned_preference=data.get("assignedPreference", ""),
            task_description=data.get("taskDescription", ""),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Persona":
        return cls.from_json(json.loads(Path(path).read_text()))


def default_persona() -> Persona:
    return Persona(
        name="Lisa",
        system_prompt=(
            "You are Lisa, a friendly, concise participant in a small-group spoken "
            "discussion. Contribute like a thoughtful colleague: build on what others "
            "say, keep turns to one or two sentences, and advocate for your assigned "
            "preference with light, constructive nudges without revealing it was assigned."
        ),
        assigned_preference="keep the discussion concrete and actionable",
        task_description="open-ended group discussion",
    )


class BackendRequestKind(str, Enum):
    CANDIDATE = "candidate"
    RELEVANCE = "relevance"
    FOLLOW_UP = "follow_up"
    SUMMARY = "summary"
    SUGGESTION = "suggestion"


@dataclass(frozen=True)
class BackendRequest:
    request_id: str
    kind: BackendRequestKind
    persona: Persona
    context: Optional[ActiveContext] = None
    candidate: str = ""
    utterance: str = ""
    last_agent_utterance: str = ""
    recent_turns: Tuple[Turn, ...] = ()
    batch: Tuple[Turn, ...] = ()
    prior_summary: str = ""


@dataclass(frozen=True)
class BackendReply:
    """Driver-facing result: a value plus the latency to model, or a timeout."""

    value: Union[str, bool, None]
    delay_ms: int = 0
    timed_out: bool = False


def content_words(text: str) -> set:
    return {w for w in _WORD_RE.findall(text.lower()) if len(w) > 3 and w not in STOPWORDS}


def rule_relevance(candidate: str, recent_turns: Sequence[Turn]) -> bool:
    """Relevant iff the candidate shares at least one content word with the recent turns."""
    if not recent_turns:
        return False
    turn_words = set()
    for t in recent_turns:
        turn_words |= content_words(t.text)
    return bool(content_words(candidate) & turn_words)


def rule_follow_up(utterance: str, last_agent_utterance: str) -> bool:
    """Follow-up iff the utterance opens with a cue word or heavily overlaps the agent's last turn."""
    tokens = _WORD_RE.findall(utterance.lower())
    if not tokens:
        return False
    if tokens[0] in FOLLOW_UP_CUES:
        return True
    return len(content_words(utterance) & content_words(last_agent_utterance)) >= 2


def rule_summary(batch: Sequence[Turn], prior_summary: str, include_seq: bool = False) -> str:
    """Deterministic digest: prior summary extended with speaker:first-words entries."""
    entries = []
    for t in batch:
        head = " ".join(t.text.split()[:3])
        tag = f"{t.speaker.id}#{t.seq}" if include_seq else t.speaker.id
        entries.append(f"{tag}:{head}")
    joined = "; ".join(entries)
    return f"{prior_summary}; {joined}" if prior_summary else joined


class AgentBackend:
    """Interface for every implementation; drivers call handle() for scheduling metadata."""

    def handle(self, request: BackendRequest) -> BackendReply:
        raise NotImplementedError

    # Convenience forms that raise on timeout, for direct/library use.

    def generate_candidate(self, context: ActiveContext, persona: Persona) -> str:
        return self._value(BackendRequest("", BackendRequestKind.CANDIDATE, persona, context=context))

    def judge_relevance(self, candidate: str, recent_turns: Sequence[Turn]) -> bool:
        return self._value(
            BackendRequest(
                "",
                BackendRequestKind.RELEVANCE,
                default_persona(),
                candidate=candidate,
                recent_turns=tuple(recent_turns),
            )
        )

    def classify_follow_up(self, utterance: str, last_agent_utterance: str) -> bool:
        return self._value(
            BackendRequest(
                "",
                BackendRequestKind.FOLLOW_UP,
                default_persona(),
                utterance=utterance,
                last_agent_utterance=last_agent_utterance,
            )
        )

    def summarize(self, batch: Sequence[Turn], prior_summary: str, persona: Persona) -> str:
        return self._value(
            BackendRequest(
                "",
                BackendRequestKind.SUMMARY,
                persona,
                batch=tuple(batch),
                prior_summary=prior_summary,
            )
        )

    def suggest(self, context: ActiveContext, persona: Persona) -> str:
        return self._value(BackendRequest("", BackendRequestKind.SUGGESTION, persona, context=context))

    def _value(self, request: BackendRequest):
        reply = self.handle(request)
        if reply.timed_out:
            raise BackendTimeout(request.kind.value)
        return reply.value


class ScriptedBackend(AgentBackend):
    """Deterministic backend driven by a script file.

    Script JSON: per-kind FIFO queues plus rule parameters, e.g.::

        {
          "queues": {"candidate": ["idea-1", {"text": "idea-2", "delayMs": 300}],
                     "relevance": [true], "followUp": [], "suggestion": [], "summary": []},
          "fallbacks": {"candidate": "let me add a thought"},
          "delays": {"candidate": 200, "relevance": 100},
          "summaryIncludeSeq": false
        }

    Queue entries may be strings/bools or {"text"/"value", "delayMs", "timeout"}.
    An exhausted queue without a fallback times out for candidates; relevance,
    follow-up, summary, and suggestion fall back to their deterministic rules.
    """

    _QUEUE_KEYS = {
        BackendRequestKind.CANDIDATE: "candidate",
        BackendRequestKind.RELEVANCE: "relevance",
        BackendRequestKind.FOLLOW_UP: "followUp",
        BackendRequestKind.SUMMARY: "summary",
        BackendRequestKind.SUGGESTION: "suggestion",
    }

    def __init__(self, script: Optional[dict] = None):
        script = script or {}
        self.queues: Dict[str, List] = {k: list(v) for k, v in script.get("queues", {}).items()}
        self.fallbacks: Dict[str, Union[str, bool]] = dict(script.get("fallbacks", {}))
        self.delays: Dict[str, int] = dict(script.get("delays", {}))
        self.summary_include_seq: bool = bool(script.get("summaryIncludeSeq", False))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ScriptedBackend":
        return cls(json.loads(Path(path).read_text()))

    def _pop(self, key: str):
        queue = self.queues.get(key)
        if queue:
            return queue.pop(0)
        return None

    def handle(self, request: BackendRequest) -> BackendReply:
        key = self._QUEUE_KEYS[request.kind]
        default_delay = int(self.delays.get(key, 0))
        entry = self._pop(key)
        if entry is not None:
            if isinstance(entry, dict):
                if entry.get("timeout"):
                    return BackendReply(None, int(entry.get("delayMs", default_delay)), timed_out=True)
                value = entry.get("text", entry.get("value"))
                delay = int(entry.get("delayMs", default_delay))
            else:
                value, delay = entry, default_delay
            if request.kind == BackendRequestKind.CANDIDATE:
                value = self._inject_suggestion(str(value), request)
            return BackendReply(value, delay)
        return self._rule_reply(request, default_delay)

    def _inject_suggestion(self, text: str, request: BackendRequest) -> str:
        suggestion = request.context.current_suggestion if request.context else None
        return f"{text} ({suggestion})" if suggestion else text

    def _rule_reply(self, request: BackendRequest, delay: int) -> BackendReply:
        kind = request.kind
        if kind == BackendRequestKind.CANDIDATE:
            fallback = self.fallbacks.get("candidate")
            if fallback is None:
                return BackendReply(None, delay, timed_out=True)
            return BackendReply(self._inject_suggestion(str(fallback), request), delay)
        if kind == BackendRequestKind.RELEVANCE:
            return BackendReply(rule_relevance(request.candidate, request.recent_turns), delay)
        if kind == BackendRequestKind.FOLLOW_UP:
            return BackendReply(rule_follow_up(request.utterance, request.last_agent_utterance), delay)
        if kind == BackendRequestKind.SUMMARY:
            return BackendReply(
                rule_summary(request.batch, request.prior_summary, self.summary_include_seq), delay
            )
        if kind == BackendRequestKind.SUGGESTION:
            return BackendReply(request.persona.assigned_preference, delay)
        raise BackendError(f"unhandled request kind {kind}")  # pragma: no cover


@dataclass(frozen=True)
class LiveBackendConfig:
    base_url: str
    model: str
    api_key_env_var: str = "PARLEY_API_KEY"
    timeout_ms: int = 10000

    @classmethod
    def from_json(cls, data: dict) -> "LiveBackendConfig":
        return cls(
            base_url=data["baseUrl"],
            model=data["model"],
            api_key_env_var=data.get("apiKeyEnvVar", "PARLEY_API_KEY"),
            timeout_ms=data.get("timeoutMs", 10000),
        )


class LiveBackend(AgentBackend):
    """Generic chat-completion HTTP client; nondeterministic, so excluded from CI paths."""

    def __init__(self, config: LiveBackendConfig):
        self.config = config

    def handle(self, request: BackendRequest) -> BackendReply:
        try:
            text = self._complete(self._messages_for(request))
        except Exception:
            return BackendReply(None, self.config.timeout_ms, timed_out=True)
        if request.kind in (BackendRequestKind.RELEVANCE, BackendRequestKind.FOLLOW_UP):
            return BackendReply(text.strip().lower().startswith("yes"), 0)
        return BackendReply(text.strip(), 0)

    def _complete(self, messages: List[dict]) -> str:
        api_key = os.environ.get(self.config.api_key_env_var, "")
        body = json.dumps({"model": self.config.model, "messages": messages}).encode()
        req = urllib.request.Request(
            self.config.base_url.rstrip("/") + "/chat/completions",
            data=body,
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {api_key}"},
        )
        with urllib.request.urlopen(req, timeout=self.config.timeout_ms / 1000) as resp:
            data = json.loads(resp.read().decode())
        return data["choices"][0]["message"]["content"]

    def _messages_for(self, request: BackendRequest) -> List[dict]:
        persona = request.persona
        system = persona.system_prompt
        if persona.task_description:
            system += f"\nDiscussion: {persona.task_description}"
        if persona.assigned_preference:
            system += f"\nYour assigned preference: {persona.assigned_preference}"
        kind = request.kind
        if kind == BackendRequestKind.CANDIDATE:
            lines = [f"{t.speaker.id}: {t.text}" for t in (request.context.verbatim_turns if request.context else ())]
            prompt = "Recent discussion:\n" + "\n".join(lines)
            if request.context and request.context.summary:
                prompt = f"Earlier summary: {request.context.summary}\n" + prompt
            if request.context and request.context.current_suggestion:
                prompt += f"\nPlanned contribution to reflect: {request.context.current_suggestion}"
            prompt += "\nReply with your next one- or two-sentence spoken contribution."
            return [{"role": "system", "content": system}, {"role": "user", "content": prompt}]
        if kind == BackendRequestKind.RELEVANCE:
            lines = [f"{t.speaker.id}: {t.text}" for t in request.recent_turns]
            prompt = (
                "Candidate contribution:\n" + request.candidate + "\nRecent turns:\n" + "\n".join(lines)
                + "\nWould this contribution be meaningful right now? Answer yes or no."
            )
            return [{"role": "system", "content": system}, {"role": "user", "content": prompt}]
        if kind == BackendRequestKind.FOLLOW_UP:
            prompt = (
                f"The agent said: {request.last_agent_utterance}\nA user then said: {request.utterance}\n"
                "Is the user's utterance a follow-up addressed to the agent? Answer yes or no."
            )
            return [{"role": "system", "content": system}, {"role": "user", "content": prompt}]
        if kind == BackendRequestKind.SUMMARY:
            lines = [f"{t.speaker.id}: {t.text}" for t in request.batch]
            prompt = (
                f"Running summary so far: {request.prior_summary or '(none)'}\nNew turns:\n" + "\n".join(lines)
                + "\nRewrite the running summary to also cover the new turns; keep key discussion points."
            )
            return [{"role": "system", "content": system}, {"role": "user", "content": prompt}]
        if kind == BackendRequestKind.SUGGESTION:
            lines = [f"{t.speaker.id}: {t.text}" for t in (request.context.verbatim_turns if request.context else ())]
            prompt = (
                "Recent discussion:\n" + "\n".join(lines)
                + "\nPropose, in one sentence, what the agent should contribute next so it stays"
                " relevant to the conversation and to its assigned preference."
            )
            return [{"role": "system", "content": system}, {"role": "user", "content": prompt}]
        raise BackendError(f"unhandled request kind {kind}")  # pragma: no cover
