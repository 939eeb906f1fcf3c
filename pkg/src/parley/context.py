"""Per-room transcript, bounded active context, running summary, and suggestion cadence."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

from .model import ParticipantKind, ProtocolConfig, RoomId, Turn


class SeqGap(ValueError):
    """An out-of-order turn was offered to the transcript."""


@dataclass(frozen=True)
class ActiveContext:
    """What the agent sees: the newest verbatim turns plus the running summary."""

    verbatim_turns: Tuple[Turn, ...]
    summary: str
    current_suggestion: Optional[str]


@dataclass(frozen=True)
class Transcript:
    room: RoomId
    turns: Tuple[Turn, ...] = ()  # the verbatim active window, newest last
    summary: str = ""
    pending_summary_buffer: Tuple[Turn, ...] = ()
    next_seq: int = 1
    current_suggestion: Optional[str] = None
    last_agent_text: Optional[str] = None


def append_turn(
    transcript: Transcript, turn: Turn, config: ProtocolConfig
) -> Tuple[Transcript, Optional[Tuple[Turn, ...]]]:
    """Append the next turn; returns the batch to summarize when one falls due.

    Turns pushed out of the active window accumulate in the pending buffer;
    once the buffer holds a full batch, the whole buffer is offered for
    summarization (a previously failed batch rides along and is retried).
    """
    if turn.seq != transcript.next_seq:
        raise SeqGap(f"expected seq {transcript.next_seq}, got {turn.seq}")
    turns = transcript.turns + (turn,)
    buffer = transcript.pending_summary_buffer
    while len(turns) > config.active_context_turns:
        buffer = buffer + (turns[0],)
        turns = turns[1:]
    last_agent = transcript.last_agent_text
    if turn.speaker.kind == ParticipantKind.AGENT:
        last_agent = turn.text
    updated = replace(
        transcript,
        turns=turns,
        pending_summary_buffer=buffer,
        next_seq=transcript.next_seq + 1,
        last_agent_text=last_agent,
    )
    # A batch falls due each time the buffer grows to a whole multiple of the
    # batch size; an unanswered earlier request simply rides along then.
    size = config.summary_batch_turns
    batch = buffer if len(buffer) >= size and len(buffer) % size == 0 else None
    return updated, batch


def apply_summary(transcript: Transcript, summarized: Tuple[Turn, ...], text: str) -> Transcript:
    """Install the returned summary and drop the turns it covered from the buffer."""
    covered = {t.seq for t in summarized}
    remaining = tuple(t for t in transcript.pending_summary_buffer if t.seq not in covered)
    return replace(transcript, summary=text, pending_summary_buffer=remaining)


def set_suggestion(transcript: Transcript, text: str) -> Transcript:
    return replace(transcript, current_suggestion=text)


def active_context(transcript: Transcript) -> ActiveContext:
    return ActiveContext(
        verbatim_turns=transcript.turns,
        summary=transcript.summary,
        current_suggestion=transcript.current_suggestion,
    )


def relevance_context(transcript: Transcript, config: ProtocolConfig) -> Tuple[Turn, ...]:
    """The most recent turns used for relevance judgments (its own knob, not the active window)."""
    recent = transcript.pending_summary_buffer + transcript.turns
    n = config.relevance_context_turns
    return recent[-n:] if len(recent) > n else recent


def suggestion_tick(state, now: int) -> bool:
    """Whether a suggestion refresh is due at this tick.

    Ticks are skipped (not queued) while the agent's hand is raised, so an
    accepted raise still delivers the contribution it originally signalled;
    refreshes resume at the next tick after the hand comes down.
    """
    return state.hand is None and state.policy.agent_present


def export_transcript_jsonl(full_history: List[Turn], summary: str) -> List[str]:
    """Turn history plus a trailing summary record, for offline analysis and replay."""
    from .model import canonical_json

    lines = [canonical_json({"cat": "turn", **t.to_json()}) for t in full_history]
    lines.append(canonical_json({"cat": "summary", "summary": summary}))
    return lines


def import_transcript_jsonl(lines: List[str]) -> Tuple[List[Turn], str]:
    import json

    turns: List[Turn] = []
    summary = ""
    for line in lines:
        if not line.strip():
            continue
        data = json.loads(line)
        if data.get("cat") == "turn":
            data.pop("cat")
            turns.append(Turn.from_json(data))
        elif data.get("cat") == "summary":
            summary = data["summary"]
    return turns, summary
