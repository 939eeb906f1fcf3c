"""Ordered network analysis of coded discussion transcripts.

Directed co-occurrence accumulation over a moving stanza window, unit-sphere
normalization, means-rotation projection, and Welch comparison of projected
scores. Outputs are ONA-style: the directed ground-to-response reading of
code pairs, summed per window by default (binary on request).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats as scipy_stats


class UnknownCode(ValueError):
    pass


class ParseError(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


DEFAULT_CODES: List[Tuple[str, str]] = [
    ("NewIdea", "introduces a new idea or direction"),
    ("Fact", "contributes factual information or background"),
    ("ActionableSuggestion", "proposes a concrete, actionable step"),
    ("Remix", "builds on or recombines earlier contributions"),
    ("Agreement", "agrees with or affirms another participant"),
    ("Disagreement", "disagrees with or pushes back on a contribution"),
    ("Negotiation", "negotiates priorities or trades off options"),
    ("SocialTalk", "social or casual talk outside the task"),
    ("InviteAgent", "invites the agent to contribute"),
    ("RespondToHandRaise", "responds to the agent's raised hand"),
    ("RegulateAgent", "directs or constrains the agent's participation"),
    ("StrategyAboutAgent", "discusses how to engage the agent"),
    ("ReferenceAgentSpeech", "refers back to something the agent said"),
    ("ClarifyingQuestion", "asks a clarifying question"),
]


@dataclass(frozen=True)
class CodeRegistry:
    """Ordered code list; the order fixes the adjacency vector layout."""

    codes: Tuple[str, ...]
    descriptions: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.codes)) != len(self.codes):
            raise ValueError("code names must be unique")

    def index(self, code: str) -> int:
        try:
            return self.codes.index(code)
        except ValueError:
            raise UnknownCode(code) from None

    @property
    def size(self) -> int:
        return len(self.codes)

    def pair_index(self, ground: str, response: str) -> int:
        return self.index(ground) * self.size + self.index(response)

    def pair_labels(self) -> List[Tuple[str, str]]:
        return [(g, r) for g in self.codes for r in self.codes]

    @classmethod
    def default(cls) -> "CodeRegistry":
        return cls(codes=tuple(name for name, _ in DEFAULT_CODES), descriptions=dict(DEFAULT_CODES))

    @classmethod
    def from_json(cls, data: Union[dict, list]) -> "CodeRegistry":
        if isinstance(data, list):
            if data and isinstance(data[0], dict):
                return cls(
                    codes=tuple(c["name"] for c in data),
                    descriptions={c["name"]: c.get("description", "") for c in data},
                )
            return cls(codes=tuple(data))
        return cls.from_json(data["codes"])

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CodeRegistry":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CodedTurn:
    unit_id: str
    conversation_id: str
    speaker: str
    directed_to_agent: bool
    codes: FrozenSet[str]


@dataclass(frozen=True)
class OnaNetwork:
    """Directed code-pair weights for one unit (here: one conversation)."""

    unit_id: str
    adjacency: np.ndarray  # length K*K, ground-major order
    code_frequency: np.ndarray  # per-code count of turns carrying the code
    n_turns: int
    normalized: bool = False
    excluded: bool = False  # zero vector: not normalizable, skipped in projection

    def weight(self, registry: CodeRegistry, ground: str, response: str) -> float:
        return float(self.adjacency[registry.pair_index(ground, response)])


def accumulate(
    coded_turns: Sequence[CodedTurn],
    window: int,
    registry: Optional[CodeRegistry] = None,
    binary: bool = False,
) -> Dict[str, OnaNetwork]:
    """Build one directed network per conversation with a moving stanza window.

    For each response turn, every code of every ground turn in the preceding
    window-1 turns of the same conversation connects to every code of the
    response turn. Within-turn pairs are not counted; cross-turn same-code
    pairs are. With binary=True each pair counts at most once per response turn.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    registry = registry or CodeRegistry.default()
    known = set(registry.codes)
    by_conversation: Dict[str, List[CodedTurn]] = {}
    for turn in coded_turns:
        unknown = turn.codes - known
        if unknown:
            raise UnknownCode(f"{sorted(unknown)} in unit {turn.unit_id}")
        by_conversation.setdefault(turn.conversation_id, []).append(turn)

    k = registry.size
    networks: Dict[str, OnaNetwork] = {}
    for conversation_id, turns in by_conversation.items():
        adjacency = np.zeros(k * k)
        frequency = np.zeros(k)
        for turn in turns:
            for code in turn.codes:
                frequency[registry.index(code)] += 1
        for i, response in enumerate(turns):
            grounds = turns[max(0, i - (window - 1)) : i]
            if binary:
                seen = set()
                for ground in grounds:
                    for cg in ground.codes:
                        for cr in response.codes:
                            seen.add((cg, cr))
                for cg, cr in seen:
                    adjacency[registry.pair_index(cg, cr)] += 1
            else:
                for ground in grounds:
                    for cg in ground.codes:
                        for cr in response.codes:
                            adjacency[registry.pair_index(cg, cr)] += 1
        networks[conversation_id] = OnaNetwork(
            unit_id=conversation_id,
            adjacency=adjacency,
            code_frequency=frequency,
            n_turns=len(turns),
        )
    return networks


def normalize(network: OnaNetwork) -> OnaNetwork:
    """Scale to unit Euclidean norm; an all-zero vector is flagged excluded instead."""
    norm = float(np.linalg.norm(network.adjacency))
    if norm == 0.0:
        return OnaNetwork(
            unit_id=network.unit_id,
            adjacency=network.adjacency.copy(),
            code_frequency=network.code_frequency,
            n_turns=network.n_turns,
            normalized=True,
            excluded=True,
        )
    return OnaNetwork(
        unit_id=network.unit_id,
        adjacency=network.adjacency / norm,
        code_frequency=network.code_frequency,
        n_turns=network.n_turns,
        normalized=True,
        excluded=False,
    )


def aggregate(networks: Sequence[OnaNetwork], unit_id: str) -> OnaNetwork:
    """Mean network over units, e.g. one shared graph per experimental group."""
    if not networks:
        raise ValueError("nothing to aggregate")
    adjacency = np.mean([n.adjacency for n in networks], axis=0)
    frequency = np.sum([n.code_frequency for n in networks], axis=0)
    return OnaNetwork(
        unit_id=unit_id,
        adjacency=adjacency,
        code_frequency=frequency,
        n_turns=sum(n.n_turns for n in networks),
        normalized=all(n.normalized for n in networks),
    )


@dataclass(frozen=True)
class Projection:
    points: Dict[str, Tuple[float, float]]
    dim1: np.ndarray  # unit vector along the difference of group means
    dim2: np.ndarray  # leading singular direction of the residual
    group_means: Dict[str, Tuple[float, float]]
    groups: Dict[str, List[str]]  # label -> unit ids, in input order
    degenerate: bool = False


def _sign_fixed(vector: np.ndarray) -> np.ndarray:
    """Pin the sign convention so identical inputs always project identically."""
    idx = int(np.argmax(np.abs(vector)))
    return -vector if vector[idx] < 0 else vector


def project(networks: Sequence[OnaNetwork], group_labels: Sequence[str]) -> Projection:
    """Means-rotation projection: x separates the two group means, y spans the residual."""
    if len(networks) != len(group_labels):
        raise ValueError("one group label per network")
    usable = [(n, g) for n, g in zip(networks, group_labels) if not n.excluded]
    labels = sorted({g for _, g in usable})
    if len(labels) != 2:
        raise ValueError(f"means rotation needs exactly two groups, got {labels}")
    lo, hi = labels
    groups: Dict[str, List[str]] = {lo: [], hi: []}
    for n, g in usable:
        groups[g].append(n.unit_id)
    if any(len(ids) < 2 for ids in groups.values()):
        raise ValueError("each group needs at least two units")

    x_matrix = np.array([n.adjacency for n, _ in usable])
    grand_mean = x_matrix.mean(axis=0)
    centered = x_matrix - grand_mean
    mean_lo = x_matrix[[g == lo for _, g in usable]].mean(axis=0)
    mean_hi = x_matrix[[g == hi for _, g in usable]].mean(axis=0)
    diff = mean_hi - mean_lo
    diff_norm = float(np.linalg.norm(diff))

    degenerate = diff_norm < 1e-12
    if degenerate:
        # Identical means leave dim1 undefined; fall back to plain SVD axes.
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        dim1 = _sign_fixed(vt[0])
        dim2 = _sign_fixed(vt[1]) if vt.shape[0] > 1 else np.zeros_like(dim1)
    else:
        dim1 = diff / diff_norm
        residual = centered - np.outer(centered @ dim1, dim1)
        if float(np.linalg.norm(residual)) < 1e-12:
            dim2 = np.zeros_like(dim1)
        else:
            _, _, vt = np.linalg.svd(residual, full_matrices=False)
            dim2 = _sign_fixed(vt[0])

    xs = centered @ dim1
    ys = centered @ dim2
    points = {n.unit_id: (float(x), float(y)) for (n, _), x, y in zip(usable, xs, ys)}
    group_means = {
        label: (
            float(np.mean([points[u][0] for u in groups[label]])),
            float(np.mean([points[u][1] for u in groups[label]])),
        )
        for label in labels
    }
    return Projection(
        points=points, dim1=dim1, dim2=dim2, group_means=group_means, groups=groups, degenerate=degenerate
    )


@dataclass(frozen=True)
class CompareResult:
    t: float
    df: float
    p: float
    cohen_d: float
    n_a: int
    n_b: int

    def to_json(self) -> dict:
        return {"t": self.t, "df": self.df, "p": self.p, "cohenD": self.cohen_d, "nA": self.n_a, "nB": self.n_b}


def compare(scores_a: Sequence[float], scores_b: Sequence[float]) -> CompareResult:
    """Welch two-sample t-test (unequal variances) with pooled-SD Cohen's d."""
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least two scores")
    var_a = float(a.var(ddof=1))
    var_b = float(b.var(ddof=1))
    if var_a == 0.0 and var_b == 0.0:
        raise ZeroVariance("both groups are constant")
    na, nb = len(a), len(b)
    se_sq = var_a / na + var_b / nb
    t = (float(a.mean()) - float(b.mean())) / math.sqrt(se_sq)
    df = se_sq**2 / ((var_a / na) ** 2 / (na - 1) + (var_b / nb) ** 2 / (nb - 1))
    p = 2.0 * float(scipy_stats.t.sf(abs(t), df))
    pooled_sd = math.sqrt(((na - 1) * var_a + (nb - 1) * var_b) / (na + nb - 2))
    d = (float(a.mean()) - float(b.mean())) / pooled_sd if pooled_sd > 0 else math.inf
    return CompareResult(t=t, df=df, p=p, cohen_d=d, n_a=na, n_b=nb)


# -- ingestion and serialization -----------------------------------------------

CSV_FIELDS = ["conversationId", "seq", "speaker", "directedToAgent", "codes"]


def ingest(csv_path: Union[str, Path], registry: Optional[CodeRegistry] = None) -> List[CodedTurn]:
    """Parse and validate a coded-turn CSV; codes are semicolon-separated per row."""
    registry = registry or CodeRegistry.default()
    known = set(registry.codes)
    turns: List[CodedTurn] = []
    path = Path(csv_path)
    with path.open(newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != CSV_FIELDS:
            raise ParseError(f"header must be {','.join(CSV_FIELDS)}, got {reader.fieldnames}")
        for line_no, row in enumerate(reader, start=2):
            try:
                seq = int(row["seq"])
                directed = row["directedToAgent"].strip().lower() in ("true", "1", "yes")
                codes = frozenset(c.strip() for c in row["codes"].split(";") if c.strip())
                conversation = row["conversationId"].strip()
                speaker = row["speaker"].strip()
            except (KeyError, AttributeError, ValueError) as exc:
                raise ParseError(f"line {line_no}: {exc}") from exc
            if not conversation:
                raise ParseError(f"line {line_no}: empty conversationId")
            unknown = codes - known
            if unknown:
                raise UnknownCode(f"line {line_no}: {sorted(unknown)}")
            turns.append(
                CodedTurn(
                    unit_id=f"{conversation}:{seq}",
                    conversation_id=conversation,
                    speaker=speaker,
                    directed_to_agent=directed,
                    codes=codes,
                )
            )
    return turns


def networks_to_json(networks: Dict[str, OnaNetwork], registry: CodeRegistry, window: int, binary: bool) -> dict:
    out = {
        "window": window,
        "binary": binary,
        "codes": list(registry.codes),
        "networks": [],
    }
    for unit_id, network in networks.items():
        weights = {}
        for (ground, response), value in zip(registry.pair_labels(), network.adjacency):
            if value != 0.0:
                weights[f"{ground}->{response}"] = float(value)
        out["networks"].append(
            {
                "unitId": unit_id,
                "nTurns": network.n_turns,
                "normalized": network.normalized,
                "excluded": network.excluded,
                "codeFrequency": {
                    code: float(freq) for code, freq in zip(registry.codes, network.code_frequency) if freq
                },
                "weights": weights,
            }
        )
    return out


def network_to_dot(network: OnaNetwork, registry: CodeRegistry, min_rel_weight: float = 0.0) -> str:
    """Graphviz export: node size tracks code frequency, edge width relative weight."""
    max_weight = float(network.adjacency.max()) if network.adjacency.size else 0.0
    max_freq = float(network.code_frequency.max()) if network.code_frequency.size else 0.0
    lines = [f'digraph "{network.unit_id}" {{', "  rankdir=LR;"]
    for code, freq in zip(registry.codes, network.code_frequency):
        if freq == 0:
            continue
        size = 0.4 + (float(freq) / max_freq) * 1.1 if max_freq else 0.4
        lines.append(f'  "{code}" [width={size:.2f}, height={size:.2f}, fixedsize=true];')
    if max_weight > 0:
        for (ground, response), value in zip(registry.pair_labels(), network.adjacency):
            rel = float(value) / max_weight
            if value == 0.0 or rel < min_rel_weight:
                continue
            lines.append(f'  "{ground}" -> "{response}" [penwidth={1 + 4 * rel:.2f}, weight={float(value):g}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def projection_to_csv(projection: Projection) -> str:
    lines = ["unitId,group,x,y"]
    label_of = {u: label for label, units in projection.groups.items() for u in units}
    for unit_id, (x, y) in projection.points.items():
        lines.append(f"{unit_id},{label_of[unit_id]},{x:.9g},{y:.9g}")
    for label, (gx, gy) in projection.group_means.items():
        lines.append(f"__mean__,{label},{gx:.9g},{gy:.9g}")
    return "\n".join(lines) + "\n"
