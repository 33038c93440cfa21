"""Label tools and servers along the four classification axes.

Tool level: direct impact (perception/reasoning/action with a functionality
subcode) and the three-step task assignment through the hierarchy. Server
level: generality (industry + environment) and payments autonomy; every tool
inherits its server's environment generality. Each provider-backed step has
a deterministic keyword fallback driven by editable lexicon assets, so the
whole labeling stays total and reproducible offline.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

from mcp_scope.extract import ServerRecord, ToolRecord
from mcp_scope.providers import (
    EmbeddingProvider,
    HashingEmbedder,
    ProviderError,
    TextAnalysisProvider,
    cosine_to_many,
    load_lexicon,
    load_prompt,
)
from mcp_scope.taxonomy import Hierarchy, stakes_bucket, task_soc_distribution

logger = logging.getLogger(__name__)

CATEGORY_BY_DIGIT = {"1": "perception", "2": "reasoning", "3": "action"}
VALID_CODES = ("1.1", "2.1", "2.2", "2.3", "3.1", "3.2", "3.3", "3.4", "3.5", "3.6", "3.7")
IMPACT_ORDER = {"perception": 0, "reasoning": 1, "action": 2}
CODE_REPLY = re.compile(r"^\s*([123]\.\d)\s*$")


@dataclass
class DirectImpact:
    category: str | None = None
    functionality: str | None = None

    @classmethod
    def from_code(cls, code: str | None) -> "DirectImpact":
        if code is None:
            return cls()
        if code not in VALID_CODES:
            raise ValueError(f"invalid functionality code: {code}")
        return cls(category=CATEGORY_BY_DIGIT[code[0]], functionality=code)

    @property
    def classified(self) -> bool:
        return self.functionality is not None

    def to_dict(self) -> dict:
        return {"category": self.category, "functionality": self.functionality}


@dataclass
class GeneralityLabel:
    industry_general: bool
    environment_general: bool
    action_space_description: str = ""

    def to_dict(self) -> dict:
        return {
            "industry_general": self.industry_general,
            "environment_general": self.environment_general,
            "action_space_description": self.action_space_description,
        }


@dataclass
class PaymentsLabel:
    autonomy: int
    analysis: str = ""

    def __post_init__(self):
        if not 0 <= self.autonomy <= 4:
            raise ValueError(f"autonomy out of 0..4: {self.autonomy}")

    def to_dict(self) -> dict:
        return {"autonomy": self.autonomy, "analysis": self.analysis}


@dataclass
class TaskAssignment:
    l1_id: str
    l2_id: str
    task_id: str
    soc_distribution: dict[str, float] = field(default_factory=dict)
    stakes_bucket: str | None = None
    # deep levels are emitted but flagged: the top level is the reliable one
    low_confidence_levels: tuple = ("l2", "task")

    def to_dict(self) -> dict:
        return {
            "l1_id": self.l1_id,
            "l2_id": self.l2_id,
            "task_id": self.task_id,
            "soc_distribution": self.soc_distribution,
            "stakes_bucket": self.stakes_bucket,
            "low_confidence_levels": list(self.low_confidence_levels),
        }


@dataclass
class ToolClassification:
    tool_name: str
    direct_impact: DirectImpact
    task: TaskAssignment | None = None

    def to_dict(self) -> dict:
        return {
            "tool_name": self.tool_name,
            "direct_impact": self.direct_impact.to_dict(),
            "task": self.task.to_dict() if self.task else None,
        }


@dataclass
class ServerAggregate:
    direct_impact_category: str | None
    l1_domain: str | None
    soc_group: str | None

    def to_dict(self) -> dict:
        return {
            "direct_impact_category": self.direct_impact_category,
            "l1_domain": self.l1_domain,
            "soc_group": self.soc_group,
        }


@dataclass
class ServerClassification:
    server_id: str
    tools: list[ToolClassification]
    generality: GeneralityLabel
    payments: PaymentsLabel
    aggregate: ServerAggregate

    def to_dict(self) -> dict:
        return {
            "server_id": self.server_id,
            "tools": [t.to_dict() for t in self.tools],
            "generality": self.generality.to_dict(),
            "payments": self.payments.to_dict(),
            "aggregate": self.aggregate.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ServerClassification":
        tools = []
        for t in d["tools"]:
            task = None
            if t.get("task"):
                td = t["task"]
                task = TaskAssignment(
                    l1_id=td["l1_id"], l2_id=td["l2_id"], task_id=td["task_id"],
                    soc_distribution=td.get("soc_distribution", {}),
                    stakes_bucket=td.get("stakes_bucket"),
                )
            tools.append(ToolClassification(
                tool_name=t["tool_name"],
                direct_impact=DirectImpact(**t["direct_impact"]),
                task=task,
            ))
        return cls(
            server_id=d["server_id"],
            tools=tools,
            generality=GeneralityLabel(**d["generality"]),
            payments=PaymentsLabel(**d["payments"]),
            aggregate=ServerAggregate(**d["aggregate"]),
        )


def _tokens(text: str) -> list[str]:
    text = re.sub(r"(?<=[a-z0-9])(?=[A-Z])", " ", text)  # camelCase boundaries
    return re.findall(r"[a-zA-Z]+", text.lower())


def keyword_direct_impact(text: str) -> str | None:
    """Lexicon fallback: leading verb sets the category, nouns pick the 3.x subcode."""
    lex = load_lexicon("direct_impact")
    tokens = _tokens(text)
    code = None
    for tok in tokens:
        for rule in lex["verb_rules"]:
            if tok in rule["verbs"]:
                code = rule["code"]
                break
        if code:
            break
    if code is None:
        return None
    if code != "3.x":
        return code
    for tok in tokens:
        for rule in lex["action_noun_rules"]:
            if tok in rule["nouns"]:
                return rule["code"]
    return lex["default_action_code"]


def _tool_block(tool: ToolRecord) -> str:
    parts = [f"Tool name: {tool.name}", f"Description: {tool.description}"]
    if tool.input_schema:
        parts.append(f"Input schema: {tool.input_schema}")
    return "\n".join(parts)


def _server_block(server: ServerRecord) -> str:
    ex = server.extraction
    return f"MCP server: {server.repo.name}\nSummary: {ex.summary}"


def classify_direct_impact(
    tool: ToolRecord,
    server_ctx: ServerRecord | None = None,
    provider: TextAnalysisProvider | None = None,
) -> DirectImpact:
    """Functionality code for one tool; provider replies failing the d.d
    format get one retry, then the keyword fallback."""
    text = f"{tool.name} {tool.description}"
    if provider is not None:
        instruction = (
            load_prompt("direct_impact")
            .replace("<<TOOL>>", _tool_block(tool))
            .replace("<<SERVER>>", _server_block(server_ctx) if server_ctx else "no server context")
        )
        for attempt in (1, 2):
            try:
                reply = provider.complete("direct_impact", instruction, _tool_block(tool))
            except ProviderError as exc:
                logger.warning("direct-impact provider failed for %s: %s", tool.name, exc)
                break
            m = CODE_REPLY.match(reply.strip())
            if m and m.group(1) in VALID_CODES:
                return DirectImpact.from_code(m.group(1))
            if reply.strip().lower().strip("'\"`") == "none":
                return DirectImpact.from_code(None)
            logger.warning("bad direct-impact reply %r for %s (attempt %d)",
                           reply[:40], tool.name, attempt)
    return DirectImpact.from_code(keyword_direct_impact(text))


def keyword_server_labels(document: str) -> dict:
    """Deterministic generality + payments labels for one server document."""
    gen_lex = load_lexicon("generality")
    pay_lex = load_lexicon("payments")
    text = document.lower()

    if len(document.strip()) < gen_lex["min_documentation_chars"]:
        return {
            "analysis_notes": "insufficient documentation",
            "action_space_description": "Unclear - insufficient documentation to determine action space",
            "generality_industry": 1,
            "generality_environment": 1,
            "payments_analysis": "no data - assuming not for payments",
            "payments_autonomy": 0,
        }

    env_hits = [t for t in gen_lex["unconstrained_environment_terms"] if t in text]
    industry_hits = [t for t in gen_lex["industry_specific_terms"] if t in text]
    environment = 1 if env_hits else 0
    industry = 0 if industry_hits else 1

    context_hits = [t for t in pay_lex["context_terms"] if t in text]
    autonomy = 0
    pay_notes = "no payment functionality matched"
    if context_hits:
        for level, key in ((4, "level4_terms"), (3, "level3_terms"), (2, "level2_terms"), (1, "level1_terms")):
            hits = [t for t in pay_lex[key] if t in text]
            if hits:
                autonomy = level
                pay_notes = f"matched: {', '.join(sorted(hits)[:5])}"
                break
        else:
            autonomy = 1
            pay_notes = f"payment context only: {', '.join(sorted(context_hits)[:5])}"

    if environment:
        description = (
            "General-purpose access to unconstrained environments "
            f"(matched: {', '.join(sorted(env_hits)[:5])})"
        )
    else:
        description = "Pre-defined operations in a constrained environment"
    return {
        "analysis_notes": "lexicon-based analysis",
        "action_space_description": description,
        "generality_industry": industry,
        "generality_environment": environment,
        "payments_analysis": pay_notes,
        "payments_autonomy": autonomy,
    }


def _server_document(server: ServerRecord) -> str:
    ex = server.extraction
    tools = "\n".join(f"- {t.name}: {t.description}" for t in ex.tools)
    schemas = "\n".join(
        f"- {t.name} inputs: {t.input_schema}" for t in ex.tools if t.input_schema
    )
    parts = [
        f"Input: {server.repo.name}",
        f"Description: {ex.summary}",
        "Tools:",
        tools,
    ]
    if schemas:
        parts += ["Required inputs:", schemas]
    parts.append(ex.filtered_content)
    return "\n\n".join(p for p in parts if p)


def _parse_server_labels(raw: str) -> dict:
    body = raw.strip()
    fence = re.match(r"^```(?:json)?\s*(.*?)\s*```$", body, re.DOTALL)
    if fence:
        body = fence.group(1)
    data = json.loads(body)
    if not isinstance(data, dict):
        raise ValueError("labels must be a JSON object")
    for key in ("generality_industry", "generality_environment", "payments_autonomy"):
        if key not in data:
            raise ValueError(f"missing key: {key}")
    if data["generality_industry"] not in (0, 1) or data["generality_environment"] not in (0, 1):
        raise ValueError("generality flags must be 0/1")
    if data["payments_autonomy"] not in (0, 1, 2, 3, 4):
        raise ValueError("payments_autonomy must be 0..4")
    return data


def server_labels(server: ServerRecord, provider: TextAnalysisProvider | None = None) -> dict:
    """Raw generality/payments label dict, provider-backed with fallback."""
    document = _server_document(server)
    if provider is not None:
        instruction = load_prompt("server_labels")
        for attempt in (1, 2):
            try:
                return _parse_server_labels(
                    provider.complete("server_labels", instruction, document)
                )
            except (ProviderError, ValueError, json.JSONDecodeError) as exc:
                logger.warning("server-label attempt %d failed for %s: %s",
                               attempt, server.id, exc)
    return keyword_server_labels(document)


def classify_generality(server: ServerRecord, provider: TextAnalysisProvider | None = None) -> GeneralityLabel:
    labels = server_labels(server, provider)
    return GeneralityLabel(
        industry_general=bool(labels["generality_industry"]),
        environment_general=bool(labels["generality_environment"]),
        action_space_description=labels.get("action_space_description", ""),
    )


def classify_payments(server: ServerRecord, provider: TextAnalysisProvider | None = None) -> PaymentsLabel:
    labels = server_labels(server, provider)
    return PaymentsLabel(
        autonomy=int(labels["payments_autonomy"]),
        analysis=labels.get("payments_analysis", ""),
    )


def _select_option(
    task_kind: str,
    template_fills: dict,
    options: list[tuple[str, str]],
    query_text: str,
    provider: TextAnalysisProvider | None,
    embedder: EmbeddingProvider,
) -> str:
    """One single-choice selection step: provider first (one retry), then
    embedding argmax over the option texts."""
    option_lines = "\n".join(f"{oid}: {text}" for oid, text in options)
    valid = {oid for oid, _ in options}
    if provider is not None:
        instruction = load_prompt(task_kind)
        for token, value in {**template_fills, "<<OPTIONS>>": option_lines}.items():
            instruction = instruction.replace(token, value)
        for attempt in (1, 2):
            try:
                reply = provider.complete(task_kind, instruction, query_text).strip()
            except ProviderError as exc:
                logger.warning("%s provider failed: %s", task_kind, exc)
                break
            if reply in valid:
                return reply
            logger.warning("invalid %s choice %r (attempt %d)", task_kind, reply[:30], attempt)
    sims = cosine_to_many(embedder, query_text, [text for _, text in options])
    best = max(range(len(options)), key=lambda i: (sims[i], options[i][0]))
    top = max(sims)
    tied = sorted(options[i][0] for i in range(len(options)) if sims[i] >= top - 1e-12)
    return tied[0] if tied else options[best][0]


def classify_task(
    tool: ToolRecord,
    hierarchy: Hierarchy,
    provider: TextAnalysisProvider | None = None,
    embedder: EmbeddingProvider | None = None,
    server_ctx: ServerRecord | None = None,
) -> TaskAssignment:
    """Three sequential single-choice selections: L1 among 12, L2 among the
    chosen L1's children, task among the chosen L2's members."""
    embedder = embedder or HashingEmbedder()
    tool_text = f"{tool.name} {tool.description}"
    fills = {
        "<<TOOL>>": _tool_block(tool),
        "<<SERVER>>": _server_block(server_ctx) if server_ctx else "no server context",
    }

    # only populated categories are selectable: an empty L1 is a dead end
    populated = {n.parent for n in hierarchy.l2_nodes}
    l1_options = [(n.id, n.name) for n in hierarchy.l1_nodes if n.id in populated]
    if not l1_options:
        raise ValueError("hierarchy has no level-2 clusters")
    l1_id = _select_option("task_level1", fills, l1_options, tool_text, provider, embedder)
    l1_name = dict(l1_options)[l1_id]

    children = hierarchy.children(l1_id)
    l2_options = [(n.id, n.name) for n in sorted(children, key=lambda n: n.id)]
    l2_id = _select_option(
        "task_level2",
        {**fills, "<<CHOSEN_ID>>": l1_id, "<<CHOSEN_NAME>>": l1_name},
        l2_options, tool_text, provider, embedder,
    )
    l2_name = dict(l2_options)[l2_id]

    members = sorted(hierarchy.members(l2_id), key=lambda t: t.task_id)
    task_options = [(t.task_id, t.text) for t in members]
    task_id = _select_option(
        "task_level3",
        {**fills, "<<CHOSEN_ID>>": l2_id, "<<CHOSEN_NAME>>": l2_name},
        task_options, tool_text, provider, embedder,
    )

    task = hierarchy.tasks[task_id]
    return TaskAssignment(
        l1_id=l1_id,
        l2_id=l2_id,
        task_id=task_id,
        soc_distribution=task_soc_distribution(task),
        stakes_bucket=stakes_bucket(task.impact_score) if task.impact_score is not None else None,
    )


def aggregate_server(tools: list[ToolClassification]) -> ServerAggregate:
    """Server labels from tool labels: max direct impact, mode domain/SOC.

    Mode ties break toward the first tool in README order. Unclassified
    tools are skipped in each aggregate.
    """
    if not tools:
        raise ValueError("aggregate_server needs at least one tool")

    categories = [t.direct_impact.category for t in tools if t.direct_impact.classified]
    category = max(categories, key=lambda c: IMPACT_ORDER[c]) if categories else None

    domain_counts: dict[str, int] = {}
    for t in tools:
        if t.task is not None:
            domain_counts[t.task.l1_id] = domain_counts.get(t.task.l1_id, 0) + 1
    domain = None
    if domain_counts:
        top = max(domain_counts.values())
        candidates = {d for d, c in domain_counts.items() if c == top}
        for t in tools:
            if t.task is not None and t.task.l1_id in candidates:
                domain = t.task.l1_id
                break

    soc_weights: dict[str, float] = {}
    for t in tools:
        if t.task is not None:
            for soc, w in t.task.soc_distribution.items():
                soc_weights[soc] = soc_weights.get(soc, 0.0) + w
    soc = None
    if soc_weights:
        top_w = max(soc_weights.values())
        candidates = {s for s, w in soc_weights.items() if w >= top_w - 1e-9}
        for t in tools:
            if t.task is None or not t.task.soc_distribution:
                continue
            dist = t.task.soc_distribution
            tool_top = min(s for s, w in dist.items() if w >= max(dist.values()) - 1e-12)
            if tool_top in candidates:
                soc = tool_top
                break
        if soc is None:
            soc = min(candidates)

    return ServerAggregate(direct_impact_category=category, l1_domain=domain, soc_group=soc)


def classify_server(
    server: ServerRecord,
    hierarchy: Hierarchy | None,
    provider: TextAnalysisProvider | None = None,
    embedder: EmbeddingProvider | None = None,
) -> ServerClassification:
    """Full labeling of one verified server and all its tools."""
    labels = server_labels(server, provider)
    generality = GeneralityLabel(
        industry_general=bool(labels["generality_industry"]),
        environment_general=bool(labels["generality_environment"]),
        action_space_description=labels.get("action_space_description", ""),
    )
    payments = PaymentsLabel(
        autonomy=int(labels["payments_autonomy"]),
        analysis=labels.get("payments_analysis", ""),
    )
    tool_cls = []
    for tool in server.extraction.tools:
        impact = classify_direct_impact(tool, server, provider)
        task = (
            classify_task(tool, hierarchy, provider, embedder, server)
            if hierarchy is not None
            else None
        )
        tool_cls.append(ToolClassification(tool_name=tool.name, direct_impact=impact, task=task))
    return ServerClassification(
        server_id=server.id,
        tools=tool_cls,
        generality=generality,
        payments=payments,
        aggregate=aggregate_server(tool_cls),
    )


def read_classifications(path) -> list[ServerClassification]:
    with open(path, encoding="utf-8") as fh:
        return [ServerClassification.from_dict(json.loads(line)) for line in fh if line.strip()]
