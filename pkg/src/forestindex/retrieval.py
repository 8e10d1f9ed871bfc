"""Context generation: from located entities to rendered prompt text.

For every entity found by the index, each occurrence contributes its
nearby hierarchy (ancestors and descendants) as one templated sentence
pair. The rendered prompt stitches a system preamble, those sentences,
and the original question together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cuckoo import CuckooIndex
from .forest import (
    Forest,
    InvalidAddressError,
    NodeAddress,
    canonical_label,
    hierarchy_chain,
)


class StaleAddressError(LookupError):
    """The index holds an address the forest no longer resolves."""


class BadTemplateError(ValueError):
    """The prompt template is missing a required placeholder."""


DEFAULT_TEMPLATE = (
    "The upward hierarchical relationship of entity {entity} are: {up}. "
    "The downward hierarchical relationship of entity {entity} are: {down}."
)

DEFAULT_SYSTEM_PROMPT = (
    "Answer using the entity relationships listed below. "
    "Each line describes one occurrence of an entity in a hierarchy tree."
)

_PLACEHOLDERS = ("{entity}", "{up}", "{down}")


def join_labels(labels: list[str]) -> str:
    """Join labels for prose: "B", "B and C", "B, C and D", or "none"."""
    if not labels:
        return "none"
    if len(labels) == 1:
        return labels[0]
    return ", ".join(labels[:-1]) + " and " + labels[-1]


@dataclass(frozen=True)
class Occurrence:
    """One located node plus its nearby hierarchy labels."""

    address: NodeAddress
    up: tuple[str, ...]
    down: tuple[str, ...]


@dataclass(frozen=True)
class EntityContext:
    label: str
    occurrences: tuple[Occurrence, ...]


@dataclass(frozen=True)
class ContextBundle:
    """Everything needed to render one prompt."""

    query_text: str
    contexts: tuple[EntityContext, ...]
    missing: tuple[str, ...] = field(default_factory=tuple)


def generate_context(
    index: CuckooIndex,
    forest: Forest,
    entities: list[str],
    n: int = 3,
    query_text: str = "",
) -> ContextBundle:
    """Locate each entity and collect n-level hierarchy context.

    Entities are canonicalized and deduplicated first, so each found
    entity's temperature rises exactly once per call. Occurrences keep
    block-list order (construction order). Entities the index does not
    hold land in ``missing`` rather than erroring: an extracted entity
    may simply not exist in the forest.
    """
    seen: set[str] = set()
    contexts: list[EntityContext] = []
    missing: list[str] = []
    for raw in entities:
        label = canonical_label(raw)
        if not label or label in seen:
            continue
        seen.add(label)
        head = index.lookup_and_touch(label)
        if head is None:
            missing.append(label)
            continue
        occurrences = []
        for addr in head.iter_addresses():
            try:
                up, down = hierarchy_chain(forest, addr, n)
            except InvalidAddressError as exc:
                raise StaleAddressError(
                    f"index address {addr!r} for entity {label!r} "
                    "does not resolve in this forest"
                ) from exc
            occurrences.append(Occurrence(addr, tuple(up), tuple(down)))
        contexts.append(EntityContext(label, tuple(occurrences)))
    return ContextBundle(query_text, tuple(contexts), tuple(missing))


def render_prompt(
    bundle: ContextBundle,
    system_prompt: str = DEFAULT_SYSTEM_PROMPT,
    template: str = DEFAULT_TEMPLATE,
) -> str:
    """Render one prompt string from a context bundle.

    The template must contain all of {entity}, {up} and {down}; they are
    substituted textually, once per occurrence. Output is deterministic
    given identical inputs.
    """
    for placeholder in _PLACEHOLDERS:
        if placeholder not in template:
            raise BadTemplateError(f"template is missing {placeholder}")
    lines: list[str] = []
    if system_prompt:
        lines.append(system_prompt)
    for context in bundle.contexts:
        for occ in context.occurrences:
            lines.append(
                template.replace("{entity}", context.label)
                .replace("{up}", join_labels(list(occ.up)))
                .replace("{down}", join_labels(list(occ.down)))
            )
    if bundle.query_text:
        lines.append(bundle.query_text)
    return "\n".join(lines)
