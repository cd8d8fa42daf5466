"""Shared fixture builders for the test suite."""

from __future__ import annotations

import numpy as np

from tagsmith import (
    Content,
    GraphConfig,
    ScriptedEncoder,
    Tag,
    TagGraph,
    TagRepository,
    canonical_text,
)


def unit_vector(rng: np.random.Generator, dim: int) -> list[float]:
    vec = rng.normal(size=dim)
    return (vec / np.linalg.norm(vec)).tolist()


class RandomGraphFixture:
    """A randomized graph built through the public API, plus its raw pieces.

    Raw vectors and planted deterministic edges are kept so oracles can
    re-derive everything from first principles.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        *,
        n_contents: int,
        n_tags: int,
        dim: int = 8,
        config: GraphConfig | None = None,
        det_per_content: float = 2.0,
    ) -> None:
        self.config = config or GraphConfig(
            delta_ct=0.3, delta_cc=0.4, cap_c2t=5, cap_c2c2t=3
        )
        self.contents = [
            Content(f"c{i:04d}", title=f"content number {i:04d}") for i in range(n_contents)
        ]
        self.tags = [Tag(f"t{i:04d}", f"tag number {i:04d}") for i in range(n_tags)]
        self.content_vecs = {c.id: unit_vector(rng, dim) for c in self.contents}
        self.tag_vecs = {t.id: unit_vector(rng, dim) for t in self.tags}
        table = {canonical_text(c): self.content_vecs[c.id] for c in self.contents}
        table.update({canonical_text(t): self.tag_vecs[t.id] for t in self.tags})
        self.encoder = ScriptedEncoder(table, dim=dim)
        self.det_edges: set[tuple[str, str]] = set()
        if self.contents and self.tags:
            for c in self.contents:
                for _ in range(rng.poisson(det_per_content)):
                    t = self.tags[int(rng.integers(len(self.tags)))]
                    self.det_edges.add((c.id, t.id))

    def build(self, order_seed: int | None = None) -> TagGraph:
        """Construct the graph through add_tag/add_content/add_deterministic.

        With an order seed, vertex insertions are shuffled, for
        order-independence checks.
        """
        graph = TagGraph(self.encoder, self.config)
        steps = [("t", t) for t in self.tags] + [("c", c) for c in self.contents]
        if order_seed is not None:
            np.random.default_rng(order_seed).shuffle(steps)
        for kind, item in steps:
            if kind == "t":
                graph.add_tag(item)
            else:
                graph.add_content(item)
        for c, t in sorted(self.det_edges):
            graph.add_deterministic(c, t)
        return graph


def make_text_fixture(delta_ct=0.1, delta_cc=0.3, dim=64):
    """Hashing-encoder graph + repo over a few real-text tags."""
    from tagsmith import HashingEncoder

    encoder = HashingEncoder(dim=dim)
    repo = TagRepository()
    graph = TagGraph(encoder, GraphConfig(delta_ct=delta_ct, delta_cc=delta_cc))
    for tag in (
        Tag("t-marine", "marine wildlife"),
        Tag("t-arctic", "arctic travel"),
        Tag("t-cook", "cooking recipes"),
    ):
        repo.add(tag)
        graph.add_tag(tag)
    return encoder, repo, graph
