"""The square mixing network.

Messages flow through ``iterations + 1`` layers of ``width`` vertices,
where width is the square root of the (padded) message count.  Layers
0 .. iterations-1 mix: the group owning a vertex shuffles its incoming
messages and re-encrypts each outgoing batch toward the group that will
handle it next.  Batch j of any vertex always goes to vertex j of the
next layer (a transpose), so after one hop a message's vertex is its
old within-vertex slot and its slot is its old vertex.  The final layer
only collects: its vertices are exit slots where ciphertexts come out
fully peeled.

Vertices are assigned to groups round-robin across the whole grid, so
each group owns the same number of vertices per layer whenever the
group count divides the width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence


class BadShape(Exception):
    """Message count, iteration count, or group count is unusable."""


class NotDivisible(Exception):
    """A batch split must divide the items evenly."""


@dataclass(frozen=True)
class SquareNetwork:
    width: int          # vertices per layer, also messages per vertex
    iterations: int     # mixing layers; the route visits iterations+1 vertices
    num_groups: int

    @property
    def total(self) -> int:
        return self.width * self.width

    @property
    def layers(self) -> int:
        return self.iterations + 1


def build_square_network(num_messages: int, iterations: int,
                         num_groups: int) -> SquareNetwork:
    if num_messages < 1:
        raise BadShape(f"num_messages={num_messages}")
    if iterations < 1:
        raise BadShape(f"iterations={iterations}")
    if num_groups < 1:
        raise BadShape(f"num_groups={num_groups}")
    width = math.isqrt(num_messages)
    if width * width < num_messages:
        width += 1
    return SquareNetwork(width, iterations, num_groups)


def pad_count(net: SquareNetwork, num_messages: int) -> int:
    """How many dummy messages entry groups must add to fill the grid."""
    return net.total - num_messages


def vertex_group(net: SquareNetwork, layer: int, vertex: int) -> int:
    if not 0 <= layer <= net.iterations:
        raise BadShape(f"layer {layer} outside 0..{net.iterations}")
    if not 0 <= vertex < net.width:
        raise BadShape(f"vertex {vertex} outside 0..{net.width - 1}")
    return (layer * net.width + vertex) % net.num_groups


def next_vertex(net: SquareNetwork, batch_index: int) -> int:
    """Transpose wiring: batch j of every vertex lands on vertex j."""
    if not 0 <= batch_index < net.width:
        raise BadShape(f"batch {batch_index} outside 0..{net.width - 1}")
    return batch_index


def divide_batches(items: Sequence, num_batches: int) -> List[List]:
    if num_batches < 1 or len(items) % num_batches != 0:
        raise NotDivisible(
            f"{len(items)} items into {num_batches} batches")
    size = len(items) // num_batches
    return [list(items[j * size:(j + 1) * size]) for j in range(num_batches)]


def route_of(net: SquareNetwork, entry_vertex: int,
             batch_choices: Sequence[int]) -> List[int]:
    """Vertex sequence of a message entering at entry_vertex whose
    within-vertex slot after each mix is batch_choices[t].  The route
    has iterations+1 entries, one per layer."""
    if len(batch_choices) != net.iterations:
        raise BadShape("one batch choice per mixing layer")
    route = [entry_vertex]
    for choice in batch_choices:
        route.append(next_vertex(net, choice))
    return route


def touch_counts(net: SquareNetwork) -> Dict[int, int]:
    """Messages handled per group across all mixing layers.  Every
    mixing vertex touches exactly width messages."""
    counts = {g: 0 for g in range(net.num_groups)}
    for layer in range(net.iterations):
        for vertex in range(net.width):
            counts[vertex_group(net, layer, vertex)] += net.width
    return counts


def single_message_distribution(num_messages: int,
                                iterations: int) -> List[float]:
    """Exact position distribution of one tracked message after mixing,
    starting from position 0, assuming uniform within-vertex shuffles.

    Positions are numbered vertex * width + slot.  One iteration sends
    (v, s) to (s', v) where s' is uniform, so the chain is tractable in
    closed form; this evolves it numerically as an independent check.
    """
    width = math.isqrt(num_messages)
    if width * width != num_messages:
        raise BadShape("exact evolution expects a perfect square")
    m = num_messages
    dist = [0.0] * m
    dist[0] = 1.0
    for _ in range(iterations):
        nxt = [0.0] * m
        for pos, p in enumerate(dist):
            if p == 0.0:
                continue
            v, _s = divmod(pos, width)
            for s_new in range(width):
                # message moves to vertex s_new, arriving in slot v
                nxt[s_new * width + v] += p / width
        dist = nxt
    return dist


def total_variation_from_uniform(dist: Sequence[float]) -> float:
    u = 1.0 / len(dist)
    return 0.5 * sum(abs(p - u) for p in dist)
