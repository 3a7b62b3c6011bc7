"""Group formation over a public server registry.

Groups are drawn so that, except with a configured failure probability,
every group contains at least ``h`` honest members even when an
adversary controls a fraction ``f`` of the registry.  With h=1 this is
the any-trust condition the basic pipeline needs; h larger than 1 is
what threshold decryption groups need to also survive crashes.

Sizing is exact rational arithmetic, no floating point: the group size
k is the smallest integer where

    num_groups * P[Binomial(k, 1-f) < h]  <  2**eps_log2
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Dict, List, Sequence

from .crypto import seeded_rng


class RegistryTooSmall(Exception):
    """Fewer registered servers than one group needs."""


class NotEnoughGroups(Exception):
    """A positive number of groups is required."""


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        # treat the float as its decimal literal, not its binary expansion
        return Fraction(str(x))
    return Fraction(x)


def malicious_group_probability(k: int, f, h: int = 1) -> Fraction:
    """Exact probability that a k-member group has fewer than h honest
    members when each member is malicious independently with rate f."""
    f = _as_fraction(f)
    honest = 1 - f
    return sum((Fraction(comb(k, i)) * honest**i * f**(k - i)
                for i in range(h)), Fraction(0))


def required_group_size(f, num_groups: int, eps_log2: int,
                        h: int = 1, max_k: int = 4096) -> int:
    """Smallest k where all num_groups groups get >= h honest members
    except with probability below 2**eps_log2."""
    if num_groups < 1:
        raise NotEnoughGroups(f"num_groups={num_groups}")
    if h < 1:
        raise ValueError("at least one honest member is required")
    f = _as_fraction(f)
    if not 0 <= f < 1:
        raise ValueError(f"malicious fraction {f} outside [0, 1)")
    bound = Fraction(2) ** eps_log2
    for k in range(h, max_k + 1):
        if num_groups * malicious_group_probability(k, f, h) < bound:
            return k
    raise ValueError(f"no feasible group size up to {max_k}")


# ---------------------------------------------------------------------------
# registry and formation


@dataclass(frozen=True)
class ServerRecord:
    server_id: str
    cluster: int = 0


def load_registry(path) -> List[ServerRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [ServerRecord(r["server_id"], int(r.get("cluster", 0) or 0))
            for r in rows]


def save_registry(path, records: Sequence[ServerRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["server_id", "cluster"])
        for rec in records:
            writer.writerow([rec.server_id, rec.cluster])


def form_groups(server_ids: Sequence[str], num_groups: int, k: int,
                rng) -> List[List[str]]:
    """Draw num_groups groups of k distinct servers each.

    Sampling is without replacement inside a group and with replacement
    across groups, so one server may sit on several groups.
    """
    if num_groups < 1:
        raise NotEnoughGroups(f"num_groups={num_groups}")
    if len(set(server_ids)) < k:
        raise RegistryTooSmall(
            f"{len(set(server_ids))} servers cannot fill a group of {k}")
    ids = sorted(set(server_ids))
    return [rng.sample(ids, k) for _ in range(num_groups)]


def stagger_positions(groups: Sequence[Sequence[str]]) -> List[List[int]]:
    """Pipeline slot of each member within each group.

    A member serving on several groups must not be the bottleneck of all
    of them at once, so repeat appearances shift to a later slot: the
    member at formation index i of a group prefers slot
    (i + previous appearances) mod k, taking the next free slot on a
    collision.
    """
    seen: Dict[str, int] = {}
    slots = []
    for group in groups:
        k = len(group)
        taken = [False] * k
        assigned = [0] * k
        for i, member in enumerate(group):
            want = (i + seen.get(member, 0)) % k
            while taken[want]:
                want = (want + 1) % k
            taken[want] = True
            assigned[i] = want
            seen[member] = seen.get(member, 0) + 1
        slots.append(assigned)
    return slots


def assign_buddies(num_groups: int) -> List[int]:
    """Escrow target of each group: the next group in a rotation.  A
    lone group can only escrow to itself."""
    if num_groups < 1:
        raise NotEnoughGroups(f"num_groups={num_groups}")
    return [(g + 1) % num_groups for g in range(num_groups)]


@dataclass
class GroupPlan:
    f: str
    eps_log2: int
    h: int
    k: int
    groups: List[List[str]] = field(default_factory=list)
    slots: List[List[int]] = field(default_factory=list)
    buddies: List[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "f": self.f, "eps_log2": self.eps_log2, "h": self.h,
            "k": self.k, "groups": self.groups, "slots": self.slots,
            "buddies": self.buddies}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroupPlan":
        obj = json.loads(text)
        return cls(obj["f"], obj["eps_log2"], obj["h"], obj["k"],
                   obj["groups"], obj["slots"], obj["buddies"])


def make_plan(server_ids: Sequence[str], f, num_groups: int, eps_log2: int,
              seed, h: int = 1, k: int = None) -> GroupPlan:
    """Size, form, stagger, and pair groups in one deterministic step."""
    if k is None:
        k = required_group_size(f, num_groups, eps_log2, h)
    rng = seeded_rng("group-formation", seed)
    groups = form_groups(server_ids, num_groups, k, rng)
    return GroupPlan(str(_as_fraction(f)), eps_log2, h, k, groups,
                     stagger_positions(groups), assign_buddies(num_groups))
