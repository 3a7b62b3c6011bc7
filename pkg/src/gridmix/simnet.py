"""Deterministic discrete-event simulation of whole rounds.

Servers are actors on a two-cluster network: 40 ms between servers in
the same cluster, 80-160 ms (fixed per link at setup) across clusters.
Time is integer nanoseconds; events fire in (time, sequence) order, so
a run is reproducible bit for bit from its seed.

Simulated time comes from a fixed per-operation cost model, never from
wall-clock measurement, which keeps runs deterministic while the round
still executes real cryptography by default.  For large parameter
sweeps ``modeled=True`` skips the cryptography and only plays out the
timing skeleton, the same methodology the cost numbers assume.

Within a vertex the owning group's members work in their pipeline slot
order: each member's step starts when the hand-off reaches it and the
server is free.  A layer cannot start until every vertex of the
previous layer delivered all of its batches, which is what makes group
count the lever on latency: each group owns width/G vertices per layer
and works them one after another.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .crypto import commit, compose_group_key, keygen, seeded_rng
from .groups import get_group
from .grouping import assign_buddies, form_groups, stagger_positions
from .protocol import (
    Abort, ExitTally, GroupRoundKeys, MemberKey, RoundRecord, TAG_MESSAGE,
    check_traps_against_commitments, encode_frame, encrypt_payload,
    entry_filter, exit_payload, group_step, make_dummy_vector,
    parse_exit_frames, publish_basic_round, publish_trap_round,
    submission_binding, submit_basic, submit_trap, submit_verified,
    trap_frame_len, trustee_decide,
)
from .threshold import (
    UnrecoverableFailure, combine_kem_partials, effective_exponents,
    effective_vkey, escrow_share, partial_kem, recover_share, run_dkg,
)
from .topology import build_square_network, touch_counts, vertex_group

MS = 1_000_000          # nanoseconds

# Seconds one server spends on one ciphertext (element) per operation.
# Batch figures are quoted per 1024 ciphertexts and scale linearly.
COST_S = {
    "enc": 1.40e-4,
    "reenc": 3.35e-4,
    "shuffle": 1.07e-1 / 1024,
    "prove_enc": 1.62e-4,
    "verify_enc": 1.39e-4,
    "prove_reenc": 6.55e-4,
    "verify_reenc": 4.46e-4,
    "prove_shuffle": 7.57e-1 / 1024,
    "verify_shuffle": 1.41 / 1024,
}


def cost_ns(op: str, count: int = 1) -> int:
    return int(COST_S[op] * count * 1e9)


@dataclass
class RoundConfig:
    variant: str = "basic"             # basic | verified | trap
    num_users: int = 8
    iterations: int = 2
    num_groups: int = 4
    group_size: int = 1
    honest_min: int = 1                # h; 2+ switches groups to shared keys
    message_len: int = 8
    payloads: Optional[List[bytes]] = None   # one per user, else generated
    backend: str = "modp"
    seed: int = 0
    round_id: int = 1
    registry_size: Optional[int] = None
    trustee_size: int = 3
    trustee_threshold: int = 2
    zero_latency: bool = False
    modeled: bool = False
    disjoint_groups: bool = False      # partition servers, no sharing
    adversary: Optional["AdversaryScript"] = None
    failures: Optional[Dict[str, int]] = None   # server -> crash time (ns)
    keep_record: bool = False


@dataclass
class Behavior:
    kind: str                          # drop_ct/replace_ct/duplicate_ct/
    layer: Optional[int] = None        # bad_shuffle/bad_reenc/
    vertex: Optional[int] = None       # withhold_report
    count: int = 1
    once: bool = True


@dataclass
class AdversaryScript:
    behaviors: Dict[str, List[Behavior]] = field(default_factory=dict)

    def for_server(self, server: str) -> List[Tuple[str, int, Behavior]]:
        """Behaviors scripted for this server; "*" scripts whoever
        performs the step the filters single out."""
        out = []
        for key in (server, "*"):
            for i, b in enumerate(self.behaviors.get(key, [])):
                out.append((key, i, b))
        return out

    def withholds(self, server: str) -> bool:
        return any(b.kind == "withhold_report"
                   for _, _, b in self.for_server(server))


@dataclass
class RoundResult:
    status: str                        # released/destroyed/aborted/
    reason: str                        # unrecoverable
    accused: List[str]
    published: List[bytes]
    metrics: dict
    record: Optional[RoundRecord] = None


class EventLoop:
    def __init__(self):
        self._heap: List[Tuple[int, int, Callable]] = []
        self._seq = 0
        self.now = 0

    def at(self, t: int, fn: Callable) -> None:
        heapq.heappush(self._heap, (max(t, self.now), self._seq, fn))
        self._seq += 1

    def run(self) -> None:
        while self._heap:
            t, _, fn = heapq.heappop(self._heap)
            self.now = t
            fn()


class Fabric:
    """Servers, clusters, link latencies, crash times, busy accounting."""

    def __init__(self, servers: Sequence[str], seed, zero_latency: bool,
                 failures: Dict[str, int]):
        self.servers = list(servers)
        self.cluster = {s: (0 if i < len(servers) / 2 else 1)
                        for i, s in enumerate(servers)}
        self._lat: Dict[Tuple[str, str], int] = {}
        rng = seeded_rng("fabric", seed)
        for i, a in enumerate(servers):
            for b in servers[i + 1:]:
                if zero_latency:
                    lat = 0
                elif self.cluster[a] == self.cluster[b]:
                    lat = 40 * MS
                else:
                    lat = rng.randrange(80 * MS, 160 * MS + 1)
                self._lat[(a, b)] = self._lat[(b, a)] = lat
        self.busy_until = {s: 0 for s in servers}
        self.busy_total = {s: 0 for s in servers}
        self.crash_at = dict(failures or {})

    def latency(self, a: str, b: str) -> int:
        if a == b:
            return 0
        return self._lat[(a, b)]

    def alive(self, server: str, t: int) -> bool:
        return t < self.crash_at.get(server, 1 << 62)

    def occupy(self, server: str, t: int, cost: int) -> int:
        """Reserve the server from its next free moment; returns when
        the work finishes."""
        start = max(t, self.busy_until[server])
        self.busy_until[server] = start + cost
        self.busy_total[server] += cost
        return start + cost


# ---------------------------------------------------------------------------
# setup


class _Setup:
    """Everything decided before the clock starts: groups, keys, escrow,
    submissions, and the entry grid."""

    def __init__(self, cfg: RoundConfig):
        self.cfg = cfg
        self.group = get_group(cfg.backend)
        registry_size = cfg.registry_size or max(
            cfg.group_size + 1, cfg.num_groups * cfg.group_size)
        self.registry = [f"srv{i:03d}" for i in range(registry_size)]
        rng = seeded_rng("round-setup", cfg.seed, cfg.round_id)
        if cfg.disjoint_groups:
            # one server, one group: isolates group count as the only
            # variable in scaling experiments
            if registry_size < cfg.num_groups * cfg.group_size:
                raise ValueError("registry too small for disjoint groups")
            pool = list(self.registry)
            rng.shuffle(pool)
            self.groups = [
                pool[g * cfg.group_size:(g + 1) * cfg.group_size]
                for g in range(cfg.num_groups)]
        else:
            self.groups = form_groups(self.registry, cfg.num_groups,
                                      cfg.group_size, rng)
        slots = stagger_positions(self.groups)
        # pipeline order: the member holding slot 0 leads
        self.member_order = []
        for g, members in enumerate(self.groups):
            ordered = [None] * len(members)
            for m, s in zip(members, slots[g]):
                ordered[s] = m
            self.member_order.append(ordered)
        self.buddies = assign_buddies(cfg.num_groups)

        self.threshold_mode = cfg.honest_min >= 2
        self._recovered = {}
        self.tkeys = {}
        self.member_secret: Dict[Tuple[int, str], int] = {}
        self.member_pub: Dict[Tuple[int, str], object] = {}
        self.group_pk = {}
        self.escrow: Dict[Tuple[int, int], Dict[str, int]] = {}
        for g, ordered in enumerate(self.member_order):
            k = len(ordered)
            if self.threshold_mode:
                t = k - (cfg.honest_min - 1)
                tkey, _ = run_dkg(self.group, k, t,
                                  seeded_rng("dkg", cfg.seed, g))
                self.tkeys[g] = tkey
                self.group_pk[g] = tkey.group_pk
                for x, server in enumerate(ordered, start=1):
                    self.member_secret[(g, server)] = tkey.shares[x]
                    self.member_pub[(g, server)] = tkey.vkeys[x]
            else:
                pks = []
                for server in ordered:
                    kp = keygen(self.group,
                                seeded_rng("member-key", cfg.seed, g, server))
                    self.member_secret[(g, server)] = kp.sk
                    self.member_pub[(g, server)] = kp.pk
                    pks.append(kp.pk)
                self.group_pk[g] = compose_group_key(self.group, pks)
            # every member's secret is escrowed with the buddy group
            bg = self.buddies[g]
            b_members = self.member_order[bg]
            b_t = (len(b_members) - (cfg.honest_min - 1)
                   if self.threshold_mode else len(b_members))
            for x, server in enumerate(ordered, start=1):
                pieces = escrow_share(
                    self.group, self.member_secret[(g, server)],
                    list(range(1, len(b_members) + 1)), b_t,
                    seeded_rng("escrow", cfg.seed, g, x))
                self.escrow[(g, x)] = {
                    b_members[i - 1]: piece for i, piece in pieces.items()}
                self.escrow_threshold = b_t

        self.trustees, _ = run_dkg(self.group, cfg.trustee_size,
                                   cfg.trustee_threshold,
                                   seeded_rng("trustees", cfg.seed))

        self.net = build_square_network(
            2 * cfg.num_users if cfg.variant == "trap" else cfg.num_users,
            cfg.iterations, cfg.num_groups)
        self.frame_len = (trap_frame_len(self.group, cfg.message_len)
                          if cfg.variant == "trap" else None)
        self._place_submissions(rng)

    def round_keys(self, live_at, attempt_salt=0) -> Dict[int, GroupRoundKeys]:
        """Per-group pipeline keys for the currently live quorum.  A
        dead member's secret is recovered from buddy escrow and applied
        by the member following it, if the quorum alone is too small."""
        del attempt_salt
        keys = {}
        for g, ordered in enumerate(self.member_order):
            live = [s for s in ordered if live_at(s)]
            if not live:
                raise UnrecoverableFailure(f"group {g} has no live member")
            if self.threshold_mode:
                tkey = self.tkeys[g]
                xs = [x for x, s in enumerate(ordered, start=1)
                      if live_at(s)]
                if len(xs) < tkey.threshold:
                    xs = self._recover_to_quorum(g, ordered, xs, live_at,
                                                 tkey.threshold)
                exps = effective_exponents(self.group, tkey, xs)
                members = []
                for x in xs:
                    server = ordered[x - 1]
                    runner = server if live_at(server) else live[0]
                    members.append(MemberKey(
                        runner, exps[x],
                        effective_vkey(self.group, tkey, xs, x)))
                keys[g] = GroupRoundKeys(g, tkey.group_pk, members)
            else:
                members = []
                for x, server in enumerate(ordered, start=1):
                    if live_at(server):
                        members.append(MemberKey(
                            server, self.member_secret[(g, server)],
                            self.member_pub[(g, server)]))
                    else:
                        key = (g, server, "recovered")
                        if key not in self._recovered:
                            self._recovered[key] = \
                                self._recover_secret(g, x, live_at)
                        members.append(MemberKey(
                            live[0], self._recovered[key],
                            self.member_pub[(g, server)]))
                keys[g] = GroupRoundKeys(g, self.group_pk[g], members)
        return keys

    def _recover_secret(self, g: int, x: int, live_at) -> int:
        pieces = {}
        holders = self.escrow[(g, x)]
        order = self.member_order[self.buddies[g]]
        for i, server in enumerate(order, start=1):
            if server in holders and live_at(server):
                pieces[i] = holders[server]
        return recover_share(self.group, pieces, self.escrow_threshold)

    def _recover_to_quorum(self, g, ordered, xs, live_at, need):
        xs = list(xs)
        for x in range(1, len(ordered) + 1):
            if len(xs) >= need:
                break
            if x not in xs:
                self.member_secret[(g, ordered[x - 1])] = \
                    self._recover_secret(g, x, live_at)
                xs.append(x)
        xs.sort()
        if len(xs) < need:
            raise UnrecoverableFailure(f"group {g} cannot reach quorum")
        return xs

    def _place_submissions(self, rng):
        cfg, net, group = self.cfg, self.net, self.group
        w = net.width
        self.grid = [[None] * w for _ in range(w)]
        self.origins = [[None] * w for _ in range(w)]
        self.manifest: List[bytes] = []
        self.commitments = {g: {} for g in range(cfg.num_groups)}
        self.messages: List[bytes] = []
        if cfg.modeled:
            return
        if cfg.payloads is not None and len(cfg.payloads) != cfg.num_users:
            raise ValueError("need exactly one payload per user")
        positions = list(range(net.total))
        rng.shuffle(positions)
        pos = iter(positions)
        binding = submission_binding(cfg.round_id, 0)
        for i in range(cfg.num_users):
            if cfg.payloads is not None:
                msg = cfg.payloads[i]
                if len(msg) > cfg.message_len:
                    raise ValueError(f"payload {i} exceeds message_len")
            else:
                msg = (b"m%03d:" % i) + b"x" * max(0, cfg.message_len - 6)
            self.messages.append(msg)
            if cfg.variant == "trap":
                vi, si = divmod(next(pos), w)
                vt, st = divmod(next(pos), w)
                entry_gid = vertex_group(net, 0, vi)
                trap_gid = vertex_group(net, 0, vt)
                sub = submit_trap(group, self.group_pk[entry_gid],
                                  self.trustees.group_pk, trap_gid, msg,
                                  self.frame_len, rng)
                tvec, _ = encrypt_payload(group, self.group_pk[trap_gid],
                                          sub.trap_bytes, rng)
                self.grid[vi][si] = sub.inner_vector
                self.origins[vi][si] = f"user:{i}"
                self.grid[vt][st] = tvec
                self.origins[vt][st] = f"user:{i}"
                self.commitments[trap_gid][sub.commitment] = f"user:{i}"
            else:
                v, s = divmod(next(pos), w)
                pk = self.group_pk[vertex_group(net, 0, v)]
                if cfg.variant == "verified":
                    sub = submit_verified(group, pk, msg, binding, rng)
                    if not entry_filter(group, pk, [sub], binding)[0]:
                        raise AssertionError("own submission must verify")
                    self.grid[v][s] = sub.vector
                else:
                    self.grid[v][s] = submit_basic(group, pk, msg,
                                                   rng).vector
                self.origins[v][s] = f"user:{i}"
        cap = group.embed_payload_bytes
        pad_elems = max(1, -(-cfg.message_len // cap))
        for p in pos:
            v, s = divmod(p, w)
            pk = self.group_pk[vertex_group(net, 0, v)]
            vec, payload = make_dummy_vector(
                group, pk, self.trustees.group_pk, self.frame_len, rng,
                pad_elems=pad_elems)
            self.grid[v][s] = vec
            self.origins[v][s] = None
            self.manifest.append(commit(payload))

    def elements_per_message(self) -> int:
        if self.cfg.modeled:
            payload = (self.frame_len if self.cfg.variant == "trap"
                       else self.cfg.message_len)
            cap = self.group.embed_payload_bytes
            return max(1, -(-payload // cap))
        for row in self.grid:
            for vec in row:
                if vec is not None:
                    return len(vec)
        return 1


# ---------------------------------------------------------------------------
# the simulated round


def _adversary_tamper(setup: _Setup, cfg: RoundConfig):
    """Translate adversary behaviors into the pipeline tamper hook."""
    if cfg.adversary is None:
        return None
    group = setup.group
    spent = set()
    rng = seeded_rng("adversary", cfg.seed)

    def junk_vector(gid):
        if cfg.variant == "trap":
            # shaped like a real inner frame so only the audit can tell
            body = rng.randbytes(min(setup.frame_len - 3,
                                     group.element_width + 28
                                     + cfg.message_len))
            payload = encode_frame(body, TAG_MESSAGE, setup.frame_len)
        else:
            payload = rng.randbytes(cfg.message_len)
        vec, _ = encrypt_payload(group, setup.group_pk[gid], payload, rng)
        return vec

    def fn(layer, vertex, server, stage, outputs):
        for script_key, idx, beh in cfg.adversary.for_server(server):
            key = (script_key, idx)
            if beh.once and key in spent:
                continue
            if beh.layer is not None and beh.layer != layer:
                continue
            if beh.vertex is not None and beh.vertex != vertex:
                continue
            gid = vertex_group(setup.net, layer, vertex)
            if beh.kind == "drop_ct" and stage == "shuffle":
                spent.add(key)
                outs = list(outputs)
                targets = rng.sample(range(len(outs)),
                                     min(beh.count, len(outs)))
                if cfg.variant == "verified":
                    # a bare removal: the proof step exposes it
                    outs.pop(targets[0])
                else:
                    # swap in junk so the counts still balance and only
                    # the trap audit can notice
                    for t in targets:
                        outs[t] = junk_vector(gid)
                return {"outputs": outs}
            if beh.kind == "replace_ct" and stage == "shuffle":
                spent.add(key)
                outs = list(outputs)
                t = rng.randrange(len(outs))
                outs[t] = junk_vector(gid)
                return {"outputs": outs}
            if beh.kind == "duplicate_ct" and stage == "shuffle":
                spent.add(key)
                outs = list(outputs)
                if len(outs) >= 2:
                    i, j = rng.sample(range(len(outs)), 2)
                    outs[i] = outs[j]
                return {"outputs": outs}
            if beh.kind == "bad_shuffle" and stage == "shuffle":
                spent.add(key)
                outs = list(outputs)
                if len(outs) >= 2:
                    outs[0], outs[1] = outs[1], outs[0]
                return {"outputs": outs}
            if beh.kind == "bad_reenc" and stage.startswith("reenc"):
                spent.add(key)
                outs = list(outputs)
                vec = outs[0]
                outs[0] = tuple(type(ct)(ct.R,
                                         group.mul(ct.c, group.generator),
                                         ct.Y) for ct in vec)
                return {"outputs": outs}
        return None

    return fn


def run_round(cfg: RoundConfig) -> RoundResult:
    setup = _Setup(cfg)
    net, group = setup.net, setup.group
    w = net.width
    fabric = Fabric(setup.registry, cfg.seed, cfg.zero_latency,
                    cfg.failures)
    loop = EventLoop()
    record = RoundRecord() if cfg.keep_record else None
    tamper = _adversary_tamper(setup, cfg)
    elems = setup.elements_per_message()

    state = {
        "arrived": {},          # (layer, vertex) -> count of batches in
        "data": {},             # vertex -> list of vectors (real mode)
        "failed": None,         # (status, reason, accused)
        "exit_time": 0,
        "exit_data": [[] for _ in range(w)],
    }

    def fail(status, reason, accused=None):
        if state["failed"] is None:
            state["failed"] = (status, reason, list(accused or []))

    live_now = lambda s: fabric.alive(s, loop.now)

    def start_vertex(layer, v, attempt=0):
        if state["failed"]:
            return
        try:
            keys = setup.round_keys(live_now)[vertex_group(net, layer, v)]
        except UnrecoverableFailure as exc:
            fail("unrecoverable", str(exc))
            return
        chain = loop.now
        shuffle_work = cost_ns("shuffle", w * elems)
        reenc_work = cost_ns("reenc", w * elems)
        ver_shuffle = ver_reenc = 0
        if cfg.variant == "verified":
            shuffle_work += cost_ns("prove_shuffle", w * elems)
            reenc_work += cost_ns("prove_reenc", w * elems)
            ver_shuffle = cost_ns("verify_shuffle", w * elems)
            ver_reenc = cost_ns("verify_reenc", w * elems)
        prev = None
        for work, verify in ((shuffle_work, ver_shuffle),
                             (reenc_work, ver_reenc)):
            for mk in keys.members:
                arrive = chain if prev is None else \
                    chain + fabric.latency(prev, mk.server)
                if not fabric.alive(mk.server, arrive):
                    # hand-off bounces; redo the vertex after the NACK
                    nack = max(2 * fabric.latency(prev or mk.server,
                                                  mk.server), MS)
                    loop.at(arrive + nack,
                            lambda l=layer, vv=v, a=attempt + 1:
                            start_vertex(l, vv, a))
                    return
                chain = fabric.occupy(mk.server, arrive, work)
                if verify:
                    # co-members check the posted proof; the pipeline
                    # waits for the slowest of them before moving on
                    ends = [chain]
                    for other in keys.members:
                        if other.server != mk.server:
                            ends.append(fabric.occupy(other.server,
                                                      chain, verify))
                    chain = max(ends)
                prev = mk.server
        if not cfg.modeled:
            rng = seeded_rng("mix", cfg.seed, layer, v, attempt)
            try:
                batches = group_step(
                    group, keys,
                    [None if layer == net.iterations - 1 else
                     setup.group_pk[vertex_group(net, layer + 1, b)]
                     for b in range(w)],
                    state["data"][(layer, v)], rng, layer=layer, vertex=v,
                    variant=cfg.variant, tamper=tamper, record=record)
            except Abort as exc:
                fail("aborted", exc.reason, [exc.accused])
                return
        else:
            batches = [[("tok", layer, v, b)] for b in range(w)]
        sender = keys.members[-1].server
        for b in range(w):
            if layer == net.iterations - 1:
                dest_gid = vertex_group(net, net.iterations, b)
            else:
                dest_gid = vertex_group(net, layer + 1, b)
            dest = setup.member_order[dest_gid][0]
            t_arrive = chain + fabric.latency(sender, dest)
            loop.at(t_arrive,
                    lambda l=layer, bb=b, vv=v, data=batches[b]:
                    deliver(l + 1, bb, vv, data))

    def deliver(layer, v, src, data):
        if state["failed"]:
            return
        key = (layer, v)
        state["arrived"].setdefault(key, {})[src] = data
        if len(state["arrived"][key]) < w:
            return
        ordered = [state["arrived"][key][s] for s in range(w)]
        flat = [item for batch in ordered for item in batch]
        if layer == net.iterations:
            state["exit_data"][v] = flat
            state["exit_time"] = max(state["exit_time"], loop.now)
        else:
            state["data"][(layer, v)] = flat
            loop.at(loop.now, lambda: start_vertex(layer, v))

    # entry: verified groups check submission proofs before mixing
    t0 = 0
    if cfg.variant == "verified" and not cfg.modeled:
        t0 = cost_ns("verify_enc", net.total * elems // max(1, w))
    for v in range(w):
        if not cfg.modeled:
            state["data"][(0, v)] = list(setup.grid[v])
        loop.at(t0, lambda vv=v: start_vertex(0, vv))
    loop.run()

    if state["failed"]:
        status, reason, accused = state["failed"]
        metrics = _metrics(cfg, setup, fabric, loop.now, status)
        return RoundResult(status, reason, accused, [], metrics, record)

    published: List[bytes] = []
    status, reason, accused = "released", "round complete", []
    if cfg.modeled:
        reason = "modeled run"
    elif cfg.variant == "trap":
        status, reason, published = _trap_finish(cfg, setup, fabric,
                                                 state["exit_data"])
    else:
        payloads = [exit_payload(group, vec)
                    for v in range(w) for vec in state["exit_data"][v]]
        published = publish_basic_round(payloads, setup.manifest)
    metrics = _metrics(cfg, setup, fabric, state["exit_time"], status)
    return RoundResult(status, reason, accused, published, metrics, record)


def _trap_finish(cfg, setup, fabric, exit_data):
    group, net = setup.group, setup.net
    now = lambda s: fabric.alive(s, 1 << 61)
    exit_groups: Dict[int, List[bytes]] = {}
    for v in range(net.width):
        gid = vertex_group(net, net.iterations, v)
        frames = [exit_payload(group, vec) for vec in exit_data[v]]
        exit_groups.setdefault(gid, []).extend(frames)
    tallies, routed, inners = [], {}, []
    withheld = cfg.adversary.withholds if cfg.adversary else lambda s: False
    for gid, frames in sorted(exit_groups.items()):
        traps, inner, bad = parse_exit_frames(frames)
        inners.extend(inner)
        n_traps = sum(len(x) for x in traps.values())
        for tgid, items in traps.items():
            routed.setdefault(tgid, []).extend(items)
        for server in setup.member_order[gid]:
            if now(server) and not withheld(server):
                tallies.append(ExitTally(gid, server, bad == 0, n_traps,
                                         len(inner)))
    checks = []
    for gid, table in setup.commitments.items():
        livemem = [s for s in setup.member_order[gid]
                   if now(s) and not withheld(s)]
        checks.extend(check_traps_against_commitments(
            gid, livemem, list(table.keys()), routed.get(gid, [])))
    expected_exit = {gid: [s for s in setup.member_order[gid] if now(s)]
                     for gid in exit_groups}
    expected_check = {gid: [s for s in setup.member_order[gid] if now(s)]
                      for gid in setup.commitments}
    verdict = trustee_decide(
        {g: len(t) for g, t in setup.commitments.items()},
        len(setup.manifest), tallies, checks, expected_exit, expected_check)
    if not verdict.released:
        return "destroyed", verdict.reason, []
    tk = setup.trustees
    quorum = list(range(1, cfg.trustee_threshold + 1))

    def shared(R):
        parts = [partial_kem(group, x, tk.shares[x], R) for x in quorum]
        return combine_kem_partials(group, tk, R, parts)

    return "released", verdict.reason, publish_trap_round(
        group, shared, inners, setup.manifest)


def _metrics(cfg, setup, fabric, end_time, status):
    participating = sorted({s for g in setup.member_order for s in g})
    busy = [fabric.busy_total[s] for s in participating]
    horizon = max(end_time, 1)
    idle = [1 - min(b, horizon) / horizon for b in busy]
    touches = touch_counts(setup.net)
    return {
        "variant": cfg.variant,
        "users": cfg.num_users,
        "messages": setup.net.total,
        "width": setup.net.width,
        "groups": cfg.num_groups,
        "group_size": cfg.group_size,
        "iterations": cfg.iterations,
        "seed": cfg.seed,
        "round_id": cfg.round_id,
        "status": status,
        "latency_ms": end_time / MS,
        "busy_ms_mean": sum(busy) / len(busy) / MS,
        "idle_fraction_mean": sum(idle) / len(idle),
        "touches_per_group_max": max(touches.values()),
        "touches_per_group_min": min(touches.values()),
        "modeled": cfg.modeled,
    }


# ---------------------------------------------------------------------------
# sweeps


def cost_model_latency(cfg: RoundConfig) -> float:
    """Latency of the computation alone: the same round on zero-latency
    links, which isolates the term group count can shrink."""
    alt = replace(cfg, zero_latency=True)
    return run_round(alt).metrics["latency_ms"]


def scaling_sweep(base: RoundConfig, group_counts: Sequence[int],
                  repeats: int = 2) -> List[dict]:
    """One row per group count.  Every point runs ``repeats`` times and
    the runs must agree exactly, a running determinism check."""
    rows = []
    for g in group_counts:
        cfg = replace(base, num_groups=g)
        results = [run_round(cfg) for _ in range(repeats)]
        first = results[0].metrics
        for other in results[1:]:
            if other.metrics != first:
                raise AssertionError(f"nondeterministic run at G={g}")
        row = dict(first)
        row["cost_latency_ms"] = cost_model_latency(cfg)
        rows.append(row)
    return rows


def compare_variants(base: RoundConfig,
                     variants: Sequence[str] = ("basic", "verified"),
                     ) -> List[dict]:
    """Same total message load per variant; a trap round carries two
    messages per user, so its user count is halved to keep the mix the
    same size."""
    load = base.num_users * (2 if base.variant == "trap" else 1)
    rows = []
    for variant in variants:
        users = load // 2 if variant == "trap" else load
        cfg = replace(base, variant=variant, num_users=users)
        row = dict(run_round(cfg).metrics)
        row["cost_latency_ms"] = cost_model_latency(cfg)
        rows.append(row)
    return rows


def write_metrics_jsonl(path, rows: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
