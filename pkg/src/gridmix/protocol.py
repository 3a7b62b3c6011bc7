"""Round mechanics: submissions, the per-group mixing step, exit
processing, trustee verdicts, and after-the-fact blame.

Three variants share one pipeline shape:

* ``basic``   - shuffle and re-encrypt only; correct against honest
  servers, no tamper detection.
* ``verified``- every shuffle and re-encryption carries a proof that
  co-members (and the receiving neighbors, for the hand-off step) check
  on the spot; the first bad step aborts the round naming the server.
* ``trap``    - messages travel as fixed-size frames, half of them trap
  frames users pre-committed to their entry group.  Nothing is checked
  in flight; at exit the traps are audited and trustees release the key
  for the real payloads only if every report agrees.

A group's step: every member in slot order shuffles the whole vertex
load, then the load is split into one batch per next-layer vertex and
every member re-encrypts each batch toward the key of the group that
owns its destination.  The last member clears the carried slot so each
hop looks like a fresh encryption under the next key.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .crypto import (
    AuthFailure, Ciphertext, EmbedFailure, InnerCiphertext,
    cca2_dec_with_shared, cca2_enc, ciphertext_to_bytes, clear_y, commit,
    embed, enc, inner_from_bytes, inner_to_bytes, labeled_hash,
    random_scalar, reenc, rerandomize, unembed,
)
from .proofs import (
    LengthMismatch, prove_enc, prove_reenc, prove_shuffle, verify_enc,
    verify_reenc, verify_shuffle,
)
from .topology import SquareNetwork, divide_batches, vertex_group

CipherVector = Tuple[Ciphertext, ...]

TAG_MESSAGE = 0x4D
TAG_TRAP = 0x54
FRAME_OVERHEAD = 3          # 2-byte length plus 1-byte tag
TRAP_NONCE_LEN = 16
TRAP_PAYLOAD_LEN = 4 + TRAP_NONCE_LEN


class FrameError(Exception):
    """A frame failed to parse."""


class Abort(Exception):
    """The verified variant stopped a round at a provably bad step."""

    def __init__(self, accused: str, reason: str):
        self.accused = accused
        self.reason = reason
        super().__init__(f"{accused}: {reason}")


# ---------------------------------------------------------------------------
# frames


def encode_frame(payload: bytes, tag: int, frame_len: int) -> bytes:
    if len(payload) + FRAME_OVERHEAD > frame_len:
        raise FrameError(
            f"{len(payload)} payload bytes exceed frame of {frame_len}")
    body = len(payload).to_bytes(2, "big") + payload + bytes([tag])
    return body + b"\x00" * (frame_len - len(body))


def decode_frame(raw: bytes) -> Tuple[bytes, int]:
    if len(raw) < FRAME_OVERHEAD:
        raise FrameError("frame shorter than its own header")
    plen = int.from_bytes(raw[:2], "big")
    if 2 + plen + 1 > len(raw):
        raise FrameError("declared payload overruns the frame")
    payload = raw[2:2 + plen]
    tag = raw[2 + plen]
    if tag not in (TAG_MESSAGE, TAG_TRAP):
        raise FrameError(f"unknown tag byte {tag:#x}")
    if any(raw[2 + plen + 1:]):
        raise FrameError("nonzero padding")
    return payload, tag


def make_trap_payload(gid: int, nonce: bytes = None) -> bytes:
    if nonce is None:
        nonce = os.urandom(TRAP_NONCE_LEN)
    if len(nonce) != TRAP_NONCE_LEN:
        raise FrameError(f"trap nonce must be {TRAP_NONCE_LEN} bytes")
    return gid.to_bytes(4, "big") + nonce


def parse_trap_payload(payload: bytes) -> Tuple[int, bytes]:
    if len(payload) != TRAP_PAYLOAD_LEN:
        raise FrameError("trap payload has a fixed size")
    return int.from_bytes(payload[:4], "big"), payload[4:]


# ---------------------------------------------------------------------------
# ciphertext vectors


def vector_to_bytes(group, vec: CipherVector) -> bytes:
    return b"".join(ciphertext_to_bytes(group, ct) for ct in vec)


def batch_digest(group, vecs: Sequence[CipherVector]) -> bytes:
    return labeled_hash(b"gridmix.batch.v1",
                        *[vector_to_bytes(group, v) for v in vecs])


def encrypt_payload(group, pk, payload: bytes, rng, min_elems: int = 0):
    """Embed a byte payload and encrypt it element by element."""
    vec, rs = [], []
    for elem in embed(group, payload, min_elems):
        r = random_scalar(group, rng)
        vec.append(enc(group, pk, elem, r=r))
        rs.append(r)
    return tuple(vec), rs


def exit_payload(group, vec: CipherVector) -> bytes:
    """Read the payload out of a fully peeled vector."""
    return unembed(group, [ct.c for ct in vec])


def reenc_vector(group, sk: int, next_pk, vec: CipherVector, rng):
    outs, rs = [], []
    for ct in vec:
        r = random_scalar(group, rng) if next_pk is not None else None
        outs.append(reenc(group, sk, next_pk, ct, r=r))
        rs.append(r)
    return tuple(outs), rs


def clear_y_vector(vec: CipherVector) -> CipherVector:
    return tuple(clear_y(ct) for ct in vec)


def shuffle_ciphervectors(group, pk, vecs: Sequence[CipherVector], rng):
    """One permutation over whole vectors; every component rerandomized
    with its own exponent (the witness the shuffle proof needs)."""
    perm = list(range(len(vecs)))
    rng.shuffle(perm)
    outs, betas = [], []
    for i in perm:
        row = []
        out = []
        for ct in vecs[i]:
            b = random_scalar(group, rng)
            out.append(rerandomize(group, pk, ct, r=b))
            row.append(b)
        outs.append(tuple(out))
        betas.append(row)
    return outs, perm, betas


# ---------------------------------------------------------------------------
# submissions


def submission_binding(round_id: int, gid: int) -> bytes:
    return round_id.to_bytes(8, "big") + gid.to_bytes(4, "big")


@dataclass(frozen=True)
class Submission:
    vector: CipherVector
    proofs: Optional[Tuple] = None       # one per element, verified variant


def submit_basic(group, entry_pk, payload: bytes, rng) -> Submission:
    vec, _ = encrypt_payload(group, entry_pk, payload, rng)
    return Submission(vec)


def submit_verified(group, entry_pk, payload: bytes, binding: bytes,
                    rng) -> Submission:
    vec, rs = encrypt_payload(group, entry_pk, payload, rng)
    proofs = tuple(prove_enc(group, entry_pk, ct, r, binding, rng)
                   for ct, r in zip(vec, rs))
    return Submission(vec, proofs)


def verify_submission(group, entry_pk, sub: Submission,
                      binding: bytes) -> bool:
    if sub.proofs is None or len(sub.proofs) != len(sub.vector):
        return False
    return all(verify_enc(group, entry_pk, ct, proof, binding)
               for ct, proof in zip(sub.vector, sub.proofs))


def entry_filter(group, entry_pk, subs: Sequence[Submission],
                 binding: bytes) -> Tuple[list, list]:
    """Each entry member runs the same checks, and a submission any
    member rejects is excluded, so the union of reject lists decides."""
    accepted, rejected = [], []
    for i, sub in enumerate(subs):
        if verify_submission(group, entry_pk, sub, binding):
            accepted.append(sub)
        else:
            rejected.append(i)
    return accepted, rejected


@dataclass(frozen=True)
class TrapSubmission:
    inner_vector: CipherVector
    trap_vector: CipherVector
    commitment: bytes
    inner_bytes: bytes       # frame the user sent, kept for tracing
    trap_bytes: bytes


def submit_trap(group, entry_pk, trustee_pk, gid: int, message: bytes,
                frame_len: int, rng) -> TrapSubmission:
    """A user's pair for one trap-variant round: the real message inside
    a hybrid ciphertext only trustees can open, plus a trap frame whose
    commitment the entry group holds."""
    inner = cca2_enc(group, trustee_pk, message, rng)
    inner_frame = encode_frame(inner_to_bytes(group, inner), TAG_MESSAGE,
                               frame_len)
    nonce = rng.getrandbits(8 * TRAP_NONCE_LEN).to_bytes(TRAP_NONCE_LEN,
                                                         "big")
    trap = make_trap_payload(gid, nonce)
    trap_frame = encode_frame(trap, TAG_TRAP, frame_len)
    ivec, _ = encrypt_payload(group, entry_pk, inner_frame, rng)
    tvec, _ = encrypt_payload(group, entry_pk, trap_frame, rng)
    return TrapSubmission(ivec, tvec, commit(trap), inner_frame, trap_frame)


def trap_frame_len(group, message_len: int) -> int:
    """Smallest frame that fits a hybrid ciphertext of message_len
    bytes; traps always fit in anything that fits a message."""
    inner_len = group.element_width + 12 + 16 + message_len
    return FRAME_OVERHEAD + max(inner_len, TRAP_PAYLOAD_LEN)


def make_dummy_vector(group, entry_pk, trustee_pk, frame_len: Optional[int],
                      rng, pad_elems: int = 0):
    """Entry-group padding: shaped like a real message, never published.
    Returns the vector and the payload bytes whose hash goes on the
    trustee manifest."""
    if frame_len is None:
        payload = b""                       # plain-payload variants
        vec, _ = encrypt_payload(group, entry_pk, payload, rng, pad_elems)
        return vec, payload
    # manifest hash covers the inner bytes as the exit parse yields them,
    # not the frame around them
    inner = cca2_enc(group, trustee_pk, b"", rng)
    payload = inner_to_bytes(group, inner)
    frame = encode_frame(payload, TAG_MESSAGE, frame_len)
    vec, _ = encrypt_payload(group, entry_pk, frame, rng)
    return vec, payload


# ---------------------------------------------------------------------------
# the group step


@dataclass(frozen=True)
class MemberKey:
    server: str
    sk: int
    pk: object


@dataclass
class GroupRoundKeys:
    gid: int
    pk: object                # what incoming ciphertexts are under
    members: List[MemberKey]  # pipeline slot order


@dataclass
class StepLog:
    layer: int
    vertex: int
    server: str
    stage: str                               # "shuffle" or "reenc:<batch>"
    out_digest: bytes
    outputs: List[CipherVector]
    secrets: dict


@dataclass
class RoundRecord:
    steps: List[StepLog] = field(default_factory=list)
    chain: bytes = b"\x00" * 32

    def add(self, group, log: StepLog) -> None:
        self.steps.append(log)
        self.chain = labeled_hash(b"gridmix.chain.v1", self.chain,
                                  log.server.encode(), log.stage.encode(),
                                  log.out_digest)


TamperFn = Callable[[int, int, str, str, list], Optional[dict]]


def _member_shuffle(group, keys: GroupRoundKeys, mk: MemberKey, cur, rng,
                    layer, vertex, variant, tamper, record):
    outs, perm, betas = shuffle_ciphervectors(group, keys.pk, cur, rng)
    proof = None
    if variant == "verified":
        proof = prove_shuffle(group, keys.pk, cur, outs, perm, betas, rng)
    action = tamper(layer, vertex, mk.server, "shuffle", outs) if tamper \
        else None
    if action:
        outs = action["outputs"]
    if variant == "verified":
        # every co-member checks the broadcast step before moving on
        if len(outs) != len(cur):
            raise Abort(mk.server, "shuffle changed the batch size")
        try:
            ok = verify_shuffle(group, keys.pk, cur, outs, proof)
        except LengthMismatch:
            ok = False
        if not ok:
            raise Abort(mk.server, "shuffle proof failed")
    if record is not None:
        record.add(group, StepLog(
            layer, vertex, mk.server, "shuffle",
            batch_digest(group, outs), list(outs),
            {"perm": perm, "betas": betas}))
    return outs


def _member_reenc(group, mk: MemberKey, next_pk, batch, rng, layer, vertex,
                  batch_idx, is_last, variant, tamper, record):
    outs, all_rs, proofs = [], [], []
    for vec in batch:
        out, rs = reenc_vector(group, mk.sk, next_pk, vec, rng)
        if variant == "verified":
            proofs.append(tuple(
                prove_reenc(group, mk.sk, next_pk, ct_in, ct_out, r, rng)
                for ct_in, ct_out, r in zip(vec, out, rs)))
        outs.append(out)
        all_rs.append(rs)
    action = tamper(layer, vertex, mk.server, f"reenc:{batch_idx}", outs) \
        if tamper else None
    if action:
        outs = action["outputs"]
    if variant == "verified":
        if len(outs) != len(batch):
            raise Abort(mk.server, "re-encryption changed the batch size")
        # co-members and the receiving neighbors run the same check
        for vec, out, pvec in zip(batch, outs, proofs):
            for ct_in, ct_out, proof in zip(vec, out, pvec):
                if not verify_reenc(group, mk.pk, next_pk, ct_in, ct_out,
                                    proof):
                    raise Abort(mk.server, "re-encryption proof failed")
    if is_last:
        outs = [clear_y_vector(v) for v in outs]
    if record is not None:
        record.add(group, StepLog(
            layer, vertex, mk.server, f"reenc:{batch_idx}",
            batch_digest(group, outs), list(outs), {"rs": all_rs}))
    return outs


def group_step(group, keys: GroupRoundKeys, next_pks: Sequence,
               vectors: Sequence[CipherVector], rng, *, layer: int,
               vertex: int, variant: str = "basic",
               tamper: TamperFn = None,
               record: RoundRecord = None) -> List[List[CipherVector]]:
    """One vertex worth of work: member-by-member shuffles, then
    member-by-member re-encryption of each outgoing batch."""
    cur = list(vectors)
    for mk in keys.members:
        cur = _member_shuffle(group, keys, mk, cur, rng, layer, vertex,
                              variant, tamper, record)
    batches = divide_batches(cur, len(next_pks))
    out_batches = []
    for b, next_pk in enumerate(next_pks):
        batch = batches[b]
        for j, mk in enumerate(keys.members):
            batch = _member_reenc(group, mk, next_pk, batch, rng, layer,
                                  vertex, b, j == len(keys.members) - 1,
                                  variant, tamper, record)
        out_batches.append(batch)
    return out_batches


# ---------------------------------------------------------------------------
# pipeline driver


def run_pipeline(group, net: SquareNetwork,
                 round_keys: Dict[int, GroupRoundKeys],
                 entry_vectors: Sequence[Sequence[CipherVector]], rng, *,
                 variant: str = "basic", tamper: TamperFn = None,
                 record: RoundRecord = None) -> List[List[bytes]]:
    """Drive every vertex in layer order and return the exit payloads,
    indexed by exit vertex.  ``entry_vectors[v]`` must already be
    encrypted under the key of the group owning entry vertex v."""
    w = net.width
    current = [list(vs) for vs in entry_vectors]
    if len(current) != w or any(len(vs) != w for vs in current):
        raise LengthMismatch("entry grid must be width x width")
    for t in range(net.iterations):
        incoming = [[None] * w for _ in range(w)]
        last = t == net.iterations - 1
        for v in range(w):
            keys = round_keys[vertex_group(net, t, v)]
            next_pks = [None if last
                        else round_keys[vertex_group(net, t + 1, b)].pk
                        for b in range(w)]
            batches = group_step(group, keys, next_pks, current[v], rng,
                                 layer=t, vertex=v, variant=variant,
                                 tamper=tamper, record=record)
            for b in range(w):
                incoming[b][v] = batches[b]
        current = [[vec for batch in incoming[v] for vec in batch]
                   for v in range(w)]
    return [[exit_payload(group, vec) for vec in current[v]]
            for v in range(w)]


# ---------------------------------------------------------------------------
# trap-variant exit processing


# x^64 + x^4 + x^3 + x + 1, the usual reduction for 64-bit carry-less work
_CL_POLY = 0x1B


def _clmul(a: int, b: int) -> int:
    r = 0
    while b:
        low = b & -b
        r ^= a * low
        b ^= low
    return r


def _clreduce(x: int) -> int:
    while x >> 64:
        top = x >> 64
        x = (x & (1 << 64) - 1) ^ _clmul(top, _CL_POLY)
    return x


def clhash64(data: bytes, key: int) -> int:
    """Polynomial hash over GF(2^64) with the key as evaluation point."""
    h = 0
    for i in range(0, len(data), 8):
        chunk = int.from_bytes(data[i:i + 8].ljust(8, b"\x00"), "big")
        h = _clreduce(_clmul(h, key)) ^ chunk
    return _clreduce(_clmul(h, key))


@dataclass(frozen=True)
class ExitTally:
    exit_gid: int
    server: str
    parse_ok: bool
    trap_count: int
    inner_count: int


@dataclass(frozen=True)
class TrapCheck:
    gid: int
    server: str
    all_matched: bool
    matched_count: int
    received_count: int


@dataclass(frozen=True)
class Verdict:
    released: bool
    reason: str


def parse_exit_frames(frames: Sequence[bytes]):
    """Split one exit group's frames into traps by target group and
    inner payloads.  Unparseable frames are kept and reported."""
    traps: Dict[int, List[bytes]] = {}
    inners: List[bytes] = []
    bad = 0
    for raw in frames:
        try:
            payload, tag = decode_frame(raw)
            if tag == TAG_TRAP:
                gid, _ = parse_trap_payload(payload)
                traps.setdefault(gid, []).append(payload)
            else:
                inners.append(payload)
        except FrameError:
            bad += 1
    return traps, inners, bad


def route_inner(inner: bytes, hash_key: int, num_groups: int) -> int:
    """Deterministic spread of real messages over groups for the
    publishing step."""
    return clhash64(inner, hash_key) % num_groups


def check_traps_against_commitments(gid: int, servers: Sequence[str],
                                    commitments: Sequence[bytes],
                                    arrived: Sequence[bytes]) -> List[TrapCheck]:
    """Every member of the committed-to group audits the traps routed
    back to it: each arrived trap must open one distinct commitment."""
    remaining = list(commitments)
    matched = 0
    clean = True
    for trap in arrived:
        digest = commit(trap)
        if digest in remaining:
            remaining.remove(digest)
            matched += 1
        else:
            clean = False
    if remaining:
        clean = False
    return [TrapCheck(gid, s, clean, matched, len(arrived)) for s in servers]


def trustee_decide(commit_counts: Dict[int, int], dummy_count: int,
                   exit_tallies: Sequence[ExitTally],
                   trap_checks: Sequence[TrapCheck],
                   expected_exit: Dict[int, Sequence[str]],
                   expected_check: Dict[int, Sequence[str]]) -> Verdict:
    """Release only when every report arrived, members agree, every
    audit bit is true, and the trap count balances the ledger."""
    tally_by = {}
    for t in exit_tallies:
        tally_by.setdefault(t.exit_gid, {})[t.server] = t
    for gid, servers in expected_exit.items():
        got = tally_by.get(gid, {})
        if set(got) != set(servers):
            return Verdict(False, f"missing exit reports for group {gid}")
        views = {(t.parse_ok, t.trap_count, t.inner_count)
                 for t in got.values()}
        if len(views) != 1:
            return Verdict(False, f"exit group {gid} disagrees")
        if not next(iter(views))[0]:
            return Verdict(False, f"exit group {gid} saw bad frames")

    check_by = {}
    for c in trap_checks:
        check_by.setdefault(c.gid, {})[c.server] = c
    for gid, servers in expected_check.items():
        got = check_by.get(gid, {})
        if set(got) != set(servers):
            return Verdict(False, f"missing trap reports for group {gid}")
        views = {(c.all_matched, c.matched_count, c.received_count)
                 for c in got.values()}
        if len(views) != 1:
            return Verdict(False, f"trap group {gid} disagrees")
        ok, matched, received = next(iter(views))
        if not ok:
            return Verdict(False, f"group {gid} trap commitments unmatched")
        if matched != commit_counts.get(gid, 0):
            return Verdict(False, f"group {gid} trap count off")

    one_tally_each = {t.exit_gid: t for t in exit_tallies}
    total_traps = sum(t.trap_count for t in one_tally_each.values())
    total_inners = sum(t.inner_count for t in one_tally_each.values())
    if total_traps != sum(commit_counts.values()):
        return Verdict(False, "trap total does not cover the commitments")
    if total_traps != total_inners - dummy_count:
        return Verdict(False, "trap and message totals do not balance")
    return Verdict(True, "all trap audits passed")


def publish_trap_round(group, trustee_shared: Callable, inners:
                       Sequence[bytes], manifest: Sequence[bytes]) -> List[bytes]:
    """Open the real messages once trustees agreed to release.

    ``trustee_shared(R)`` yields the shared point for a KEM value R (the
    trustee quorum's combined partial exponentiations).  Padding listed
    on the manifest and anything failing authentication is dropped."""
    from collections import Counter
    manifest_left = Counter(manifest)
    out = []
    for raw in inners:
        digest = commit(raw)
        if manifest_left[digest] > 0:
            manifest_left[digest] -= 1
            continue
        try:
            ict = inner_from_bytes(group, raw)
            out.append(cca2_dec_with_shared(group, ict,
                                            trustee_shared(ict.R)))
        except AuthFailure:
            continue
    return out


def publish_basic_round(exit_payloads: Sequence[bytes],
                        manifest: Sequence[bytes]) -> List[bytes]:
    """Plain variants publish exit payloads directly, minus padding."""
    from collections import Counter
    manifest_left = Counter(manifest)
    out = []
    for payload in exit_payloads:
        digest = commit(payload)
        if manifest_left[digest] > 0:
            manifest_left[digest] -= 1
            continue
        out.append(payload)
    return out


# ---------------------------------------------------------------------------
# blame: replay a recorded round and name every divergent step


def _replay_shuffle(group, pk, cur, secrets):
    perm, betas = secrets["perm"], secrets["betas"]
    if sorted(perm) != list(range(len(cur))) or len(betas) != len(cur):
        return None
    try:
        return [tuple(rerandomize(group, pk, ct, r=b)
                      for ct, b in zip(cur[perm[i]], betas[i]))
                for i in range(len(cur))]
    except Exception:
        return None


def blame(group, net: SquareNetwork, round_keys: Dict[int, GroupRoundKeys],
          entry_vectors, entry_origins, record: RoundRecord,
          commitments_by_gid: Dict[int, Dict[bytes, str]] = None) -> set:
    """Re-execute a destroyed round from the revealed per-step secrets
    and accuse whoever diverges from the wire record.

    Servers reveal their permutations and randomness (nothing was
    published, so the round's mixing secrets are spent anyway).  Every
    step is recomputed from its recorded input; a mismatch accuses that
    server and downstream work continues from the wire data so honest
    servers stay clear.  If the replay is clean end to end but a trap
    frame matches no commitment, the user who submitted it (tracked by
    ``entry_origins``, entry position -> user id) is accused, unless the
    frame passed through a tampered step.

    ``commitments_by_gid`` maps gid -> {commitment digest -> user id}.
    """
    w = net.width
    accused = set()
    steps = iter(record.steps)
    current = [list(vs) for vs in entry_vectors]
    origins = [list(os_) for os_ in entry_origins]
    tainted = [[False] * len(vs) for vs in entry_vectors]

    for t in range(net.iterations):
        last = t == net.iterations - 1
        inc_v = [[None] * w for _ in range(w)]
        inc_o = [[None] * w for _ in range(w)]
        inc_t = [[None] * w for _ in range(w)]
        for v in range(w):
            keys = round_keys[vertex_group(net, t, v)]
            cur, org, tnt = current[v], origins[v], tainted[v]
            for mk in keys.members:
                log = next(steps)
                assert log.stage == "shuffle" and log.server == mk.server
                expect = _replay_shuffle(group, keys.pk, cur, log.secrets)
                wire = log.outputs
                if expect is None or len(wire) != len(expect):
                    accused.add(mk.server)
                    org, tnt = _retag(cur, wire, org, tnt, group)
                else:
                    # match index by index so only touched messages taint
                    perm = log.secrets["perm"]
                    org2, tnt2 = [], []
                    for i, (got, want) in enumerate(zip(wire, expect)):
                        clean = got == want
                        if not clean:
                            accused.add(mk.server)
                        org2.append(org[perm[i]])
                        tnt2.append(tnt[perm[i]] or not clean)
                    org, tnt = org2, tnt2
                cur = wire
            b_v = divide_batches(cur, w)
            b_o = divide_batches(org, w)
            b_t = divide_batches(tnt, w)
            for b in range(w):
                next_pk = None if last \
                    else round_keys[vertex_group(net, t + 1, b)].pk
                batch, borg, btnt = b_v[b], b_o[b], b_t[b]
                for j, mk in enumerate(keys.members):
                    log = next(steps)
                    assert log.stage == f"reenc:{b}" and \
                        log.server == mk.server
                    expect = _recompute_reenc(group, mk.sk, next_pk, batch,
                                              log.secrets,
                                              j == len(keys.members) - 1)
                    wire = log.outputs
                    if expect is None or len(wire) != len(expect):
                        accused.add(mk.server)
                        borg, btnt = _retag(batch, wire, borg, btnt, group)
                    else:
                        for i, (got, want) in enumerate(zip(wire, expect)):
                            if got != want:
                                accused.add(mk.server)
                                btnt[i] = True
                    batch = wire
                inc_v[b][v], inc_o[b][v], inc_t[b][v] = batch, borg, btnt
        current = [[x for part in inc_v[v] for x in part] for v in range(w)]
        origins = [[x for part in inc_o[v] for x in part] for v in range(w)]
        tainted = [[x for part in inc_t[v] for x in part] for v in range(w)]

    if commitments_by_gid:
        known = {}
        for gid, table in commitments_by_gid.items():
            for digest, user in table.items():
                known[digest] = user
        for v in range(w):
            for vec, origin, bad in zip(current[v], origins[v], tainted[v]):
                if bad:
                    continue
                try:
                    payload, tag = decode_frame(exit_payload(group, vec))
                except (FrameError, EmbedFailure):
                    continue
                if tag == TAG_TRAP and commit(payload) not in known:
                    if origin is not None:
                        accused.add(origin)
    return accused


def _recompute_reenc(group, sk, next_pk, batch, secrets, is_last):
    rs = secrets.get("rs")
    if rs is None or len(rs) != len(batch):
        return None
    try:
        outs = []
        for vec, rvec in zip(batch, rs):
            out = tuple(reenc(group, sk, next_pk, ct, r=r)
                        for ct, r in zip(vec, rvec))
            outs.append(clear_y_vector(out) if is_last else out)
        return outs
    except Exception:
        return None


def _retag(before, after, origins, taint, group):
    """After an unexplained step, carry origins across by ciphertext
    identity where possible and taint everything that moved opaquely."""
    index = {vector_to_bytes(group, v): i for i, v in enumerate(before)}
    new_origins, new_taint = [], []
    for vec in after:
        i = index.get(vector_to_bytes(group, vec))
        if i is None:
            new_origins.append(None)
            new_taint.append(True)
        else:
            new_origins.append(origins[i])
            new_taint.append(True)
    return new_origins, new_taint
