"""What rides on top of rounds: a public microblog feed and dialing.

Microblogging is the simple case: whatever a released round published
goes onto a bulletin board, already anonymized by the mixing.

Dialing lets one user hand another a session key without anyone seeing
who called whom.  A dial is addressed by the recipient's public
identity, hashed to a 64-bit id; the network drops it into mailbox
``id mod m``, and the recipient scans one mailbox instead of the whole
round.  The payload carries an ephemeral KEM share and a sealed box
holding the caller's public key, so both ends derive the same session
key and nobody else learns either identity.  (The sealed box plus the
KEM share cost more than the 80 bytes a 32-byte-curve sketch suggests;
the structure is the same, the element widths are not.)

Dummy dials pad each mailbox with noise so mailbox sizes leak little.
Counts come from a rounded, clamped Laplace draw per mailbox; dummies
are byte-identical in shape to real dials and are listed on a manifest
so audits can reconcile totals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .crypto import (
    KeyPair, MessageTooLong, commit, labeled_hash, random_scalar,
)

MICROBLOG_MAX_BYTES = 160
DIAL_ID_LEN = 8
DIAL_NONCE_LEN = 12


class NotReleased(Exception):
    """The round did not end in a release; nothing to publish."""


class DecryptSkip(Exception):
    """A mailbox entry addressed to someone else; skip it quietly."""


# ---------------------------------------------------------------------------
# microblog


def microblog_entry(text: Union[str, bytes]) -> bytes:
    data = text.encode() if isinstance(text, str) else bytes(text)
    if len(data) > MICROBLOG_MAX_BYTES:
        raise MessageTooLong(
            f"{len(data)} bytes > microblog limit {MICROBLOG_MAX_BYTES}")
    return data


@dataclass
class BulletinBoard:
    """Per-round public feed.  Reads are safe from anywhere; only the
    publisher of a round's verdict writes."""

    rounds: Dict[int, Tuple[bytes, ...]] = field(default_factory=dict)

    def publish(self, round_id: int, result) -> Tuple[bytes, ...]:
        """result is any object with .status and .published (a round
        outcome).  Only a released round reaches the board."""
        if result.status != "released":
            raise NotReleased(f"round {round_id}: {result.status}")
        entries = tuple(result.published)
        self.rounds[round_id] = entries
        return entries

    def read(self, round_id: int) -> Tuple[bytes, ...]:
        return self.rounds.get(round_id, ())


# ---------------------------------------------------------------------------
# dialing


@dataclass(frozen=True)
class Mailbox:
    index: int
    entries: Tuple[bytes, ...]


@dataclass(frozen=True)
class DialContact:
    initiator_pk: object
    session_key: bytes


def dial_id(group, pk) -> int:
    """64-bit identity derived from a public key."""
    digest = labeled_hash(b"gridmix.dial.id.v1",
                          group.element_to_bytes(pk))
    return int.from_bytes(digest[:DIAL_ID_LEN], "big")


def mailbox_index(identity: int, m: int) -> int:
    return identity % m


def dial_payload_len(group) -> int:
    # id + KEM share + nonce + sealed pk + tag
    return (DIAL_ID_LEN + group.element_width + DIAL_NONCE_LEN
            + group.element_width + 16)


def _dial_keys(group, R, shared) -> Tuple[bytes, bytes]:
    rb = group.element_to_bytes(R)
    sb = group.element_to_bytes(shared)
    box_key = labeled_hash(b"gridmix.dial.box.v1", rb, sb)
    session = labeled_hash(b"gridmix.dial.key.v1", rb, sb)
    return box_key, session


def dial(group, initiator: KeyPair, recipient_pk, m: int, rng):
    """Build one dialing message.

    Returns (payload, session_key, mailbox_index); the recipient who
    opens the payload derives the same session key.
    """
    identity = dial_id(group, recipient_pk)
    r = random_scalar(group, rng)
    R = group.exp(group.generator, r)
    shared = group.exp(recipient_pk, r)
    box_key, session = _dial_keys(group, R, shared)
    nonce = rng.getrandbits(8 * DIAL_NONCE_LEN).to_bytes(DIAL_NONCE_LEN,
                                                         "big")
    box = ChaCha20Poly1305(box_key).encrypt(
        nonce, group.element_to_bytes(initiator.pk), None)
    payload = (identity.to_bytes(DIAL_ID_LEN, "big")
               + group.element_to_bytes(R) + nonce + box)
    return payload, session, mailbox_index(identity, m)


def route_dials(payloads: Sequence[bytes], m: int) -> List[Mailbox]:
    """Sort a round's dial payloads into the m mailboxes by id mod m."""
    slots: List[List[bytes]] = [[] for _ in range(m)]
    for raw in payloads:
        identity = int.from_bytes(raw[:DIAL_ID_LEN], "big")
        slots[mailbox_index(identity, m)].append(raw)
    return [Mailbox(i, tuple(entries)) for i, entries in enumerate(slots)]


def open_mailbox(group, me: KeyPair, box: Mailbox) -> List[DialContact]:
    """Everything in the mailbox addressed to me, decrypted.  Entries
    for other identities sharing the mailbox, dummies, and anything
    tampered with are skipped."""
    my_id = dial_id(group, me.pk)
    out = []
    for raw in box.entries:
        try:
            out.append(_open_dial(group, me, my_id, raw))
        except DecryptSkip:
            continue
    return out


def _open_dial(group, me: KeyPair, my_id: int, raw: bytes) -> DialContact:
    w = group.element_width
    if len(raw) != DIAL_ID_LEN + w + DIAL_NONCE_LEN + w + 16:
        raise DecryptSkip("wrong length")
    if int.from_bytes(raw[:DIAL_ID_LEN], "big") != my_id:
        raise DecryptSkip("someone else's id")
    try:
        R = group.element_from_bytes(raw[DIAL_ID_LEN:DIAL_ID_LEN + w])
    except ValueError as exc:
        raise DecryptSkip("bad KEM share") from exc
    nonce = raw[DIAL_ID_LEN + w:DIAL_ID_LEN + w + DIAL_NONCE_LEN]
    sealed = raw[DIAL_ID_LEN + w + DIAL_NONCE_LEN:]
    box_key, session = _dial_keys(group, R, group.exp(R, me.sk))
    try:
        pk_bytes = ChaCha20Poly1305(box_key).decrypt(nonce, sealed, None)
        initiator_pk = group.element_from_bytes(pk_bytes)
    except Exception as exc:
        raise DecryptSkip("not for me or damaged") from exc
    return DialContact(initiator_pk, session)


# ---------------------------------------------------------------------------
# dummy noise


def _laplace(mu: float, b: float, rng) -> float:
    u = rng.random() - 0.5
    return mu - b * math.copysign(1.0, u) * math.log(1 - 2 * abs(u))


def dummy_counts(m: int, mu: float, b: float, rng) -> List[int]:
    """How many dummies one server adds per mailbox.  mu is the server's
    expected total, spread evenly; each mailbox gets an independent
    rounded Laplace draw, clamped at zero."""
    if mu <= 0:
        return [0] * m
    per_box = mu / m
    return [max(0, round(_laplace(per_box, b, rng))) for _ in range(m)]


def gen_dial_dummies(group, m: int, mu: float, b: float,
                     rng) -> Tuple[List[bytes], List[bytes]]:
    """One server's dummy dials plus their manifest hashes.  Shape is
    byte-identical to a real dial; the id is random within the target
    mailbox's residue class."""
    payloads, manifest = [], []
    w = group.element_width
    for box_i, n in enumerate(dummy_counts(m, mu, b, rng)):
        for _ in range(n):
            identity = rng.getrandbits(64)
            identity += (box_i - identity) % m
            if identity >= 1 << 64:
                identity -= m
            R = group.exp(group.generator, random_scalar(group, rng))
            body = rng.getrandbits(8 * (DIAL_NONCE_LEN + w + 16)).to_bytes(
                DIAL_NONCE_LEN + w + 16, "big")
            payload = (identity.to_bytes(DIAL_ID_LEN, "big")
                       + group.element_to_bytes(R) + body)
            payloads.append(payload)
            manifest.append(commit(payload))
    return payloads, manifest
