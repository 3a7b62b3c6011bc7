"""Core cryptography: rerandomizable ElGamal with an out-of-order
re-encryption slot, a CCA2 hybrid scheme for exit-hidden payloads,
message-to-element embedding, and hash commitments.

The ElGamal variant carries a third slot Y.  A fresh encryption has
Y = absent (``None``).  The first group-to-group re-encryption moves R
into Y and from then on every member peels its own key layer out of c
against Y while adding a fresh layer under the next group's key, which
is what lets members re-encrypt in any schedule.  The last member of a
group must clear Y before the ciphertext crosses a group boundary.

All randomness is drawn from caller-supplied ``random.Random`` streams;
nothing in this module touches global randomness.
"""

from __future__ import annotations

import hashlib
import hmac
import random
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305


class NonNullY(Exception):
    """An operation that requires an absent Y slot got a populated one."""


class EmptyGroup(Exception):
    """A composite key was requested for zero members."""


class AuthFailure(Exception):
    """CCA2 decryption failed: wrong key or modified ciphertext."""


class EmbedFailure(Exception):
    """A byte chunk could not be mapped into the group."""


class MessageTooLong(Exception):
    """Plaintext exceeds the configured size limit."""


# ---------------------------------------------------------------------------
# hashing and seeded randomness


def _pack(parts: Sequence[bytes]) -> bytes:
    out = bytearray()
    for part in parts:
        out += len(part).to_bytes(4, "big")
        out += part
    return bytes(out)


def labeled_hash(label: bytes, *parts: bytes) -> bytes:
    """Domain-separated SHA3-256 over length-framed byte strings."""
    return hashlib.sha3_256(_pack([label, *parts])).digest()


def hash_to_scalar(group, label: bytes, *parts: bytes) -> int:
    """Hash to Z_q with 16 bytes of headroom to keep the bias negligible."""
    width = (group.order.bit_length() + 7) // 8 + 16
    raw = hashlib.shake_256(_pack([label, *parts])).digest(width)
    return int.from_bytes(raw, "big") % group.order


def seeded_rng(*labels) -> random.Random:
    """Deterministic random stream derived from the given labels.

    Every protocol actor owns one, derived from (master seed, round id,
    actor id), so runs replay identically and actors stay independent.
    """
    h = hashlib.blake2b(digest_size=16)
    for item in labels:
        if isinstance(item, int):
            item = str(item)
        if isinstance(item, str):
            item = item.encode()
        h.update(len(item).to_bytes(4, "big") + item)
    return random.Random(int.from_bytes(h.digest(), "big"))


def random_scalar(group, rng: random.Random) -> int:
    return rng.randrange(1, group.order)


# ---------------------------------------------------------------------------
# rerandomizable ElGamal with the out-of-order slot


@dataclass(frozen=True)
class KeyPair:
    sk: int
    pk: object


@dataclass(frozen=True)
class Ciphertext:
    R: object
    c: object
    Y: object = None


def keygen(group, rng: random.Random) -> KeyPair:
    sk = random_scalar(group, rng)
    return KeyPair(sk, group.exp(group.generator, sk))


def enc(group, pk, m, rng: random.Random = None, r: int = None) -> Ciphertext:
    """Encrypt a group element; fresh ciphertexts have an absent Y."""
    if r is None:
        r = random_scalar(group, rng)
    R = group.exp(group.generator, r)
    return Ciphertext(R, group.mul(m, group.exp(pk, r)), None)


def dec(group, sk: int, ct: Ciphertext):
    if ct.Y is not None:
        raise NonNullY("decryption is defined only for an absent Y slot")
    return group.mul(ct.c, group.inv(group.exp(ct.R, sk)))


def rerandomize(group, pk, ct: Ciphertext, rng: random.Random = None,
                r: int = None) -> Ciphertext:
    if ct.Y is not None:
        raise NonNullY("rerandomization is defined only for an absent Y slot")
    if r is None:
        r = random_scalar(group, rng)
    R = group.mul(group.exp(group.generator, r), ct.R)
    return Ciphertext(R, group.mul(ct.c, group.exp(pk, r)), None)


def shuffle(group, pk, cts: Sequence[Ciphertext],
            rng: random.Random) -> Tuple[List[Ciphertext], List[int]]:
    """Permute and rerandomize; output[i] = rerandomize(cts[perm[i]])."""
    perm = list(range(len(cts)))
    rng.shuffle(perm)
    return [rerandomize(group, pk, cts[p], rng) for p in perm], perm


def shuffle_with_witness(group, pk, cts: Sequence[Ciphertext], rng):
    """Like shuffle, but keep the rerandomization exponents so the step
    can be proven correct afterwards."""
    perm = list(range(len(cts)))
    rng.shuffle(perm)
    outs, betas = [], []
    for p in perm:
        r = random_scalar(group, rng)
        outs.append(rerandomize(group, pk, cts[p], r=r))
        betas.append(r)
    return outs, perm, betas


def reenc(group, sk: int, next_pk, ct: Ciphertext, rng: random.Random = None,
          r: int = None) -> Ciphertext:
    """Peel this member's layer and add one under next_pk.

    On the first re-encryption (absent Y) the slots swap: Y takes over R
    and R restarts from the identity.  ``next_pk=None`` adds no new
    layer, so a full pass with next_pk=None is a group decryption.
    """
    R, c, Y = ct.R, ct.c, ct.Y
    if Y is None:
        Y = R
        R = group.identity
    c = group.mul(c, group.inv(group.exp(Y, sk)))
    if next_pk is not None:
        if r is None:
            r = random_scalar(group, rng)
        R = group.mul(group.exp(group.generator, r), R)
        c = group.mul(c, group.exp(next_pk, r))
    return Ciphertext(R, c, Y)


def clear_y(ct: Ciphertext) -> Ciphertext:
    """Boundary reset: the last group member clears Y before forwarding."""
    return Ciphertext(ct.R, ct.c, None)


def compose_group_key(group, pks: Sequence):
    """Composite encryption key of a group: the product of member keys."""
    if not pks:
        raise EmptyGroup("cannot compose a key for zero members")
    acc = group.identity
    for pk in pks:
        acc = group.mul(acc, pk)
    return acc


# ---------------------------------------------------------------------------
# CCA2 hybrid encryption (KEM plus an authenticated cipher)


@dataclass(frozen=True)
class InnerCiphertext:
    R: object
    c: bytes


def _kem_key(group, R, shared) -> bytes:
    return labeled_hash(b"gridmix.kem.v1",
                        group.element_to_bytes(R),
                        group.element_to_bytes(shared))


def cca2_enc(group, pk, m: bytes, rng: random.Random,
             max_len: int = None) -> InnerCiphertext:
    if max_len is not None and len(m) > max_len:
        raise MessageTooLong(f"{len(m)} bytes > limit {max_len}")
    r = random_scalar(group, rng)
    R = group.exp(group.generator, r)
    key = _kem_key(group, R, group.exp(pk, r))
    nonce = rng.getrandbits(96).to_bytes(12, "big")
    return InnerCiphertext(R, nonce + ChaCha20Poly1305(key).encrypt(nonce, m, None))


def cca2_dec(group, sk: int, ict: InnerCiphertext) -> bytes:
    """Decrypt; any modification or wrong key raises AuthFailure."""
    return cca2_dec_with_shared(group, ict, group.exp(ict.R, sk))


def cca2_dec_with_shared(group, ict: InnerCiphertext, shared) -> bytes:
    """Decrypt given the agreed point R^sk directly.  This is the path a
    key held in shares uses: a quorum combines partial exponentiations
    of R into the shared point without any member knowing sk."""
    try:
        key = _kem_key(group, ict.R, shared)
        return ChaCha20Poly1305(key).decrypt(ict.c[:12], ict.c[12:], None)
    except AuthFailure:
        raise
    except Exception as exc:
        raise AuthFailure("inner ciphertext failed authentication") from exc


# ---------------------------------------------------------------------------
# byte embedding


def embed(group, data: bytes, min_elems: int = 0) -> list:
    """Map bytes to elements in header-prefixed chunks.

    Each chunk holds up to ``group.embed_payload_bytes`` payload bytes
    behind a one-byte length header, so the exact byte string is
    recoverable and equal-length inputs always produce equal element
    counts.  ``min_elems`` pads the element list with zero-length chunks
    so short payloads can match the shape of longer ones.
    """
    cap = group.embed_payload_bytes
    if cap <= 0:
        raise EmbedFailure("backend group is too small to embed data")
    chunks = [data[off:off + cap] for off in range(0, len(data), cap)]
    while len(chunks) < min_elems:
        chunks.append(b"")
    elems = []
    for chunk in chunks:
        block = bytes([len(chunk)]) + chunk.ljust(cap, b"\x00")
        elem = group.block_to_element(block)
        if elem is None:
            raise EmbedFailure("chunk exhausted all embedding counters")
        elems.append(elem)
    return elems


def unembed(group, elems: Sequence) -> bytes:
    out = bytearray()
    for elem in elems:
        block = group.element_to_block(elem)
        used = block[0]
        if used > group.embed_payload_bytes:
            raise EmbedFailure("corrupt chunk header")
        out += block[1:1 + used]
    return bytes(out)


# ---------------------------------------------------------------------------
# commitments

# The committed values carry a long random nonce, which is what makes the
# plain hash commitment hiding here.


def commit(data: bytes) -> bytes:
    return labeled_hash(b"gridmix.commit.v1", data)


def verify_commit(digest: bytes, data: bytes) -> bool:
    return hmac.compare_digest(digest, commit(data))


# ---------------------------------------------------------------------------
# canonical serialization


def scalar_width(group) -> int:
    return (group.order.bit_length() + 7) // 8


def scalar_to_bytes(group, s: int) -> bytes:
    return (s % group.order).to_bytes(scalar_width(group), "big")


def ciphertext_to_bytes(group, ct: Ciphertext) -> bytes:
    out = group.element_to_bytes(ct.R) + group.element_to_bytes(ct.c)
    if ct.Y is None:
        return out + b"\x00"
    return out + b"\x01" + group.element_to_bytes(ct.Y)


def ciphertext_from_bytes(group, raw: bytes) -> Ciphertext:
    w = group.element_width
    R = group.element_from_bytes(raw[:w])
    c = group.element_from_bytes(raw[w:2 * w])
    flag = raw[2 * w]
    if flag == 0:
        if len(raw) != 2 * w + 1:
            raise ValueError("trailing bytes after ciphertext")
        return Ciphertext(R, c, None)
    if flag != 1 or len(raw) != 3 * w + 1:
        raise ValueError("bad Y flag")
    return Ciphertext(R, c, group.element_from_bytes(raw[2 * w + 1:]))


def ciphertext_to_hex(group, ct: Ciphertext) -> str:
    return ciphertext_to_bytes(group, ct).hex()


def ciphertext_from_hex(group, text: str) -> Ciphertext:
    return ciphertext_from_bytes(group, bytes.fromhex(text))


def inner_to_bytes(group, ict: InnerCiphertext) -> bytes:
    return group.element_to_bytes(ict.R) + ict.c


def inner_from_bytes(group, raw: bytes) -> InnerCiphertext:
    w = group.element_width
    if len(raw) < w + 12 + 16:
        raise AuthFailure("inner ciphertext too short")
    try:
        R = group.element_from_bytes(raw[:w])
    except ValueError as exc:
        raise AuthFailure("inner ciphertext KEM share is malformed") from exc
    return InnerCiphertext(R, raw[w:])
