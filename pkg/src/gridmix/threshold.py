"""Threshold keys for groups that must tolerate crashed members.

With the any-honest-member guarantee alone (h=1) a group key is just
the product of member keys and every member must participate in the
peel.  When groups are sized for h >= 2 honest members, the group key
comes from a distributed key generation instead, with reconstruction
threshold t = k - (h - 1): any t members can stand in for the whole
group, the at most k - h malicious members stay below t, and up to
h - 1 crashed members never stall a round.

The generation is a sum of verifiable secret sharings: every member
deals a random degree t-1 polynomial with commitments to each
coefficient, so receivers can check their dealt points and complain
about a cheating dealer before any key is used.  Shares live at x =
member index + 1.  A member applies its share through the same
re-encryption step as a plain key by folding the quorum's Lagrange
coefficient into the exponent.

Each share is additionally escrowed with a buddy group as a fresh
sharing under the buddy group's own threshold, so a replacement member
can recover a dead member's share from living buddies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .crypto import hash_to_scalar, random_scalar


class ComplaintAbort(Exception):
    """Key generation stopped; ``dealer`` is the accused member."""

    def __init__(self, dealer, accusers):
        self.dealer = dealer
        self.accusers = list(accusers)
        super().__init__(f"dealer {dealer} accused by {self.accusers}")


class InsufficientShares(Exception):
    """Fewer valid partial decryptions than the threshold."""


class InvalidPartial(Exception):
    """A partial decryption failed its correctness proof."""


class UnrecoverableFailure(Exception):
    """Too few living buddies hold escrow pieces of the lost share."""


# ---------------------------------------------------------------------------
# dealing


@dataclass(frozen=True)
class Deal:
    dealer: int                      # x-coordinate of the dealer
    commitments: Tuple               # g^coefficient, degree t-1 polynomial
    shares: Dict[int, int]           # x-coordinate -> dealt point


@dataclass(frozen=True)
class Complaint:
    accuser: int
    dealer: int


@dataclass(frozen=True)
class Ack:
    member: int


@dataclass
class ThresholdKey:
    group_pk: object
    threshold: int
    shares: Dict[int, int]           # x-coordinate -> combined share
    vkeys: Dict[int, object]         # x-coordinate -> g^share


def _poly_eval(coeffs: Sequence[int], x: int, q: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % q
    return acc


def deal_shares(group, dealer_x: int, xs: Sequence[int], threshold: int,
                rng) -> Deal:
    coeffs = [random_scalar(group, rng) for _ in range(threshold)]
    commitments = tuple(group.exp(group.generator, c) for c in coeffs)
    return Deal(dealer_x, commitments,
                {x: _poly_eval(coeffs, x, group.order) for x in xs})


def verify_dealt_share(group, deal: Deal, x: int, share: int) -> bool:
    rhs = group.identity
    xpow = 1
    for commit in deal.commitments:
        rhs = group.mul(rhs, group.exp(commit, xpow))
        xpow = (xpow * x) % group.order
    return group.exp(group.generator, share) == rhs


def run_dkg(group, k: int, threshold: int, rng, tamper=None):
    """Drive a full key generation among k members.

    Returns (ThresholdKey, transcript) where the transcript lists every
    deal, complaint, and ack in order.  ``tamper(dealer_x, x, share)``
    lets tests corrupt dealt points; any member receiving a bad point
    complains and the run ends in ComplaintAbort naming the dealer.
    """
    if not 1 <= threshold <= k:
        raise ValueError(f"threshold {threshold} outside 1..{k}")
    xs = list(range(1, k + 1))
    transcript: List[object] = []
    deals = []
    for x in xs:
        deal = deal_shares(group, x, xs, threshold, rng)
        if tamper is not None:
            patched = {r: tamper(x, r, s) for r, s in deal.shares.items()}
            deal = Deal(x, deal.commitments, patched)
        deals.append(deal)
        transcript.append(deal)

    complaints = []
    for deal in deals:
        for x in xs:
            if not verify_dealt_share(group, deal, x, deal.shares[x]):
                complaints.append(Complaint(x, deal.dealer))
    if complaints:
        transcript.extend(complaints)
        worst = complaints[0].dealer
        raise ComplaintAbort(worst,
                             [c.accuser for c in complaints
                              if c.dealer == worst])
    transcript.extend(Ack(x) for x in xs)

    q = group.order
    shares = {x: sum(d.shares[x] for d in deals) % q for x in xs}
    group_pk = group.identity
    for deal in deals:
        group_pk = group.mul(group_pk, deal.commitments[0])
    vkeys = {x: group.exp(group.generator, shares[x]) for x in xs}
    return ThresholdKey(group_pk, threshold, shares, vkeys), transcript


# ---------------------------------------------------------------------------
# using shares


def lagrange_at_zero(group, quorum: Sequence[int], j: int) -> int:
    """Coefficient carrying x=j's share to the secret at x=0."""
    q = group.order
    num, den = 1, 1
    for m in quorum:
        if m == j:
            continue
        num = (num * m) % q
        den = (den * (m - j)) % q
    return (num * pow(den, q - 2, q)) % q


def effective_exponents(group, tkey: ThresholdKey,
                        quorum: Sequence[int]) -> Dict[int, int]:
    """Per-member peel exponents for a quorum: share times Lagrange
    coefficient.  Applying all of them peels exactly the group key."""
    if len(set(quorum)) < tkey.threshold:
        raise InsufficientShares(
            f"{len(set(quorum))} members of {tkey.threshold} needed")
    return {j: (tkey.shares[j] * lagrange_at_zero(group, quorum, j))
               % group.order for j in quorum}


def effective_vkey(group, tkey: ThresholdKey, quorum: Sequence[int],
                   j: int) -> object:
    """Public counterpart of a member's effective exponent."""
    return group.exp(tkey.vkeys[j], lagrange_at_zero(group, quorum, j))


@dataclass(frozen=True)
class PartialDecryption:
    x: int
    value: object                    # R^share
    t1: object
    t2: object
    z: int


def partial_decrypt(group, x: int, share: int, ct) -> PartialDecryption:
    """One member's contribution to decrypting ct = (R, c), with a proof
    that the same share was used as registered in the vkey."""
    from .crypto import seeded_rng
    value = group.exp(ct.R, share)
    # nonce must stay unpredictable: derive it from the secret share
    rng = seeded_rng("partial-dleq", share, x, group.element_to_bytes(ct.R))
    w = random_scalar(group, rng)
    t1 = group.exp(group.generator, w)
    t2 = group.exp(ct.R, w)
    e = _dleq_challenge(group, ct.R, group.exp(group.generator, share),
                        value, t1, t2)
    return PartialDecryption(x, value, t1, t2, (w + e * share) % group.order)


def _dleq_challenge(group, R, vkey, value, t1, t2) -> int:
    eb = group.element_to_bytes
    return hash_to_scalar(group, b"gridmix.partial.v1", eb(R), eb(vkey),
                          eb(value), eb(t1), eb(t2))


def verify_partial(group, vkey, ct, part: PartialDecryption) -> bool:
    e = _dleq_challenge(group, ct.R, vkey, part.value, part.t1, part.t2)
    if group.exp(group.generator, part.z) != \
            group.mul(part.t1, group.exp(vkey, e)):
        return False
    return group.exp(ct.R, part.z) == \
        group.mul(part.t2, group.exp(part.value, e))


def combine_partials(group, tkey: ThresholdKey, ct,
                     partials: Sequence[PartialDecryption]):
    """Recover the plaintext of ct from at least threshold verified
    partial decryptions."""
    seen: Dict[int, PartialDecryption] = {}
    for part in partials:
        seen[part.x] = part
    if len(seen) < tkey.threshold:
        raise InsufficientShares(
            f"{len(seen)} partials of {tkey.threshold} needed")
    for part in seen.values():
        if not verify_partial(group, tkey.vkeys[part.x], ct, part):
            raise InvalidPartial(f"member at x={part.x}")
    quorum = sorted(seen)
    acc = group.identity
    for j in quorum:
        lam = lagrange_at_zero(group, quorum, j)
        acc = group.mul(acc, group.exp(seen[j].value, lam))
    return group.mul(ct.c, group.inv(acc))


@dataclass(frozen=True)
class _KemStatement:
    R: object


def partial_kem(group, x: int, share: int, R) -> PartialDecryption:
    """Partial key agreement for a hybrid ciphertext: contribute R^share
    toward the shared point R^sk."""
    return partial_decrypt(group, x, share, _KemStatement(R))


def combine_kem_partials(group, tkey: ThresholdKey, R,
                         partials: Sequence[PartialDecryption]):
    """Assemble the shared point R^sk from verified partials."""
    seen: Dict[int, PartialDecryption] = {p.x: p for p in partials}
    if len(seen) < tkey.threshold:
        raise InsufficientShares(
            f"{len(seen)} partials of {tkey.threshold} needed")
    stmt = _KemStatement(R)
    for part in seen.values():
        if not verify_partial(group, tkey.vkeys[part.x], stmt, part):
            raise InvalidPartial(f"member at x={part.x}")
    quorum = sorted(seen)
    acc = group.identity
    for j in quorum:
        lam = lagrange_at_zero(group, quorum, j)
        acc = group.mul(acc, group.exp(seen[j].value, lam))
    return acc


# ---------------------------------------------------------------------------
# buddy escrow


def escrow_share(group, share: int, buddy_xs: Sequence[int],
                 buddy_threshold: int, rng) -> Dict[int, int]:
    """Split a share for safekeeping by a buddy group: a fresh sharing
    with the buddy group's own threshold, constant term = share."""
    coeffs = [share] + [random_scalar(group, rng)
                        for _ in range(buddy_threshold - 1)]
    return {b: _poly_eval(coeffs, b, group.order) for b in buddy_xs}


def recover_share(group, pieces: Dict[int, int],
                  buddy_threshold: int) -> int:
    """Rebuild an escrowed share from living buddies' pieces."""
    if len(pieces) < buddy_threshold:
        raise UnrecoverableFailure(
            f"{len(pieces)} escrow pieces of {buddy_threshold} needed")
    xs = sorted(pieces)[:buddy_threshold]
    q = group.order
    acc = 0
    for j in xs:
        acc = (acc + pieces[j] * lagrange_at_zero(group, xs, j)) % q
    return acc
