"""Non-interactive zero-knowledge proofs for the verified mixing variant.

Three statements are covered:

* ``prove_enc``: knowledge of the randomness (hence the plaintext) behind
  a fresh encryption, a Schnorr proof bound to round and entry-group
  context so submissions cannot be replayed across rounds or groups.
* ``prove_reenc``: a re-encryption step used exactly the secret key
  matching the member's registered mixing key plus fresh randomness
  under the next key, in the Chaum-Pedersen equality-of-logs style.
* ``prove_shuffle``: a batch of ciphertext vectors was permuted and
  rerandomized, nothing added, dropped, or substituted.  This follows
  Neff's verifiable-shuffle construction: commitments to a permutation,
  product equations tying inputs to outputs per vector component, and a
  simple-shuffle subprotocol reduced to an iterated logarithmic
  multiplication proof.

All challenges are Fiat-Shamir scalars from a labeled hash over the
protocol label, the public key, the statement, and every prover message
so far.  Proof lists over a batch stay per-ciphertext; nothing is
aggregated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .crypto import (
    Ciphertext, NonNullY, hash_to_scalar, labeled_hash, random_scalar,
    ciphertext_to_bytes, scalar_to_bytes,
)


class LengthMismatch(Exception):
    """Input and output batches disagree in shape."""


# ---------------------------------------------------------------------------
# proof of plaintext knowledge for a fresh encryption


@dataclass(frozen=True)
class EncProof:
    A: object
    u: int


def _enc_challenge(group, pk, ct, A, binding):
    return hash_to_scalar(group, b"gridmix.encpok.v1",
                          group.element_to_bytes(pk),
                          ciphertext_to_bytes(group, ct),
                          group.element_to_bytes(A),
                          binding)


def prove_enc(group, pk, ct: Ciphertext, r: int, binding: bytes,
              rng) -> EncProof:
    """Schnorr proof of the encryption randomness r with R = g^r."""
    s = random_scalar(group, rng)
    A = group.exp(group.generator, s)
    t = _enc_challenge(group, pk, ct, A, binding)
    return EncProof(A, (s + t * r) % group.order)


def verify_enc(group, pk, ct: Ciphertext, proof: EncProof,
               binding: bytes) -> bool:
    if not group.is_element(proof.A):
        return False
    t = _enc_challenge(group, pk, ct, proof.A, binding)
    lhs = group.exp(group.generator, proof.u)
    rhs = group.mul(proof.A, group.exp(ct.R, t))
    return lhs == rhs


# ---------------------------------------------------------------------------
# proof of correct re-encryption


@dataclass(frozen=True)
class ReEncProof:
    T1: object
    T2: Optional[object]
    T3: object
    zx: int
    zr: Optional[int]


def _effective_slots(ct: Ciphertext):
    # the slot swap performed by the first re-encryption of a ciphertext
    if ct.Y is None:
        return ct.R, None
    return ct.Y, ct.R


def _reenc_challenge(group, member_pk, next_pk, ct_in, ct_out, T1, T2, T3):
    nxt = group.element_to_bytes(next_pk) if next_pk is not None else b"\xff"
    t2 = group.element_to_bytes(T2) if T2 is not None else b"\xff"
    return hash_to_scalar(group, b"gridmix.reenc.v1",
                          group.element_to_bytes(member_pk), nxt,
                          ciphertext_to_bytes(group, ct_in),
                          ciphertext_to_bytes(group, ct_out),
                          group.element_to_bytes(T1), t2,
                          group.element_to_bytes(T3))


def prove_reenc(group, member_sk: int, next_pk, ct_in: Ciphertext,
                ct_out: Ciphertext, r: Optional[int], rng) -> ReEncProof:
    """Prove ct_out = reenc(member_sk, next_pk, ct_in) for the key pair
    (member_sk, g^member_sk); r is the fresh randomness (None when
    next_pk is None)."""
    g, q = group.generator, group.order
    y_eff = ct_in.Y if ct_in.Y is not None else ct_in.R
    member_pk = group.exp(g, member_sk)
    wx = random_scalar(group, rng)
    T1 = group.exp(g, wx)
    if next_pk is None:
        T2, zr = None, None
        T3 = group.exp(y_eff, wx)
        e = _reenc_challenge(group, member_pk, None, ct_in, ct_out, T1, None, T3)
    else:
        wr = random_scalar(group, rng)
        T2 = group.exp(g, wr)
        T3 = group.mul(group.exp(y_eff, wx), group.exp(next_pk, -wr))
        e = _reenc_challenge(group, member_pk, next_pk, ct_in, ct_out, T1, T2, T3)
        zr = (wr + e * r) % q
    zx = (wx + e * member_sk) % q
    return ReEncProof(T1, T2, T3, zx, zr)


def verify_reenc(group, member_pk, next_pk, ct_in: Ciphertext,
                 ct_out: Ciphertext, proof: ReEncProof) -> bool:
    g = group.generator
    y_eff, r_shifted = _effective_slots(ct_in)
    r_eff = r_shifted if r_shifted is not None else group.identity
    # structural slot rules come first
    if ct_out.Y != y_eff:
        return False
    if next_pk is None and ct_out.R != r_eff:
        return False
    e = _reenc_challenge(group, member_pk, next_pk, ct_in, ct_out,
                         proof.T1, proof.T2, proof.T3)
    if group.exp(g, proof.zx) != group.mul(proof.T1, group.exp(member_pk, e)):
        return False
    c_ratio = group.mul(ct_in.c, group.inv(ct_out.c))
    if next_pk is None:
        rhs = group.mul(proof.T3, group.exp(c_ratio, e))
        return group.exp(y_eff, proof.zx) == rhs
    if proof.T2 is None or proof.zr is None:
        return False
    r_ratio = group.mul(ct_out.R, group.inv(r_eff))
    if group.exp(g, proof.zr) != group.mul(proof.T2, group.exp(r_ratio, e)):
        return False
    lhs = group.mul(group.exp(y_eff, proof.zx), group.exp(next_pk, -proof.zr))
    return lhs == group.mul(proof.T3, group.exp(c_ratio, e))


# ---------------------------------------------------------------------------
# verifiable shuffle


@dataclass(frozen=True)
class SimpleShuffleProof:
    # iterated logarithmic multiplication proof over the 2n derived bases
    theta_commits: Tuple
    responses: Tuple[int, ...]


@dataclass(frozen=True)
class ShuffleProof:
    gamma_commit: object            # g^gamma
    perm_a: Tuple                   # g^(a_i)
    perm_b: Tuple                   # perm_a[perm[i]]^gamma
    blind_u: Tuple                  # g^(u_i)
    blind_w: Tuple                  # gamma_commit^(w_i)
    lam1: Tuple                     # per-component product offsets, base g
    lam2: Tuple                     # per-component product offsets, base pk
    resp_d: Tuple                   # g^(gamma * b_perm(i))
    sigma: Tuple[int, ...]
    tau: Tuple[int, ...]            # per component
    simple: SimpleShuffleProof


def _as_vectors(items):
    if items and isinstance(items[0], Ciphertext):
        return [(ct,) for ct in items]
    return [tuple(vec) for vec in items]


def _shuffle_context(group, pk, vin, vout) -> bytes:
    parts = [group.element_to_bytes(pk)]
    for batch in (vin, vout):
        for vec in batch:
            for ct in vec:
                parts.append(ciphertext_to_bytes(group, ct))
    return labeled_hash(b"gridmix.shuffle.ctx.v1", *parts)


def _elements_digest(group, label: bytes, *element_runs) -> bytes:
    parts = []
    for run in element_runs:
        for e in run:
            parts.append(group.element_to_bytes(e))
    return labeled_hash(label, *parts)


def _check_shapes(vin, vout):
    if len(vin) == 0:
        raise LengthMismatch("empty batch")
    if len(vin) != len(vout):
        raise LengthMismatch(f"{len(vin)} inputs vs {len(vout)} outputs")
    width = len(vin[0])
    for vec in list(vin) + list(vout):
        if len(vec) != width:
            raise LengthMismatch("ragged ciphertext vectors")
        for ct in vec:
            if ct.Y is not None:
                raise NonNullY("shuffles act on boundary-reset ciphertexts")
    return width


def prove_shuffle(group, pk, items_in, items_out, perm: Sequence[int],
                  betas, rng) -> ShuffleProof:
    """Prove items_out[i] = rerandomize(items_in[perm[i]], betas[i][l]).

    ``betas[i][l]`` is the rerandomization exponent used for component l
    of output i.  Ciphertext vectors share one permutation; every
    component gets its own product equation.
    """
    vin, vout = _as_vectors(items_in), _as_vectors(items_out)
    ncomp = _check_shapes(vin, vout)
    n = len(vin)
    q, g = group.order, group.generator
    inv_perm = [0] * n
    for i, p in enumerate(perm):
        inv_perm[p] = i

    gamma = random_scalar(group, rng)
    a = [random_scalar(group, rng) for _ in range(n)]
    u = [random_scalar(group, rng) for _ in range(n)]
    w = [random_scalar(group, rng) for _ in range(n)]
    tau0 = [random_scalar(group, rng) for _ in range(ncomp)]

    gamma_commit = group.exp(g, gamma)
    perm_a = [group.exp(g, ai) for ai in a]
    perm_b = [group.exp(g, (gamma * a[perm[i]]) % q) for i in range(n)]
    blind_u = [group.exp(g, ui) for ui in u]
    blind_w = [group.exp(g, (gamma * wi) % q) for wi in w]

    lam1, lam2 = [], []
    for l in range(ncomp):
        lead = (tau0[l] + sum(betas[i][l] * w[i] for i in range(n))) % q
        acc1 = group.exp(g, lead)
        acc2 = group.exp(pk, lead)
        for i in range(n):
            e = (w[inv_perm[i]] - u[i]) % q
            acc1 = group.mul(acc1, group.exp(vin[i][l].R, e))
            acc2 = group.mul(acc2, group.exp(vin[i][l].c, e))
        lam1.append(acc1)
        lam2.append(acc2)

    ctx = _shuffle_context(group, pk, vin, vout)
    d1 = _elements_digest(group, b"gridmix.shuffle.m1.v1",
                          [gamma_commit], perm_a, perm_b, blind_u, blind_w,
                          lam1, lam2)
    rho = [hash_to_scalar(group, b"gridmix.shuffle.rho.v1", ctx, d1,
                          i.to_bytes(4, "big")) for i in range(n)]
    b = [(rho[i] - u[i]) % q for i in range(n)]
    resp_d = [group.exp(g, (gamma * b[perm[i]]) % q) for i in range(n)]
    d2 = _elements_digest(group, b"gridmix.shuffle.m2.v1", resp_d)
    lam = hash_to_scalar(group, b"gridmix.shuffle.lambda.v1", ctx, d1, d2)

    sigma = [(w[i] + b[perm[i]]) % q for i in range(n)]
    tau = [(-tau0[l] + sum(betas[i][l] * b[perm[i]] for i in range(n))) % q
           for l in range(ncomp)]
    d3 = labeled_hash(b"gridmix.shuffle.m3.v1", ctx, d1, d2,
                      *[scalar_to_bytes(group, s) for s in sigma + tau])

    r_logs = [(a[i] + lam * b[i]) % q for i in range(n)]
    simple = _prove_simple(group, gamma, r_logs, perm, d3, rng)

    return ShuffleProof(gamma_commit, tuple(perm_a), tuple(perm_b),
                        tuple(blind_u), tuple(blind_w), tuple(lam1),
                        tuple(lam2), tuple(resp_d), tuple(sigma), tuple(tau),
                        simple)


def verify_shuffle(group, pk, items_in, items_out,
                   proof: ShuffleProof) -> bool:
    vin, vout = _as_vectors(items_in), _as_vectors(items_out)
    ncomp = _check_shapes(vin, vout)
    n = len(vin)
    g, q = group.generator, group.order
    if not (len(proof.perm_a) == len(proof.perm_b) == len(proof.blind_u)
            == len(proof.blind_w) == len(proof.resp_d) == len(proof.sigma) == n):
        return False
    if not (len(proof.lam1) == len(proof.lam2) == len(proof.tau) == ncomp):
        return False

    ctx = _shuffle_context(group, pk, vin, vout)
    d1 = _elements_digest(group, b"gridmix.shuffle.m1.v1",
                          [proof.gamma_commit], proof.perm_a, proof.perm_b,
                          proof.blind_u, proof.blind_w, proof.lam1, proof.lam2)
    rho = [hash_to_scalar(group, b"gridmix.shuffle.rho.v1", ctx, d1,
                          i.to_bytes(4, "big")) for i in range(n)]
    d2 = _elements_digest(group, b"gridmix.shuffle.m2.v1", proof.resp_d)
    lam = hash_to_scalar(group, b"gridmix.shuffle.lambda.v1", ctx, d1, d2)

    # sigma ties the committed permutation to the blinding offsets
    for i in range(n):
        lhs = group.exp(proof.gamma_commit, proof.sigma[i])
        if lhs != group.mul(proof.blind_w[i], proof.resp_d[i]):
            return False

    # per-component product equations over inputs and outputs
    for l in range(ncomp):
        phi1 = group.exp(g, proof.tau[l])
        phi1 = group.mul(phi1, proof.lam1[l])
        phi2 = group.exp(pk, proof.tau[l])
        phi2 = group.mul(phi2, proof.lam2[l])
        acc1, acc2 = group.identity, group.identity
        for i in range(n):
            acc1 = group.mul(acc1, group.exp(vout[i][l].R, proof.sigma[i]))
            acc1 = group.mul(acc1, group.exp(vin[i][l].R, -rho[i]))
            acc2 = group.mul(acc2, group.exp(vout[i][l].c, proof.sigma[i]))
            acc2 = group.mul(acc2, group.exp(vin[i][l].c, -rho[i]))
        if acc1 != phi1 or acc2 != phi2:
            return False

    # the committed permutation itself: a simple shuffle over derived bases
    r_elems, s_elems = [], []
    for i in range(n):
        b_elem = group.mul(group.exp(g, rho[i]), group.inv(proof.blind_u[i]))
        r_elems.append(group.mul(proof.perm_a[i], group.exp(b_elem, lam)))
        s_elems.append(group.mul(proof.perm_b[i], group.exp(proof.resp_d[i], lam)))
    d3 = labeled_hash(b"gridmix.shuffle.m3.v1", ctx, d1, d2,
                      *[scalar_to_bytes(group, s)
                        for s in list(proof.sigma) + list(proof.tau)])
    return _verify_simple(group, proof.gamma_commit, r_elems, s_elems,
                          d3, proof.simple)


def _prove_simple(group, gamma: int, x_logs: List[int], perm: Sequence[int],
                  transcript: bytes, rng) -> SimpleShuffleProof:
    """Prove the multiset relation {y_i} = {gamma * x_perm(i)} over logs,
    via an iterated product proof on 2n bases."""
    q, g = group.order, group.generator
    t = hash_to_scalar(group, b"gridmix.shuffle.t.v1", transcript)
    n = len(x_logs)
    xs = [(x_logs[i] - t) % q for i in range(n)] + [gamma] * n
    ys = [(gamma * (x_logs[perm[i]] - t)) % q for i in range(n)] + [1] * n
    m = 2 * n

    theta = [random_scalar(group, rng) for _ in range(m - 1)]
    commits = []
    for i in range(m):
        if i == 0:
            e = (ys[0] * theta[0]) % q
        elif i == m - 1:
            e = (xs[m - 1] * theta[m - 2]) % q
        else:
            e = (xs[i] * theta[i - 1] + ys[i] * theta[i]) % q
        commits.append(group.exp(g, e))

    chal = hash_to_scalar(group, b"gridmix.shuffle.ilmp.v1", transcript,
                          _elements_digest(group, b"gridmix.shuffle.m4.v1",
                                           commits))
    responses = []
    rho_prev = chal
    for i in range(m - 1):
        rho_i = (-rho_prev * xs[i] * pow(ys[i], q - 2, q)) % q
        responses.append((theta[i] + rho_i) % q)
        rho_prev = rho_i
    return SimpleShuffleProof(tuple(commits), tuple(responses))


def _verify_simple(group, gamma_commit, r_elems, s_elems, transcript: bytes,
                   proof: SimpleShuffleProof) -> bool:
    g, q = group.generator, group.order
    n = len(r_elems)
    m = 2 * n
    if len(proof.theta_commits) != m or len(proof.responses) != m - 1:
        return False
    t = hash_to_scalar(group, b"gridmix.shuffle.t.v1", transcript)
    shift_x = group.inv(group.exp(g, t))
    shift_y = group.inv(group.exp(gamma_commit, t))
    base_x = [group.mul(r, shift_x) for r in r_elems] + [gamma_commit] * n
    base_y = [group.mul(s, shift_y) for s in s_elems] + [g] * n

    chal = hash_to_scalar(group, b"gridmix.shuffle.ilmp.v1", transcript,
                          _elements_digest(group, b"gridmix.shuffle.m4.v1",
                                           proof.theta_commits))
    resp = list(proof.responses)
    for i in range(m):
        left_e = chal if i == 0 else resp[i - 1]
        right_e = (chal if m % 2 == 0 else -chal) if i == m - 1 else resp[i]
        lhs = group.mul(group.exp(base_x[i], left_e),
                        group.exp(base_y[i], right_e))
        if lhs != proof.theta_commits[i]:
            return False
    return True


# ---------------------------------------------------------------------------
# test-vector records: hex statements plus an expected verdict


def _elem_hex(group, e) -> str:
    return group.element_to_bytes(e).hex()


def _opt_hex(group, e) -> str:
    return "" if e is None else _elem_hex(group, e)


def enc_proof_to_jsonable(group, proof: EncProof) -> dict:
    return {"A": _elem_hex(group, proof.A), "u": f"{proof.u:x}"}


def enc_proof_from_jsonable(group, obj: dict) -> EncProof:
    return EncProof(group.element_from_bytes(bytes.fromhex(obj["A"])),
                    int(obj["u"], 16))


def reenc_proof_to_jsonable(group, proof: ReEncProof) -> dict:
    return {"T1": _elem_hex(group, proof.T1),
            "T2": _opt_hex(group, proof.T2),
            "T3": _elem_hex(group, proof.T3),
            "zx": f"{proof.zx:x}",
            "zr": "" if proof.zr is None else f"{proof.zr:x}"}


def reenc_proof_from_jsonable(group, obj: dict) -> ReEncProof:
    from_hex = lambda h: group.element_from_bytes(bytes.fromhex(h))
    return ReEncProof(from_hex(obj["T1"]),
                      from_hex(obj["T2"]) if obj["T2"] else None,
                      from_hex(obj["T3"]), int(obj["zx"], 16),
                      int(obj["zr"], 16) if obj["zr"] else None)


def shuffle_proof_to_jsonable(group, proof: ShuffleProof) -> dict:
    ehex = lambda run: [_elem_hex(group, e) for e in run]
    return {"gamma_commit": _elem_hex(group, proof.gamma_commit),
            "perm_a": ehex(proof.perm_a), "perm_b": ehex(proof.perm_b),
            "blind_u": ehex(proof.blind_u), "blind_w": ehex(proof.blind_w),
            "lam1": ehex(proof.lam1), "lam2": ehex(proof.lam2),
            "resp_d": ehex(proof.resp_d),
            "sigma": [f"{s:x}" for s in proof.sigma],
            "tau": [f"{s:x}" for s in proof.tau],
            "simple": {"theta_commits": ehex(proof.simple.theta_commits),
                       "responses": [f"{s:x}" for s in proof.simple.responses]}}


def make_proof_vector(kind: str, group_name: str, group, statement: dict,
                      proof, expect: bool) -> dict:
    dump = {"enc": enc_proof_to_jsonable, "reenc": reenc_proof_to_jsonable,
            "shuffle": shuffle_proof_to_jsonable}[kind]
    return {"kind": kind, "group": group_name, "statement": statement,
            "proof": dump(group, proof), "expect": expect}


def check_proof_vector(record: dict) -> bool:
    """Re-run verification for a stored record; True when the verdict
    matches the recorded expectation."""
    from .crypto import ciphertext_from_hex
    from .groups import get_group
    group = get_group(record["group"])
    stmt = record["statement"]
    kind = record["kind"]
    if kind == "enc":
        proof = enc_proof_from_jsonable(group, record["proof"])
        got = verify_enc(group,
                         group.element_from_bytes(bytes.fromhex(stmt["pk"])),
                         ciphertext_from_hex(group, stmt["ct"]), proof,
                         bytes.fromhex(stmt["binding"]))
    elif kind == "reenc":
        proof = reenc_proof_from_jsonable(group, record["proof"])
        next_pk = (group.element_from_bytes(bytes.fromhex(stmt["next_pk"]))
                   if stmt["next_pk"] else None)
        got = verify_reenc(group,
                           group.element_from_bytes(
                               bytes.fromhex(stmt["member_pk"])),
                           next_pk,
                           ciphertext_from_hex(group, stmt["ct_in"]),
                           ciphertext_from_hex(group, stmt["ct_out"]), proof)
    elif kind == "shuffle":
        proof = shuffle_proof_from_jsonable(group, record["proof"])
        vin = [tuple(ciphertext_from_hex(group, h) for h in vec)
               for vec in stmt["vin"]]
        vout = [tuple(ciphertext_from_hex(group, h) for h in vec)
                for vec in stmt["vout"]]
        try:
            got = verify_shuffle(group, group.element_from_bytes(
                bytes.fromhex(stmt["pk"])), vin, vout, proof)
        except LengthMismatch:
            got = False
    else:
        raise ValueError(f"unknown proof vector kind {kind!r}")
    return got == record["expect"]


def write_proof_vectors(path, records) -> None:
    import json
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_proof_vectors(path):
    import json
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def shuffle_proof_from_jsonable(group, obj: dict) -> ShuffleProof:
    elems = lambda hs: tuple(group.element_from_bytes(bytes.fromhex(h))
                             for h in hs)
    ints = lambda hs: tuple(int(h, 16) for h in hs)
    simple = SimpleShuffleProof(elems(obj["simple"]["theta_commits"]),
                                ints(obj["simple"]["responses"]))
    return ShuffleProof(group.element_from_bytes(
                            bytes.fromhex(obj["gamma_commit"])),
                        elems(obj["perm_a"]), elems(obj["perm_b"]),
                        elems(obj["blind_u"]), elems(obj["blind_w"]),
                        elems(obj["lam1"]), elems(obj["lam2"]),
                        elems(obj["resp_d"]), ints(obj["sigma"]),
                        ints(obj["tau"]), simple)
