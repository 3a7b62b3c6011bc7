"""Prime-order group backends shared by every cryptographic layer.

Two interchangeable element representations are provided:

* ``ModPGroup``: the subgroup of quadratic residues of Z_p* for a safe
  prime p = 2q + 1.  Elements are plain ints.  Ships with a tiny
  23-element parameter set whose algebra can be checked exhaustively,
  and a 272-bit set wide enough to embed 31-byte payload chunks.
* ``P256Group``: NIST P-256, the production-grade curve backend.
  Elements are affine ``(x, y)`` tuples; ``None`` is the identity.

Scalars live in Z_q where q is the (prime) group order.  Byte encodings
are fixed-width big-endian so transcripts hash identically everywhere.
Data embedding works on "blocks": a block of ``embed_payload_bytes + 1``
bytes (payload plus a one-byte chunk header) is mapped to an element by
try-and-increment over a counter byte, and recovered exactly.
"""

from __future__ import annotations

from typing import Optional, Tuple

EMBED_MAX_TRIES = 256


class ModPGroup:
    """Quadratic-residue subgroup of Z_p* for a safe prime p = 2q + 1."""

    def __init__(self, name: str, p: int, g: int):
        self.name = name
        self.p = p
        self.order = (p - 1) // 2
        self.generator = g
        self.identity = 1
        self.element_width = (p.bit_length() + 7) // 8
        # One byte of the block is the chunk header and one extra byte is
        # the try-and-increment counter, appended below the block.
        cap = self.element_width - 3
        self.embed_payload_bytes = cap if cap > 0 else 0
        if pow(g, self.order, p) != 1 or g == 1:
            raise ValueError("generator is not in the prime-order subgroup")

    def mul(self, a: int, b: int) -> int:
        return (a * b) % self.p

    def inv(self, a: int) -> int:
        return pow(a, self.p - 2, self.p)

    def exp(self, base: int, e: int) -> int:
        return pow(base, e % self.order, self.p)

    def is_element(self, a) -> bool:
        if not isinstance(a, int) or not 0 < a < self.p:
            return False
        return pow(a, self.order, self.p) == 1

    def element_to_bytes(self, a: int) -> bytes:
        return a.to_bytes(self.element_width, "big")

    def element_from_bytes(self, raw: bytes) -> int:
        if len(raw) != self.element_width:
            raise ValueError("bad element length")
        a = int.from_bytes(raw, "big")
        if not self.is_element(a):
            raise ValueError("not a group element")
        return a

    def block_to_element(self, block: bytes) -> Optional[int]:
        """Map a data block to an element, or None if all counters fail."""
        if self.embed_payload_bytes == 0:
            raise ValueError("group modulus too small to embed data")
        if len(block) != self.embed_payload_bytes + 1:
            raise ValueError("bad block length")
        base = int.from_bytes(block, "big") << 8
        for ctr in range(EMBED_MAX_TRIES):
            cand = base | ctr
            if 0 < cand < self.p and pow(cand, self.order, self.p) == 1:
                return cand
        return None

    def element_to_block(self, a: int) -> bytes:
        width = self.embed_payload_bytes + 1
        return (a >> 8).to_bytes(width, "big")

    def __repr__(self):
        return f"ModPGroup({self.name})"


# Exhaustive-test parameters: p = 23, QR subgroup {1,2,3,4,6,8,9,12,13,16,18}
# of prime order 11, generated by 4.  Too small to embed data.
TINY_P = 23
TINY_G = 4

# Default simulation parameters: a 272-bit safe prime (p = 2q + 1, q prime),
# wide enough that a 33-byte embed candidate is always below p.
MODP_P = 0xD8D8ECFE3B8EFB94C30080C575ED3AA80D34F02C7EEFF55E0313E8BF9C8962718677
MODP_G = 4


class P256Group:
    """NIST P-256 with affine-point elements; None is the point at infinity.

    Scalar multiplication runs in Jacobian coordinates.  Compressed
    SEC1-style encoding: 0x02/0x03 prefix plus the x coordinate, with a
    dedicated all-zero encoding for the identity.
    """

    P = 0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFF
    A = P - 3
    B = 0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B
    GX = 0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296
    GY = 0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5
    N = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551

    def __init__(self):
        self.name = "p256"
        self.order = self.N
        self.generator = (self.GX, self.GY)
        self.identity = None
        self.element_width = 33
        # 30 payload bytes + 1 header byte; the counter byte sits on top of
        # the 32-byte x coordinate and is skipped when x would exceed P.
        self.embed_payload_bytes = 30

    # -- point arithmetic ------------------------------------------------

    def _affine_add(self, P1, P2):
        p = self.P
        if P1 is None:
            return P2
        if P2 is None:
            return P1
        x1, y1 = P1
        x2, y2 = P2
        if x1 == x2:
            if (y1 + y2) % p == 0:
                return None
            lam = (3 * x1 * x1 + self.A) * pow(2 * y1, p - 2, p) % p
        else:
            lam = (y2 - y1) * pow(x2 - x1, p - 2, p) % p
        x3 = (lam * lam - x1 - x2) % p
        return (x3, (lam * (x1 - x3) - y1) % p)

    @staticmethod
    def _jac_double(X1, Y1, Z1, p):
        # dbl-2001-b, specialised for a = -3
        delta = Z1 * Z1 % p
        gamma = Y1 * Y1 % p
        beta = X1 * gamma % p
        alpha = 3 * (X1 - delta) * (X1 + delta) % p
        X3 = (alpha * alpha - 8 * beta) % p
        Z3 = ((Y1 + Z1) * (Y1 + Z1) - gamma - delta) % p
        Y3 = (alpha * (4 * beta - X3) - 8 * gamma * gamma) % p
        return X3, Y3, Z3

    def _jac_add_affine(self, X1, Y1, Z1, x2, y2):
        # madd-2007-bl (mixed Jacobian plus affine)
        p = self.P
        if Z1 == 0:
            return x2, y2, 1
        Z1Z1 = Z1 * Z1 % p
        U2 = x2 * Z1Z1 % p
        S2 = y2 * Z1 * Z1Z1 % p
        if U2 == X1:
            if S2 == Y1:
                return self._jac_double(X1, Y1, Z1, p)
            return 0, 1, 0
        H = (U2 - X1) % p
        HH = H * H % p
        I = 4 * HH % p
        J = H * I % p
        r = 2 * (S2 - Y1) % p
        V = X1 * I % p
        X3 = (r * r - J - 2 * V) % p
        Y3 = (r * (V - X3) - 2 * Y1 * J) % p
        Z3 = ((Z1 + H) * (Z1 + H) - Z1Z1 - HH) % p
        return X3, Y3, Z3

    def exp(self, base, e: int):
        e %= self.N
        if base is None or e == 0:
            return None
        x, y = base
        X, Y, Z = 0, 1, 0
        p = self.P
        for bit in bin(e)[2:]:
            if Z:
                X, Y, Z = self._jac_double(X, Y, Z, p)
            if bit == "1":
                X, Y, Z = self._jac_add_affine(X, Y, Z, x, y)
        if Z == 0:
            return None
        zinv = pow(Z, p - 2, p)
        z2 = zinv * zinv % p
        return (X * z2 % p, Y * z2 * zinv % p)

    def mul(self, a, b):
        return self._affine_add(a, b)

    def inv(self, a):
        if a is None:
            return None
        x, y = a
        return (x, (-y) % self.P)

    def is_element(self, a) -> bool:
        if a is None:
            return True
        if not (isinstance(a, tuple) and len(a) == 2):
            return False
        x, y = a
        if not (0 <= x < self.P and 0 <= y < self.P):
            return False
        return (y * y - (x * x * x + self.A * x + self.B)) % self.P == 0

    # -- encodings -------------------------------------------------------

    def element_to_bytes(self, a) -> bytes:
        if a is None:
            return b"\x00" * 33
        x, y = a
        return bytes([2 + (y & 1)]) + x.to_bytes(32, "big")

    def element_from_bytes(self, raw: bytes):
        if len(raw) != 33:
            raise ValueError("bad element length")
        if raw == b"\x00" * 33:
            return None
        prefix, x = raw[0], int.from_bytes(raw[1:], "big")
        if prefix not in (2, 3) or x >= self.P:
            raise ValueError("bad point encoding")
        y = self._solve_y(x)
        if y is None:
            raise ValueError("x is not on the curve")
        if (y & 1) != (prefix & 1):
            y = self.P - y
        return (x, y)

    def _solve_y(self, x: int) -> Optional[int]:
        rhs = (x * x * x + self.A * x + self.B) % self.P
        y = pow(rhs, (self.P + 1) // 4, self.P)
        return y if y * y % self.P == rhs else None

    def block_to_element(self, block: bytes) -> Optional[Tuple[int, int]]:
        if len(block) != self.embed_payload_bytes + 1:
            raise ValueError("bad block length")
        base = int.from_bytes(block, "big")
        for ctr in range(EMBED_MAX_TRIES):
            x = (ctr << 248) | base
            if x >= self.P:
                continue
            y = self._solve_y(x)
            if y is not None:
                if y & 1:
                    y = self.P - y
                return (x, y)
        return None

    def element_to_block(self, a) -> bytes:
        x, _ = a
        return (x & ((1 << 248) - 1)).to_bytes(31, "big")

    def __repr__(self):
        return "P256Group()"


_GROUPS = {}


def get_group(name: str):
    """Return the shared backend instance for a configured name."""
    if name not in _GROUPS:
        if name == "modp":
            _GROUPS[name] = ModPGroup("modp", MODP_P, MODP_G)
        elif name == "modp-tiny":
            _GROUPS[name] = ModPGroup("modp-tiny", TINY_P, TINY_G)
        elif name == "p256":
            _GROUPS[name] = P256Group()
        else:
            raise ValueError(f"unknown group backend: {name!r}")
    return _GROUPS[name]
