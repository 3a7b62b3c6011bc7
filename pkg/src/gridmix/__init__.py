"""gridmix: a desk-scale horizontally scalable anonymity network.

Groups of servers share trust so that one honest member per group keeps
messages private; groups are arranged on a square permutation network
over which ciphertext batches are shuffled, split, and re-encrypted
toward their next hop.  Tampering is caught either by NIZK proofs at
every step or by paired trap messages checked at the exit, and a
deterministic discrete-event simulator drives full rounds with
scriptable adversaries, crash injection, and cost-model accounting.
"""

__version__ = "0.1.0"
