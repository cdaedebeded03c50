"""Prime-order group arithmetic, hashing, and mask expansion.

Everything algebraic in the engine runs over a cyclic group of prime order
q realized as a subgroup of Z_p^*. Scalars are ints reduced mod q; group
elements are ints in [1, p). The canonical byte encodings (fixed-length
big-endian) are normative: they feed every hash, wire message, and the
mask PRG, so all parties must agree on them bit for bit.

Two parameter sets ship with the module: a production group with a
3072-bit modulus and 256-bit prime order, and a tiny hand-checkable test
group (p=23, q=11, g=2 — the squares mod 23). Both sit behind the same
GroupSpec interface, and custom parameter sets can be built directly for
scale experiments.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import EmptyExpansion, InvalidIndexSet, MissingShare

__all__ = [
    "GroupSpec",
    "production_group",
    "test_group",
    "bench_group",
    "lagrange_coefficients",
    "interpolate_at_zero",
    "interpolate_in_exponent",
    "map_to_point",
    "hash_to_scalar",
    "prg_expand",
    "derive_round_generator",
    "encode_iteration",
]


# ---------------------------------------------------------------------------
# fixed parameter sets

# Production parameters: q is a 256-bit prime, p = k*q + 1 a 3072-bit prime,
# g = 2^k mod p a generator of the order-q subgroup. Derived by hashing fixed
# labels with SHAKE-256 and advancing a counter until primality held, so the
# constants are reproducible from the labels alone.
_PROD_Q = int(
    "982d0b16306d7aefe9df1e3516ccf5d017c1f29f0230fabf23d8d1b37f2204bd", 16
)
_PROD_P = int(
    "8768687bb62c0ea4796b0cee3f0dd1e6f0a1dc347c3f59257414b32a9a3e2012"
    "689dc13a457c6d2066eec3949a70943594c0fc8f9df25a6e507db955beec8b90"
    "29bf66ccc6d8cebe9ad693e817afacab641a7f71c6bccba9b5b3fe43622aa9e8"
    "5e14c4d37bf84cbf475d59fb6af61793b8c4141221f123eb1f5ad0ea2854bfb8"
    "84342d718e027ed38ebeeb34722c4495bafce7a132c6fb0c63025e595a6906c6"
    "c281633954f2e761db432c59af616f1c6f7a465e10e7d6f78899d5f6af6c4610"
    "986fc7e5dfe3ad83f973456b11afa17cb8950238f6addde6c13b67e6cafc4813"
    "e2bbb68b2d531f064394e846132425b4c0ce25a6edf040a093b5dac341f637d3"
    "0fcd1e7dab804bef727b5203741be3c75ce37b78314142d76f91f9497006e22a"
    "ffb4bff902679db7357984da9a082b3e9deea5f700c0b1d974e71cfd534ab716"
    "3ea12c5597af3d7fef96ac59bae6f2929412628e9940fe60eb950484623cf29a"
    "1b5b047db80dcb4c215ce3bd6923f1467d24fd7f3f98bdc4836bcedf19615a65",
    16,
)
_PROD_G = int(
    "3001e150c80154e715e4eeac9d7c9834a19ece93112ade7481c709522224f5e8"
    "98c891c52fa3dc19c509174d5ee06e7ada36912acdebc4c3218087c236c25fe8"
    "911051eecf531e5b2f53afd360a8c25352ba1278c615ab0a71f936a12b660079"
    "85ad8f8099d0058ea3bd0b75bc1849fbefd079d758f6c8f407f6b144eeb4e2ed"
    "fb672e2fe623673bf5d69989bd669cd8ed59276c718b3f3d71481e559bea9c0d"
    "8beb45753f95b639f817c3092a03a37ccac4307e9f7fff88a7e6b2f9a47d895a"
    "c88b7438d6ad97b478d03cbe411ba39e6426bb7921eadf77d4dfd22255c8d00c"
    "db2443f40dff5f9b72fe343e2feb7dde089415106313caf5d38dad9a32290700"
    "ad70f497ece381fb706f4a6de57abd5da2e8da270c288021a64d7eef278cd190"
    "9eb5a148a341cc71ac4a6de6de6ec2d73ad01bb4522bcbd11719739f3675f438"
    "e4dd52175867baf53f8c2d46aa301ac0bcdbec0afe62bfa07b2157a231c84289"
    "3addeeb10e529ed34b9f4f663ef76ab286a33aee93a030a00718419741d54f9c",
    16,
)


@dataclass(frozen=True)
class GroupSpec:
    """A prime-order cyclic group inside Z_p^*, with canonical encodings.

    Scalars and elements are plain ints; all arithmetic goes through the
    spec so reductions and encodings stay consistent. Instances are
    immutable and safe to share.
    """

    name: str
    p: int
    q: int
    g: int
    element_bytes: int
    scalar_bytes: int

    @classmethod
    def from_params(cls, name: str, p: int, q: int, g: int) -> "GroupSpec":
        if (p - 1) % q != 0:
            raise ValueError("q must divide p-1")
        if not 1 < g < p or pow(g, q, p) != 1:
            raise ValueError("g is not an order-q element")
        return cls(
            name=name,
            p=p,
            q=q,
            g=g,
            element_bytes=(p.bit_length() + 7) // 8,
            scalar_bytes=(q.bit_length() + 7) // 8,
        )

    # -- arithmetic --------------------------------------------------------

    @property
    def identity(self) -> int:
        return 1

    def exp(self, base: int, e: int) -> int:
        return pow(base, e % self.q, self.p)

    def exp_g(self, e: int) -> int:
        return pow(self.g, e % self.q, self.p)

    def mul(self, a: int, b: int) -> int:
        return a * b % self.p

    def div(self, a: int, b: int) -> int:
        return a * pow(b, -1, self.p) % self.p

    def is_element(self, x: int) -> bool:
        return 0 < x < self.p and pow(x, self.q, self.p) == 1

    # -- encodings (normative: these bytes feed hashes and the wire) -------

    def encode_element(self, x: int) -> bytes:
        if not 0 < x < self.p:
            raise ValueError("element out of range")
        return x.to_bytes(self.element_bytes, "big")

    def decode_element(self, data: bytes) -> int:
        if len(data) != self.element_bytes:
            raise ValueError("bad element length")
        x = int.from_bytes(data, "big")
        if not 0 < x < self.p:
            raise ValueError("element out of range")
        return x

    def encode_scalar(self, s: int) -> bytes:
        return (s % self.q).to_bytes(self.scalar_bytes, "big")

    def decode_scalar(self, data: bytes) -> int:
        if len(data) != self.scalar_bytes:
            raise ValueError("bad scalar length")
        s = int.from_bytes(data, "big")
        if s >= self.q:
            raise ValueError("scalar out of range")
        return s

    # -- sampling ----------------------------------------------------------

    def random_scalar(self, rng) -> int:
        return rng.randrange(self.q)

    def random_nonzero_scalar(self, rng) -> int:
        return rng.randrange(1, self.q)

    def random_element(self, rng) -> int:
        return self.exp_g(rng.randrange(self.q))


_CACHED: Dict[str, GroupSpec] = {}


def production_group() -> GroupSpec:
    """The 3072-bit-modulus, 256-bit-order group (~128-bit security)."""
    if "production" not in _CACHED:
        _CACHED["production"] = GroupSpec.from_params(
            "production", _PROD_P, _PROD_Q, _PROD_G
        )
    return _CACHED["production"]


def test_group() -> GroupSpec:
    """The hand-checkable group: squares of Z_23^*, order 11, generator 2."""
    if "test" not in _CACHED:
        _CACHED["test"] = GroupSpec.from_params("test", 23, 11, 2)
    return _CACHED["test"]


# Benchmark parameters: a 32-bit prime order inside a 64-bit modulus.
# Far too small for security, but exponentiations cost nanoseconds, which
# makes population-scale experiments (hundreds of parties, dozens of
# iterations) practical in tests. Derived the same way as the production
# set: SHAKE-256 over the labels "secagg-bench-order" (counter 21) and
# "secagg-bench-cofactor" (counter 15), advancing the counter until q and
# p = k*q + 1 were both prime, then g = 2^k mod p.
_BENCH_Q = 0xB3E8C5DB
_BENCH_P = 0x9136CF17620E6FF7
_BENCH_G = 0x32A73267406E3CFE


def bench_group() -> GroupSpec:
    """The 64-bit-modulus, 32-bit-order group for scale experiments."""
    if "bench" not in _CACHED:
        _CACHED["bench"] = GroupSpec.from_params(
            "bench", _BENCH_P, _BENCH_Q, _BENCH_G
        )
    return _CACHED["bench"]


# ---------------------------------------------------------------------------
# Lagrange interpolation at zero, plain and in the exponent


def lagrange_coefficients(indices: Iterable[int], q: int) -> Dict[int, int]:
    """Coefficients beta_i = prod_{j != i} j/(j-i) mod q, evaluating at 0.

    Weighted by these, any degree-(k-1) polynomial's values at the k
    indices sum to its value at 0.
    """
    idx = list(indices)
    if not idx:
        raise InvalidIndexSet("empty index set")
    seen = set()
    for i in idx:
        r = i % q
        if r == 0:
            raise InvalidIndexSet(f"index {i} is zero mod q")
        if r in seen:
            raise InvalidIndexSet(f"duplicate index {i} mod q")
        seen.add(r)
    coeffs: Dict[int, int] = {}
    for i in idx:
        num = 1
        den = 1
        for j in idx:
            if j == i:
                continue
            num = num * j % q
            den = den * (j - i) % q
        coeffs[i] = num * pow(den, -1, q) % q
    return coeffs


def interpolate_at_zero(shares: Mapping[int, int], q: int) -> int:
    """Reconstruct f(0) from point values {index: f(index)}."""
    coeffs = lagrange_coefficients(shares.keys(), q)
    return sum(coeffs[i] * v for i, v in shares.items()) % q


def interpolate_in_exponent(
    group: GroupSpec, shares: Mapping[int, int], coeffs: Mapping[int, int]
) -> int:
    """Compute prod_u shares[u]^{beta_u}: g^{f(0)} from elements g^{f(u)}."""
    acc = group.identity
    for u, beta in coeffs.items():
        if u not in shares:
            raise MissingShare(f"no share for index {u}")
        acc = group.mul(acc, group.exp(shares[u], beta))
    return acc


# ---------------------------------------------------------------------------
# hashing into the group and the scalar field


def _shake(domain: bytes, data: bytes, n: int) -> bytes:
    h = hashlib.shake_256()
    h.update(domain)
    h.update(b"/")
    h.update(data)
    return h.digest(n)


def map_to_point(group: GroupSpec, data: bytes, domain: bytes = b"point") -> int:
    """Hash a byte string to a non-identity group element.

    Hash-and-retry: derive a residue mod p from the input plus a counter,
    clear the cofactor to land in the order-q subgroup, and retry on the
    rare degenerate outcome (zero residue or identity).
    """
    cofactor = (group.p - 1) // group.q
    ctr = 0
    while True:
        raw = _shake(
            domain, data + ctr.to_bytes(4, "little"), group.element_bytes + 16
        )
        c = int.from_bytes(raw, "big") % group.p
        candidate = pow(c, cofactor, group.p) if c else 0
        if candidate not in (0, group.identity):
            return candidate
        ctr += 1


def hash_to_scalar(group: GroupSpec, data: bytes, domain: bytes = b"scalar") -> int:
    """Hash a byte string to an element of Z_q."""
    raw = _shake(domain, data, group.scalar_bytes + 16)
    return int.from_bytes(raw, "big") % group.q


# ---------------------------------------------------------------------------
# mask expansion

_PRG_KEY_BYTES = 16  # 128-bit keystream key


def prg_expand(group: GroupSpec, seed: int, length: int) -> np.ndarray:
    """Expand a group element into `length` ring elements mod 2^32.

    The element's canonical serialization is hashed to a 128-bit key and a
    counter-mode keystream is read as little-endian 32-bit words. The
    expansion is a stream: prg_expand(s, k) is a prefix of prg_expand(s, l)
    for every k <= l.
    """
    if length < 1:
        raise EmptyExpansion("requested length must be >= 1")
    key = hashlib.sha256(b"prg/" + group.encode_element(seed)).digest()[:_PRG_KEY_BYTES]
    enc = Cipher(algorithms.AES(key), modes.CTR(b"\x00" * 16)).encryptor()
    stream = enc.update(b"\x00" * (4 * length))
    return np.frombuffer(stream, dtype="<u4").copy()


# ---------------------------------------------------------------------------
# per-iteration generator


def encode_iteration(t: int) -> bytes:
    """Iteration indices are 8-byte little-endian in every hash input."""
    return t.to_bytes(8, "little")


def derive_round_generator(group: GroupSpec, model_digest: bytes, t: int) -> int:
    """g_t: the common per-iteration generator all masks hang off.

    Any party holding the same model digest derives the same element, and
    distinct models or iterations give independent generators.
    """
    return map_to_point(group, model_digest + encode_iteration(t), domain=b"roundgen")
