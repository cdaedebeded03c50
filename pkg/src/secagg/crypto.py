"""Party key material and the security primitives built on the group.

Covers key-pair triples, Diffie-Hellman agreement with role-separated
derivation, AES-GCM authenticated encryption, Schnorr signatures, and
the Merkle accumulator used to commit to everyone's public keys.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import AeAuthFailure, InvalidIndex, InvalidPeerKey
from .groups import GroupSpec, encode_iteration, hash_to_scalar

PURPOSE_MASK = 1
PURPOSE_AUTHCRYPT = 2
PURPOSE_DECRYPT = 3

AE_KEY_BYTES = 16
AE_NONCE_BYTES = 12
AE_TAG_BYTES = 16


@dataclass(frozen=True)
class KeyPair:
    sk: int
    pk: int
    purpose: int


@dataclass(frozen=True)
class KeyTriple:
    """One party's three key pairs: masking, transport, and decryption.

    Clients use the first two; the third matters only on parties that sit
    on the decryption committee.
    """

    mask: KeyPair
    authcrypt: KeyPair
    decrypt: KeyPair

    def public_keys(self) -> Tuple[int, int, int]:
        return (self.mask.pk, self.authcrypt.pk, self.decrypt.pk)


def keygen_triple(group: GroupSpec, rng) -> KeyTriple:
    pairs = []
    for purpose in (PURPOSE_MASK, PURPOSE_AUTHCRYPT, PURPOSE_DECRYPT):
        sk = group.random_nonzero_scalar(rng)
        pairs.append(KeyPair(sk=sk, pk=group.exp_g(sk), purpose=purpose))
    return KeyTriple(*pairs)


# ---------------------------------------------------------------------------
# Key agreement.  The raw agreed point feeds a role-prefixed derivation so
# the same pair of keys can safely yield both a scalar seed and a transport
# key without the two ever colliding.


def ka_agree(
    group: GroupSpec, my_sk: int, their_pk: int, role: str
) -> Union[int, bytes]:
    """Derive the shared value for a pair of mask or transport keys.

    role="seed" returns a scalar; role="transport" returns a 128-bit AE key.
    """
    if role not in ("seed", "transport"):
        raise ValueError(f"unknown key agreement role {role!r}")
    if not group.is_element(their_pk) or their_pk == group.identity:
        raise InvalidPeerKey(f"peer public key {their_pk} is not a usable group element")
    shared = group.encode_element(group.exp(their_pk, my_sk))
    if role == "seed":
        return hash_to_scalar(group, shared, domain=b"ka/seed")
    return hashlib.sha256(b"ka/transport/" + shared).digest()[:AE_KEY_BYTES]


# ---------------------------------------------------------------------------
# Authenticated encryption.  Layout: nonce(12) || body || tag(16).  Nonces
# are caller-supplied counters, kept distinct per (sender, receiver,
# purpose) by the protocol layer, so no nonce is ever reused under a key.


def ae_encrypt(key: bytes, counter: int, plaintext: bytes, associated_data: bytes = b"") -> bytes:
    nonce = counter.to_bytes(AE_NONCE_BYTES, "little")
    return nonce + AESGCM(key).encrypt(nonce, plaintext, associated_data)


def ae_decrypt(key: bytes, blob: bytes, associated_data: bytes = b"") -> bytes:
    if len(blob) < AE_NONCE_BYTES + AE_TAG_BYTES:
        raise AeAuthFailure("ciphertext shorter than nonce plus tag")
    nonce, sealed = blob[:AE_NONCE_BYTES], blob[AE_NONCE_BYTES:]
    try:
        return AESGCM(key).decrypt(nonce, sealed, associated_data)
    except InvalidTag as exc:
        raise AeAuthFailure("ciphertext failed authentication") from exc


# ---------------------------------------------------------------------------
# Signatures: Schnorr over the ambient group, deterministic nonce, with the
# signer's public key folded into the challenge.


def ds_sign(group: GroupSpec, sk: int, message: bytes) -> bytes:
    pk = group.exp_g(sk)
    nonce = hash_to_scalar(
        group, group.encode_scalar(sk) + message, domain=b"ds/nonce"
    )
    commitment = group.exp_g(nonce)
    challenge = _ds_challenge(group, commitment, pk, message)
    s = (nonce + challenge * sk) % group.q
    return group.encode_scalar(challenge) + group.encode_scalar(s)


def ds_verify(group: GroupSpec, pk: int, signature: bytes, message: bytes) -> bool:
    """Check a signature; malformed input rejects rather than raising."""
    width = group.scalar_bytes
    if len(signature) != 2 * width or not group.is_element(pk):
        return False
    try:
        challenge = group.decode_scalar(signature[:width])
        s = group.decode_scalar(signature[width:])
    except ValueError:
        return False
    commitment = group.mul(group.exp_g(s), group.exp(pk, (-challenge) % group.q))
    return _ds_challenge(group, commitment, pk, message) == challenge


def _ds_challenge(group: GroupSpec, commitment: int, pk: int, message: bytes) -> int:
    data = group.encode_element(commitment) + group.encode_element(pk) + message
    return hash_to_scalar(group, data, domain=b"ds/challenge")


def online_message(client_id: int, t: int) -> bytes:
    """Canonical liveness message a client signs for iteration t."""
    return b"online" + struct.pack("<Q", client_id) + encode_iteration(t)


# ---------------------------------------------------------------------------
# Merkle accumulator over public key records.


@dataclass(frozen=True)
class MerkleCommitment:
    root: bytes
    count: int
    levels: Tuple[Tuple[bytes, ...], ...]


def pk_record(group: GroupSpec, party_id: int, public_keys: Sequence[int]) -> bytes:
    """Leaf preimage: party id followed by that party's three public keys."""
    parts = [struct.pack("<Q", party_id)]
    parts.extend(group.encode_element(pk) for pk in public_keys)
    return b"".join(parts)


def merkle_commit(leaves: Sequence[bytes]) -> MerkleCommitment:
    """Binary tree over hashed leaves; odd levels duplicate their last node."""
    if not leaves:
        raise ValueError("cannot commit to an empty leaf list")
    level = [hashlib.sha256(leaf).digest() for leaf in leaves]
    levels = [tuple(level)]
    while len(level) > 1:
        if len(level) % 2:
            level = level + [level[-1]]
        level = [
            hashlib.sha256(level[i] + level[i + 1]).digest()
            for i in range(0, len(level), 2)
        ]
        levels.append(tuple(level))
    return MerkleCommitment(root=level[0], count=len(leaves), levels=tuple(levels))


def merkle_prove(commitment: MerkleCommitment, index: int) -> List[bytes]:
    if not 0 <= index < commitment.count:
        raise InvalidIndex(f"leaf index {index} out of range for {commitment.count} leaves")
    proof = []
    i = index
    for level in commitment.levels[:-1]:
        sibling = i ^ 1
        proof.append(level[sibling] if sibling < len(level) else level[i])
        i //= 2
    return proof


def merkle_verify(root: bytes, leaf: bytes, index: int, proof: Sequence[bytes]) -> bool:
    if index < 0:
        return False
    node = hashlib.sha256(leaf).digest()
    i = index
    for sibling in proof:
        if i % 2 == 0:
            node = hashlib.sha256(node + sibling).digest()
        else:
            node = hashlib.sha256(sibling + node).digest()
        i //= 2
    return node == root
