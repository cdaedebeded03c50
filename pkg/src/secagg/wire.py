"""Wire formats for every message the protocol exchanges.

Every message travels in an envelope of type byte, little-endian 4-byte
body length, body. Bodies are built from a handful of primitives: ids
are 8-byte little-endian, iteration counters use the same 8-byte shape,
group elements and scalars use the fixed-length encodings of the active
GroupSpec, and id sets use the canonical form (4-byte count, then ids
ascending). Because the canonical set encoding doubles as associated
data for the seed boxes and as input to the set-binding scalar, both
sides must produce it bit for bit; the decoder therefore rejects any
set that is not strictly ascending rather than re-sorting.

Decoding is strict across the board: every parser consumes its body
exactly and raises ValueError on anything short, long, or malformed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import ClassVar, Dict, Iterable, Sequence, Tuple, Type

import numpy as np

from .groups import GroupSpec, encode_iteration
from .sharing import Share, decode_share, encode_share

__all__ = [
    "MSG_PKCOMMIT",
    "MSG_ROOTSIG",
    "MSG_SEEDSHARE",
    "MSG_DKGDEAL",
    "MSG_MODEL",
    "MSG_REPORT",
    "MSG_CHECKREQ",
    "MSG_DECRESP",
    "MSG_TSSREQ",
    "MSG_TSSPART",
    "MSG_TSSFULL",
    "frame",
    "deframe",
    "encode_id_set",
    "decode_id_set",
    "canonical_sets",
    "encode_seed_payload",
    "decode_seed_payload",
    "encode_message",
    "decode_message",
    "PkCommit",
    "RootSig",
    "SeedShare",
    "DkgDealMsg",
    "Model",
    "Report",
    "CheckReq",
    "DecResp",
    "TssReq",
    "TssPart",
    "TssFull",
]

MSG_PKCOMMIT = 0x01
MSG_ROOTSIG = 0x02
MSG_SEEDSHARE = 0x03
MSG_DKGDEAL = 0x04
MSG_MODEL = 0x05
MSG_REPORT = 0x06
MSG_CHECKREQ = 0x07
MSG_DECRESP = 0x08
MSG_TSSREQ = 0x09
MSG_TSSPART = 0x0A
MSG_TSSFULL = 0x0B

_HEADER = struct.Struct("<BI")
_ID = struct.Struct("<Q")
_COUNT = struct.Struct("<I")

DIGEST_BYTES = 32


# ---------------------------------------------------------------------------
# envelope framing


def frame(msg_type: int, body: bytes) -> bytes:
    if not 0 <= msg_type <= 0xFF:
        raise ValueError(f"message type {msg_type} does not fit in one byte")
    return _HEADER.pack(msg_type, len(body)) + body


def deframe(data: bytes) -> Tuple[int, bytes]:
    """Split an envelope into (type, body), rejecting length mismatches."""
    if len(data) < _HEADER.size:
        raise ValueError(f"envelope too short: {len(data)} bytes")
    msg_type, body_len = _HEADER.unpack_from(data)
    if len(data) != _HEADER.size + body_len:
        raise ValueError(
            f"envelope length mismatch: header says {body_len}, "
            f"got {len(data) - _HEADER.size} body bytes"
        )
    return msg_type, data[_HEADER.size :]


# ---------------------------------------------------------------------------
# body primitives

# Parsers walk the body with an explicit offset; _take is the one place
# that checks bounds, so every field read is short-proof.


def _take(body: bytes, offset: int, n: int) -> Tuple[bytes, int]:
    if offset + n > len(body):
        raise ValueError("message body truncated")
    return body[offset : offset + n], offset + n


def _take_id(body: bytes, offset: int) -> Tuple[int, int]:
    raw, offset = _take(body, offset, _ID.size)
    return _ID.unpack(raw)[0], offset


def _take_count(body: bytes, offset: int) -> Tuple[int, int]:
    raw, offset = _take(body, offset, _COUNT.size)
    return _COUNT.unpack(raw)[0], offset


def _take_element(group: GroupSpec, body: bytes, offset: int) -> Tuple[int, int]:
    raw, offset = _take(body, offset, group.element_bytes)
    return group.decode_element(raw), offset


def _done(body: bytes, offset: int) -> None:
    if offset != len(body):
        raise ValueError(f"{len(body) - offset} trailing bytes after message body")


def encode_id_set(ids: Iterable[int]) -> bytes:
    """Canonical id-set encoding: 4-byte count, then the ids ascending."""
    ordered = sorted(ids)
    out = [_COUNT.pack(len(ordered))]
    prev = 0
    for i in ordered:
        if i < 1:
            raise ValueError(f"id {i} is not a positive party id")
        if i == prev:
            raise ValueError(f"duplicate id {i} in set")
        prev = i
        out.append(_ID.pack(i))
    return b"".join(out)


def decode_id_set(body: bytes, offset: int) -> Tuple[Tuple[int, ...], int]:
    count, offset = _take_count(body, offset)
    ids = []
    prev = 0
    for _ in range(count):
        i, offset = _take_id(body, offset)
        if i <= prev:
            raise ValueError("id set is not strictly ascending")
        prev = i
        ids.append(i)
    return tuple(ids), offset


def canonical_sets(survivors: Iterable[int], dropouts: Iterable[int]) -> bytes:
    """The byte string both sides hash and authenticate to pin a set view."""
    return encode_id_set(survivors) + encode_id_set(dropouts)


# ---------------------------------------------------------------------------
# seed-share payload (the plaintext inside a SeedShare box)

# One box per (client, decryptor) pair carries the decryptor's share of
# every seed the client deals: the self seed first under the sentinel
# peer id 0, then one pairwise seed per peer in ascending peer order.


def encode_seed_payload(
    group: GroupSpec,
    owner: int,
    recipient: int,
    entries: Sequence[Tuple[int, Share]],
) -> bytes:
    out = [_ID.pack(owner), _ID.pack(recipient), _COUNT.pack(len(entries))]
    prev = -1
    for peer, share in entries:
        if peer <= prev:
            raise ValueError(
                "seed payload entries must list the self seed (peer 0) "
                "first, then peers strictly ascending"
            )
        prev = peer
        out.append(_ID.pack(peer))
        out.append(encode_share(group, share))
    return b"".join(out)


def decode_seed_payload(
    group: GroupSpec, data: bytes
) -> Tuple[int, int, Tuple[Tuple[int, Share], ...]]:
    offset = 0
    owner, offset = _take_id(data, offset)
    recipient, offset = _take_id(data, offset)
    count, offset = _take_count(data, offset)
    share_width = 1 + 2 * group.scalar_bytes
    entries = []
    prev = -1
    for _ in range(count):
        peer, offset = _take_id(data, offset)
        if peer <= prev:
            raise ValueError("seed payload entries out of order")
        prev = peer
        raw, offset = _take(data, offset, share_width)
        entries.append((peer, decode_share(group, raw)))
    _done(data, offset)
    return owner, recipient, tuple(entries)


# ---------------------------------------------------------------------------
# messages


@dataclass(frozen=True)
class PkCommit:
    """A party's three public keys, sent to the server before iteration 0."""

    TYPE: ClassVar[int] = MSG_PKCOMMIT
    sender: int
    public_keys: Tuple[int, int, int]

    def encode_body(self, group: GroupSpec) -> bytes:
        if len(self.public_keys) != 3:
            raise ValueError("a key commitment carries exactly three public keys")
        return _ID.pack(self.sender) + b"".join(
            group.encode_element(pk) for pk in self.public_keys
        )

    @classmethod
    def decode_body(cls, group: GroupSpec, body: bytes) -> "PkCommit":
        offset = 0
        sender, offset = _take_id(body, offset)
        pks = []
        for _ in range(3):
            pk, offset = _take_element(group, body, offset)
            pks.append(pk)
        _done(body, offset)
        return cls(sender=sender, public_keys=(pks[0], pks[1], pks[2]))


@dataclass(frozen=True)
class RootSig:
    """Server's signed roster commitment: Merkle root plus every record.

    Records are (party id, three public keys) in roster order, the same
    preimages the tree was built over, so each recipient can recompute
    the root and check its own row before trusting anyone's keys.
    """

    TYPE: ClassVar[int] = MSG_ROOTSIG
    root: bytes
    signature: bytes
    records: Tuple[Tuple[int, Tuple[int, int, int]], ...]

    def encode_body(self, group: GroupSpec) -> bytes:
        if len(self.root) != DIGEST_BYTES:
            raise ValueError("root must be a 32-byte digest")
        if len(self.signature) != 2 * group.scalar_bytes:
            raise ValueError("bad signature length")
        out = [self.root, self.signature, _COUNT.pack(len(self.records))]
        for party_id, pks in self.records:
            out.append(_ID.pack(party_id))
            out.extend(group.encode_element(pk) for pk in pks)
        return b"".join(out)

    @classmethod
    def decode_body(cls, group: GroupSpec, body: bytes) -> "RootSig":
        offset = 0
        root, offset = _take(body, offset, DIGEST_BYTES)
        signature, offset = _take(body, offset, 2 * group.scalar_bytes)
        count, offset = _take_count(body, offset)
        records = []
        for _ in range(count):
            party_id, offset = _take_id(body, offset)
            pks = []
            for _ in range(3):
                pk, offset = _take_element(group, body, offset)
                pks.append(pk)
            records.append((party_id, (pks[0], pks[1], pks[2])))
        _done(body, offset)
        return cls(root=bytes(root), signature=bytes(signature), records=tuple(records))


@dataclass(frozen=True)
class SeedShare:
    """An encrypted seed-payload box from one client to one decryptor."""

    TYPE: ClassVar[int] = MSG_SEEDSHARE
    sender: int
    recipient: int
    box: bytes

    def encode_body(self, group: GroupSpec) -> bytes:
        return _ID.pack(self.sender) + _ID.pack(self.recipient) + self.box

    @classmethod
    def decode_body(cls, group: GroupSpec, body: bytes) -> "SeedShare":
        offset = 0
        sender, offset = _take_id(body, offset)
        recipient, offset = _take_id(body, offset)
        return cls(sender=sender, recipient=recipient, box=bytes(body[offset:]))


@dataclass(frozen=True)
class DkgDealMsg:
    """One dealer's contribution to a recipient: commitments and a share box."""

    TYPE: ClassVar[int] = MSG_DKGDEAL
    dealer: int
    recipient: int
    commitments: Tuple[int, ...]
    box: bytes

    def encode_body(self, group: GroupSpec) -> bytes:
        out = [
            _ID.pack(self.dealer),
            _ID.pack(self.recipient),
            _COUNT.pack(len(self.commitments)),
        ]
        out.extend(group.encode_element(c) for c in self.commitments)
        out.append(self.box)
        return b"".join(out)

    @classmethod
    def decode_body(cls, group: GroupSpec, body: bytes) -> "DkgDealMsg":
        offset = 0
        dealer, offset = _take_id(body, offset)
        recipient, offset = _take_id(body, offset)
        count, offset = _take_count(body, offset)
        commitments = []
        for _ in range(count):
            c, offset = _take_element(group, body, offset)
            commitments.append(c)
        return cls(
            dealer=dealer,
            recipient=recipient,
            commitments=tuple(commitments),
            box=bytes(body[offset:]),
        )


@dataclass(frozen=True)
class Model:
    """The server's model announcement opening an iteration."""

    TYPE: ClassVar[int] = MSG_MODEL
    iteration: int
    digest: bytes

    def encode_body(self, group: GroupSpec) -> bytes:
        if len(self.digest) != DIGEST_BYTES:
            raise ValueError("model digest must be 32 bytes")
        return encode_iteration(self.iteration) + self.digest

    @classmethod
    def decode_body(cls, group: GroupSpec, body: bytes) -> "Model":
        offset = 0
        iteration, offset = _take_id(body, offset)
        digest, offset = _take(body, offset, DIGEST_BYTES)
        _done(body, offset)
        return cls(iteration=iteration, digest=bytes(digest))


@dataclass(frozen=True, eq=False)
class Report:
    """A client's masked vector with its liveness signature.

    Vector entries are 32-bit words, little-endian on the wire. Equality
    is deliberately left off the dataclass because ndarray comparison is
    elementwise; compare fields explicitly where needed.
    """

    TYPE: ClassVar[int] = MSG_REPORT
    sender: int
    iteration: int
    vector: np.ndarray
    signature: bytes

    def encode_body(self, group: GroupSpec) -> bytes:
        vec = np.ascontiguousarray(self.vector, dtype="<u4")
        if vec.ndim != 1:
            raise ValueError("report vector must be one-dimensional")
        if len(self.signature) != 2 * group.scalar_bytes:
            raise ValueError("bad signature length")
        return (
            _ID.pack(self.sender)
            + encode_iteration(self.iteration)
            + _COUNT.pack(vec.shape[0])
            + vec.tobytes()
            + self.signature
        )

    @classmethod
    def decode_body(cls, group: GroupSpec, body: bytes) -> "Report":
        offset = 0
        sender, offset = _take_id(body, offset)
        iteration, offset = _take_id(body, offset)
        count, offset = _take_count(body, offset)
        raw, offset = _take(body, offset, 4 * count)
        vector = np.frombuffer(raw, dtype="<u4").copy()
        signature, offset = _take(body, offset, 2 * group.scalar_bytes)
        _done(body, offset)
        return cls(
            sender=sender,
            iteration=iteration,
            vector=vector,
            signature=bytes(signature),
        )


def _encode_sig_pairs(group: GroupSpec, pairs) -> bytes:
    out = [_COUNT.pack(len(pairs))]
    for party_id, sig in pairs:
        if len(sig) != 2 * group.scalar_bytes:
            raise ValueError("bad signature length")
        out.append(_ID.pack(party_id))
        out.append(sig)
    return b"".join(out)


def _decode_sig_pairs(group: GroupSpec, body: bytes, offset: int):
    count, offset = _take_count(body, offset)
    pairs = []
    for _ in range(count):
        party_id, offset = _take_id(body, offset)
        sig, offset = _take(body, offset, 2 * group.scalar_bytes)
        pairs.append((party_id, bytes(sig)))
    return tuple(pairs), offset


@dataclass(frozen=True)
class CheckReq:
    """Server's combined consistency-check-and-unmask request.

    Carries the iteration, the model digest the reports answered, the
    claimed survivor and dropout sets, and each survivor's liveness
    signature so decryptors can audit the claim before helping.
    """

    TYPE: ClassVar[int] = MSG_CHECKREQ
    iteration: int
    digest: bytes
    survivors: Tuple[int, ...]
    dropouts: Tuple[int, ...]
    signatures: Tuple[Tuple[int, bytes], ...]

    def encode_body(self, group: GroupSpec) -> bytes:
        if len(self.digest) != DIGEST_BYTES:
            raise ValueError("model digest must be 32 bytes")
        return (
            encode_iteration(self.iteration)
            + self.digest
            + encode_id_set(self.survivors)
            + encode_id_set(self.dropouts)
            + _encode_sig_pairs(group, self.signatures)
        )

    @classmethod
    def decode_body(cls, group: GroupSpec, body: bytes) -> "CheckReq":
        offset = 0
        iteration, offset = _take_id(body, offset)
        digest, offset = _take(body, offset, DIGEST_BYTES)
        survivors, offset = decode_id_set(body, offset)
        dropouts, offset = decode_id_set(body, offset)
        signatures, offset = _decode_sig_pairs(group, body, offset)
        _done(body, offset)
        return cls(
            iteration=iteration,
            digest=bytes(digest),
            survivors=survivors,
            dropouts=dropouts,
            signatures=signatures,
        )


@dataclass(frozen=True)
class DecResp:
    """A decryptor's answer: seed box, blinded box key, decryption shares.

    In the combined mode the box is authenticated ciphertext and the
    blinded key element rides along (flag bit 0 set). In the signature
    cross-check mode the box is sent in the clear after the check has
    already passed, so the flag is clear and no key element follows.
    Shares are (recipient id, element) pairs helping the server unblind
    the other decryptors' box keys.
    """

    TYPE: ClassVar[int] = MSG_DECRESP
    sender: int
    iteration: int
    seed_box: bytes
    blinded_key: int = 0
    shares: Tuple[Tuple[int, int], ...] = ()

    @property
    def has_blinded_key(self) -> bool:
        return self.blinded_key != 0

    def encode_body(self, group: GroupSpec) -> bytes:
        flags = 1 if self.blinded_key else 0
        out = [
            _ID.pack(self.sender),
            encode_iteration(self.iteration),
            bytes([flags]),
            _COUNT.pack(len(self.seed_box)),
            self.seed_box,
        ]
        if self.blinded_key:
            out.append(group.encode_element(self.blinded_key))
        out.append(_COUNT.pack(len(self.shares)))
        for recipient, element in self.shares:
            out.append(_ID.pack(recipient))
            out.append(group.encode_element(element))
        return b"".join(out)

    @classmethod
    def decode_body(cls, group: GroupSpec, body: bytes) -> "DecResp":
        offset = 0
        sender, offset = _take_id(body, offset)
        iteration, offset = _take_id(body, offset)
        raw, offset = _take(body, offset, 1)
        flags = raw[0]
        if flags not in (0, 1):
            raise ValueError(f"unknown response flags {flags:#x}")
        box_len, offset = _take_count(body, offset)
        seed_box, offset = _take(body, offset, box_len)
        blinded_key = 0
        if flags & 1:
            blinded_key, offset = _take_element(group, body, offset)
        count, offset = _take_count(body, offset)
        shares = []
        for _ in range(count):
            recipient, offset = _take_id(body, offset)
            element, offset = _take_element(group, body, offset)
            shares.append((recipient, element))
        _done(body, offset)
        return cls(
            sender=sender,
            iteration=iteration,
            seed_box=bytes(seed_box),
            blinded_key=blinded_key,
            shares=tuple(shares),
        )


@dataclass(frozen=True)
class TssReq(CheckReq):
    """Set-consistency request in the threshold-signature mode.

    Same body as CheckReq under a different type byte; decryptors answer
    with partial signatures instead of immediate seed material.
    """

    TYPE: ClassVar[int] = MSG_TSSREQ


@dataclass(frozen=True)
class TssPart:
    """One decryptor's partial signatures over the survivor and dropout sets."""

    TYPE: ClassVar[int] = MSG_TSSPART
    sender: int
    iteration: int
    survivor_part: int
    dropout_part: int

    def encode_body(self, group: GroupSpec) -> bytes:
        return (
            _ID.pack(self.sender)
            + encode_iteration(self.iteration)
            + group.encode_element(self.survivor_part)
            + group.encode_element(self.dropout_part)
        )

    @classmethod
    def decode_body(cls, group: GroupSpec, body: bytes) -> "TssPart":
        offset = 0
        sender, offset = _take_id(body, offset)
        iteration, offset = _take_id(body, offset)
        survivor_part, offset = _take_element(group, body, offset)
        dropout_part, offset = _take_element(group, body, offset)
        _done(body, offset)
        return cls(
            sender=sender,
            iteration=iteration,
            survivor_part=survivor_part,
            dropout_part=dropout_part,
        )


@dataclass(frozen=True)
class TssFull:
    """The combined threshold signatures the server broadcasts back."""

    TYPE: ClassVar[int] = MSG_TSSFULL
    iteration: int
    survivor_sig: int
    dropout_sig: int

    def encode_body(self, group: GroupSpec) -> bytes:
        return (
            encode_iteration(self.iteration)
            + group.encode_element(self.survivor_sig)
            + group.encode_element(self.dropout_sig)
        )

    @classmethod
    def decode_body(cls, group: GroupSpec, body: bytes) -> "TssFull":
        offset = 0
        iteration, offset = _take_id(body, offset)
        survivor_sig, offset = _take_element(group, body, offset)
        dropout_sig, offset = _take_element(group, body, offset)
        _done(body, offset)
        return cls(
            iteration=iteration,
            survivor_sig=survivor_sig,
            dropout_sig=dropout_sig,
        )


_REGISTRY: Dict[int, Type] = {
    cls.TYPE: cls
    for cls in (
        PkCommit,
        RootSig,
        SeedShare,
        DkgDealMsg,
        Model,
        Report,
        CheckReq,
        DecResp,
        TssReq,
        TssPart,
        TssFull,
    )
}


def encode_message(group: GroupSpec, msg) -> bytes:
    """Envelope any message dataclass for the wire."""
    return frame(msg.TYPE, msg.encode_body(group))


def decode_message(group: GroupSpec, data: bytes):
    """Parse an envelope into the matching message dataclass."""
    msg_type, body = deframe(data)
    cls = _REGISTRY.get(msg_type)
    if cls is None:
        raise ValueError(f"unknown message type {msg_type:#04x}")
    return cls.decode_body(group, body)
