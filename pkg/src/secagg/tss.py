"""Threshold-signature cross-check on the survivor and dropout sets.

An alternative to sealing each response under a blinded key: before any
seed material moves, the committee threshold-signs the survivor set and
the dropout set. Each master-key holder answers a request with partial
signatures on both sets, the server combines a threshold of partials
into two full signatures, and every decryptor releases its seed payload
in the clear only after checking those signatures against the master
public key. A server that equivocates cannot gather a threshold of
partials over any one pair of sets, so no full signature exists and
nothing is released. The price is one extra message flow per iteration.

Partial signatures live in the same group as everything else, so partial
and full verification both reduce to checking a Diffie-Hellman relation.
That check is not directly computable in a group where decisional
Diffie-Hellman is hard; it is pluggable here. DlogScanVerifier brute
forces toy groups, KnownExponentVerifier answers from exponents a test
harness already holds, and a deployment on a pairing-friendly curve
would supply a pairing-based backend instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    CombineReject,
    ConsistencyAbort,
    InsufficientShares,
    InvalidConfig,
    VerifyUnavailable,
)
from .groups import (
    GroupSpec,
    encode_iteration,
    lagrange_coefficients,
    map_to_point,
)
from .protocol import (
    CollectResult,
    CommitteeView,
    DecryptorState,
    RoundConfig,
    _decode_payload_elements,
    _dropout_edges,
    decryptor_check_request,
    decryptor_seed_elements,
    unmask_from_elements,
)
from .wire import DecResp, TssFull, TssPart, TssReq, encode_id_set

__all__ = [
    "survivor_message",
    "dropout_message",
    "tss_hash",
    "tss_sign_point",
    "tss_sign_part",
    "VerifierBackend",
    "DlogScanVerifier",
    "KnownExponentVerifier",
    "pk_shares_from_commitments",
    "tss_combine",
    "tss_verify_full",
    "TssSession",
    "tss_handle_request",
    "tss_handle_full",
    "server_crosscheck_alt",
]


def survivor_message(survivors: Iterable[int], t: int) -> bytes:
    return b"survivors" + encode_id_set(survivors) + encode_iteration(t)


def dropout_message(dropouts: Iterable[int], t: int) -> bytes:
    return b"dropouts" + encode_id_set(dropouts) + encode_iteration(t)


def tss_hash(group: GroupSpec, message: bytes) -> int:
    """Hash a message onto the group, the base point for all signatures."""
    return map_to_point(group, message, domain=b"tss")


def tss_sign_point(group: GroupSpec, share_value: int, point: int) -> int:
    return group.exp(point, share_value)


def tss_sign_part(group: GroupSpec, share_value: int, message: bytes) -> int:
    """One holder's partial signature: the hash point raised to its share."""
    return tss_sign_point(group, share_value, tss_hash(group, message))


class VerifierBackend:
    """Decides whether (base, power, g_power) is a Diffie-Hellman triple.

    Concretely: whether some x satisfies power = base^x and g_power = g^x.
    """

    def ddh_holds(self, group: GroupSpec, base: int, power: int, g_power: int) -> bool:
        raise NotImplementedError


class DlogScanVerifier(VerifierBackend):
    """Exhaustive discrete-log search. Only sane for toy group orders."""

    def __init__(self, max_order: int = 1 << 22):
        self.max_order = max_order

    def ddh_holds(self, group: GroupSpec, base: int, power: int, g_power: int) -> bool:
        if group.q > self.max_order:
            raise InvalidConfig(
                f"group order {group.q} is too large to scan; use another backend"
            )
        accum = group.identity
        for x in range(group.q):
            if accum == g_power:
                return group.exp(base, x) == power
            accum = group.mul(accum, group.g)
        return False


class KnownExponentVerifier(VerifierBackend):
    """Answers from a table of public keys whose exponents are known.

    A measurement harness owns every party's secrets, so it can hand the
    verifier the discrete logs outright. This stands in for a pairing
    check on groups that have no pairing; it is not part of the protocol
    itself and never appears on a real deployment's trust path.
    """

    def __init__(self, exponents: Mapping[int, int]):
        self.exponents = dict(exponents)

    def ddh_holds(self, group: GroupSpec, base: int, power: int, g_power: int) -> bool:
        x = self.exponents.get(g_power)
        if x is None:
            raise VerifyUnavailable(
                "no known exponent for this public key; cannot decide the triple"
            )
        return group.exp(base, x) == power


def pk_shares_from_commitments(
    group: GroupSpec,
    commitments: Mapping[int, Sequence[int]],
    positions: Iterable[int],
) -> Dict[int, int]:
    """Public key of each holder's master-key share, from DKG commitments.

    g^share(pos) is the product over dealers of their commitment
    polynomials evaluated in the exponent at pos, folded Horner style.
    """
    out: Dict[int, int] = {}
    for pos in positions:
        acc = group.identity
        for coeffs in commitments.values():
            value = group.identity
            for commitment in reversed(coeffs):
                value = group.mul(group.exp(value, pos), commitment)
            acc = group.mul(acc, value)
        out[pos] = acc
    return out


def tss_combine(
    group: GroupSpec,
    message: bytes,
    partials: Mapping[int, int],
    kappa: int,
    verifier: VerifierBackend,
    pk_shares: Mapping[int, int],
) -> int:
    """Combine partial signatures keyed by position into a full signature.

    The lowest kappa positions are used; each of those partials is
    checked against its holder's share public key first and a failure
    rejects the whole combination.
    """
    if len(partials) < kappa:
        raise InsufficientShares(
            f"{len(partials)} partial signatures, need {kappa}"
        )
    point = tss_hash(group, message)
    used = sorted(partials)[:kappa]
    for pos in used:
        pk = pk_shares.get(pos)
        if pk is None:
            raise CombineReject(f"no share public key for position {pos}")
        if not verifier.ddh_holds(group, point, partials[pos], pk):
            raise CombineReject(f"partial signature at position {pos} does not verify")
    coeffs = lagrange_coefficients(used, group.q)
    signature = group.identity
    for pos in used:
        signature = group.mul(signature, group.exp(partials[pos], coeffs[pos]))
    return signature


def tss_verify_full(
    group: GroupSpec,
    message: bytes,
    signature: int,
    mpk: int,
    verifier: VerifierBackend,
) -> bool:
    return verifier.ddh_holds(group, tss_hash(group, message), signature, mpk)


@dataclass
class TssSession:
    """What a decryptor remembers between the request and the release."""

    state: DecryptorState
    req: TssReq
    participants: Tuple[int, ...]


def tss_handle_request(
    group: GroupSpec,
    state: DecryptorState,
    req: TssReq,
    config: RoundConfig,
) -> Tuple[TssSession, Optional[TssPart]]:
    """Gate the request, then sign both sets if this member holds a share.

    Members without a master-key share (seated after the key was dealt)
    still validate the request and wait for the full signatures; they
    just contribute no partial.
    """
    participants = decryptor_check_request(group, state, req, config)
    session = TssSession(state=state, req=req, participants=participants)
    if state.msk_share is None:
        return session, None
    part = TssPart(
        sender=state.id,
        iteration=req.iteration,
        survivor_part=tss_sign_part(
            group, state.msk_share.value, survivor_message(req.survivors, req.iteration)
        ),
        dropout_part=tss_sign_part(
            group, state.msk_share.value, dropout_message(req.dropouts, req.iteration)
        ),
    )
    return session, part


def tss_handle_full(
    group: GroupSpec,
    session: TssSession,
    full: TssFull,
    verifier: VerifierBackend,
    config: RoundConfig,
) -> DecResp:
    """Check the combined signatures, then release the payload in the clear."""
    state, req = session.state, session.req
    if full.iteration != req.iteration:
        raise ConsistencyAbort("full signature is for a different iteration")
    if not tss_verify_full(
        group, survivor_message(req.survivors, req.iteration),
        full.survivor_sig, state.mpk, verifier,
    ):
        raise ConsistencyAbort("survivor-set signature does not verify")
    if not tss_verify_full(
        group, dropout_message(req.dropouts, req.iteration),
        full.dropout_sig, state.mpk, verifier,
    ):
        raise ConsistencyAbort("dropout-set signature does not verify")
    payload = decryptor_seed_elements(group, state, req, config, session.participants)
    return DecResp(sender=state.id, iteration=req.iteration, seed_box=payload)


def server_crosscheck_alt(
    group: GroupSpec,
    view: CommitteeView,
    collect: CollectResult,
    states: Mapping[int, DecryptorState],
    config: RoundConfig,
    verifier: VerifierBackend,
    pk_shares: Optional[Mapping[int, int]] = None,
) -> np.ndarray:
    """Run the whole signature-gated exchange in place and finish the sum.

    Three flows: request out, partials back and combined, full signatures
    out and payloads back. Any decryptor rejection or combination failure
    surfaces as ConsistencyAbort.
    """
    req = TssReq(
        iteration=config.iteration,
        digest=config.model_digest,
        survivors=collect.survivors,
        dropouts=collect.dropouts,
        signatures=collect.signatures,
    )
    sessions: Dict[int, TssSession] = {}
    partials_us: Dict[int, int] = {}
    partials_ud: Dict[int, int] = {}
    for member, state in states.items():
        session, part = tss_handle_request(group, state, req, config)
        sessions[member] = session
        if part is not None:
            pos = view.position(member)
            partials_us[pos] = part.survivor_part
            partials_ud[pos] = part.dropout_part

    if pk_shares is None:
        commitments = next(
            (s.dkg_commitments for s in states.values() if s.dkg_commitments), None
        )
        if commitments is None:
            raise ConsistencyAbort("no commitments available to verify partials")
        pk_shares = pk_shares_from_commitments(group, commitments, partials_us.keys())
    try:
        survivor_sig = tss_combine(
            group,
            survivor_message(collect.survivors, config.iteration),
            partials_us, view.kappa, verifier, pk_shares,
        )
        dropout_sig = tss_combine(
            group,
            dropout_message(collect.dropouts, config.iteration),
            partials_ud, view.kappa, verifier, pk_shares,
        )
    except (CombineReject, InsufficientShares) as exc:
        raise ConsistencyAbort(f"could not assemble full signatures: {exc}") from exc

    full = TssFull(
        iteration=config.iteration, survivor_sig=survivor_sig, dropout_sig=dropout_sig
    )
    participants = config.participants()
    degree = config.degree(len(participants))
    survivors, dropouts = collect.survivors, collect.dropouts
    slots = len(survivors) + len(
        _dropout_edges(
            config.model_digest, config.iteration, participants,
            survivors, dropouts, degree,
        )
    )
    opened: Dict[int, List[int]] = {}
    for member in sorted(sessions):
        resp = tss_handle_full(group, sessions[member], full, verifier, config)
        elements = _decode_payload_elements(group, resp.seed_box, slots)
        if elements is not None:
            opened[view.position(member)] = elements
    return unmask_from_elements(group, view, opened, collect, config)
