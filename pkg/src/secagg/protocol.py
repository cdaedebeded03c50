"""Client, decryptor, and server operations for masked-sum aggregation.

Pre-round, each client agrees on a pairwise seed with every peer, draws a
self seed, and deals threshold shares of all of them to the decryptor
committee inside per-decryptor encrypted boxes. The committee also runs a
DKG so its members hold shares of a master secret whose public key mpk is
known to everyone. Nothing here is ever re-sent: iterations reuse the
stored shares.

Per iteration, each selected client masks its vector with a self mask and
signed pairwise masks over its neighbor edges, derived from the common
round generator g_t, and reports it. The server forwards the survivor and
dropout sets to the decryptors, each of which answers with exactly the
seed material those sets call for, wrapped so the server can open it only
if at least a threshold of decryptors answered for the same view of the
sets: each response's payload is sealed under a fresh key k_u, and k_u is
blinded by mpk raised to a hash of the claimed sets, removable only by
combining a threshold of the other decryptors' matching decryption
shares. A wrong or split view makes every recovered key junk and the
payload's authenticated encryption rejects it.

Transport-box nonce discipline: boxes between a fixed pair of parties use
counters 0/1 for seed-share payloads (low id sends on 0) and 2/3 for DKG
deal payloads, so no (key, nonce) pair ever repeats. Seed payload boxes
in responses use counter t under single-use keys.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .crypto import (
    KeyTriple,
    ae_decrypt,
    ae_encrypt,
    ds_sign,
    ds_verify,
    ka_agree,
    merkle_commit,
    online_message,
    pk_record,
)
from .errors import (
    AeAuthFailure,
    ConsistencyAbort,
    DkgComplaint,
    InvalidConfig,
    MissingSeed,
    MissingShare,
    NotParticipant,
    RoundAbort,
)
from .groups import (
    GroupSpec,
    derive_round_generator,
    encode_iteration,
    hash_to_scalar,
    interpolate_in_exponent,
    lagrange_coefficients,
    prg_expand,
)
from .sharing import (
    AccessStructure,
    DealerState,
    DkgDeal,
    Share,
    decode_share,
    dkg_deal,
    dkg_finalize,
    encode_share,
    ml_deal_first_level,
    ml_extend_level,
)
from .wire import (
    CheckReq,
    DecResp,
    DkgDealMsg,
    Report,
    RootSig,
    SeedShare,
    canonical_sets,
    decode_seed_payload,
    encode_seed_payload,
)

__all__ = [
    "RoundConfig",
    "ClientState",
    "DecryptorState",
    "CommitteeView",
    "CollectResult",
    "choose_set_static",
    "choose_set_dynamic",
    "find_neighbors",
    "build_rootsig",
    "verify_roster",
    "pre_round_client",
    "new_decryptor_state",
    "decryptor_ingest_seed_share",
    "dkg_deal_messages",
    "decryptor_ingest_dkg",
    "decryptor_finish_dkg",
    "client_report",
    "server_collect",
    "decryptor_check_request",
    "decryptor_seed_elements",
    "decryptor_respond",
    "recover_temp_key",
    "open_seed_box",
    "unmask_from_elements",
    "server_unmask",
    "client_note_roster",
    "decryptor_note_extension",
    "client_extend_dealings",
    "committee_view",
]

DEFAULT_DEGREE = 16

_COUNTER_SEEDSHARE = 0
_COUNTER_DKGDEAL = 1


def _hash_int(data: bytes) -> int:
    return int.from_bytes(hashlib.sha256(data).digest(), "big")


def _transport_counter(kind: int, sender: int, receiver: int) -> int:
    """Nonce counter for a pairwise transport box; see the module docstring."""
    return 2 * kind + (0 if sender <= receiver else 1)


def _temp_key(group: GroupSpec, k: int) -> bytes:
    return hashlib.sha256(b"tempkey" + group.encode_element(k)).digest()[:16]


def _set_scalar(group: GroupSpec, survivors: Iterable[int], dropouts: Iterable[int]) -> int:
    return hash_to_scalar(group, canonical_sets(survivors, dropouts), domain=b"setcheck")


# ---------------------------------------------------------------------------
# participant selection


def choose_set_static(
    model_digest: bytes, t: int, round_size: int, total: int
) -> Tuple[int, ...]:
    """Deterministic pseudorandom round_size-subset of ids 1..total."""
    if round_size > total:
        raise InvalidConfig(f"round size {round_size} exceeds population {total}")
    rng = random.Random(_hash_int(model_digest + encode_iteration(t)))
    return tuple(sorted(rng.sample(range(1, total + 1), round_size)))


def choose_set_dynamic(
    model_digest: bytes, t: int, select_num: int, select_den: int, total: int
) -> Tuple[int, ...]:
    """Each id joins independently with probability select_num/select_den."""
    if not 0 <= select_num <= select_den or select_den < 1:
        raise InvalidConfig(
            f"selection probability {select_num}/{select_den} is not in [0, 1]"
        )
    prefix = model_digest + encode_iteration(t)
    return tuple(
        i
        for i in range(1, total + 1)
        if _hash_int(prefix + i.to_bytes(8, "little")) % select_den < select_num
    )


def find_neighbors(
    model_digest: bytes,
    t: int,
    participants: Iterable[int],
    i: int,
    expected_degree: int,
) -> Tuple[int, ...]:
    """The symmetric pseudorandom neighbor set of participant i.

    Edge presence hangs off a hash of the unordered pair, so both
    endpoints agree. Small rounds fall back to the complete graph.
    """
    ordered = sorted(participants)
    if i not in ordered:
        raise NotParticipant(f"client {i} is not selected this iteration")
    if len(ordered) <= expected_degree + 1:
        return tuple(j for j in ordered if j != i)
    modulus = -(-len(ordered) // expected_degree)
    prefix = model_digest + encode_iteration(t)
    out = []
    for j in ordered:
        if j == i:
            continue
        lo, hi = (i, j) if i < j else (j, i)
        pair = lo.to_bytes(8, "little") + hi.to_bytes(8, "little")
        if _hash_int(prefix + pair) % modulus == 0:
            out.append(j)
    return tuple(out)


# ---------------------------------------------------------------------------
# round configuration


@dataclass(frozen=True)
class RoundConfig:
    """Everything all parties must agree on before an iteration runs.

    Exactly one selection parameterization is set: round_size for the
    fixed-size mode, select_num/select_den for the probabilistic mode.
    Threshold arithmetic is exact: the rates are converted to rationals,
    so boundary cases never hinge on float rounding.
    """

    iteration: int
    model_digest: bytes
    total_clients: int
    committee_size: int
    kappa: int
    eta_c: float = 0.0
    eta_d: float = 0.0
    round_size: Optional[int] = None
    select_num: Optional[int] = None
    select_den: Optional[int] = None
    expected_degree: Optional[int] = None
    vector_len: int = 1
    abort_rule: str = "eta"

    def __post_init__(self) -> None:
        if self.iteration < 0:
            raise InvalidConfig("iteration must be nonnegative")
        if len(self.model_digest) != 32:
            raise InvalidConfig("model digest must be 32 bytes")
        if self.total_clients < 1:
            raise InvalidConfig("need at least one client")
        if not 1 <= self.committee_size:
            raise InvalidConfig("need at least one decryptor")
        if not 1 <= self.kappa <= self.committee_size:
            raise InvalidConfig(
                f"threshold {self.kappa} out of range for {self.committee_size} decryptors"
            )
        if self.vector_len < 1:
            raise InvalidConfig("vector length must be positive")
        if not 0 <= self.eta_c <= 1 or not 0 <= self.eta_d <= 1:
            raise InvalidConfig("rates must lie in [0, 1]")
        if self.abort_rule not in ("eta", "kappa"):
            raise InvalidConfig(f"unknown abort rule {self.abort_rule!r}")
        if self.expected_degree is not None and self.expected_degree < 1:
            raise InvalidConfig("expected degree must be positive")
        static = self.round_size is not None
        dynamic = self.select_num is not None or self.select_den is not None
        if static == dynamic:
            raise InvalidConfig("set exactly one of round_size or select_num/select_den")
        if static:
            if not 1 <= self.round_size <= self.total_clients:
                raise InvalidConfig(
                    f"round size {self.round_size} out of range for {self.total_clients} clients"
                )
        else:
            if self.select_num is None or self.select_den is None:
                raise InvalidConfig("dynamic selection needs both select_num and select_den")
            if self.select_den < 1 or not 0 <= self.select_num <= self.select_den:
                raise InvalidConfig(
                    f"selection probability {self.select_num}/{self.select_den} is not in [0, 1]"
                )
        lhs = 2 * self.kappa
        rhs = (1 + self._rate(self.eta_c) - self._rate(self.eta_d)) * self.committee_size
        if not lhs > rhs:
            raise InvalidConfig(
                f"2*{self.kappa} must exceed (1 + {self.eta_c} - {self.eta_d}) * "
                f"{self.committee_size}"
            )

    @staticmethod
    def _rate(value: float) -> Fraction:
        return Fraction(str(value))

    @property
    def selection(self) -> str:
        return "static" if self.round_size is not None else "dynamic"

    @property
    def eta(self) -> Fraction:
        return self._rate(self.eta_c) + self._rate(self.eta_d)

    def participants(
        self, model_digest: Optional[bytes] = None, iteration: Optional[int] = None
    ) -> Tuple[int, ...]:
        digest = self.model_digest if model_digest is None else model_digest
        t = self.iteration if iteration is None else iteration
        if self.round_size is not None:
            return choose_set_static(digest, t, self.round_size, self.total_clients)
        return choose_set_dynamic(
            digest, t, self.select_num, self.select_den, self.total_clients
        )

    def degree(self, round_size: int) -> int:
        if self.expected_degree is not None:
            return self.expected_degree
        return max(1, min(round_size - 1, DEFAULT_DEGREE))

    def quorum_ok(self, survivor_count: int, round_size: int) -> bool:
        """Whether a survivor count clears the configured abort threshold."""
        if self.abort_rule == "kappa":
            return survivor_count >= self.kappa
        return Fraction(survivor_count) >= (1 - self.eta) * round_size


# ---------------------------------------------------------------------------
# party state


@dataclass
class ClientState:
    """A client's long-lived secrets: seeds, dealings, and the roster."""

    id: int
    triple: KeyTriple
    roster: Dict[int, Tuple[int, int, int]]
    root: bytes
    committee: Tuple[int, ...]
    positions: Dict[int, int]
    kappa: int
    self_seed: int
    pairwise_seeds: Dict[int, int]
    dealers: Dict[int, DealerState]
    last_self_mask: Optional[np.ndarray] = None


@dataclass
class DecryptorState:
    """A committee member's stored shares and master-key material."""

    id: int
    position: int
    triple: KeyTriple
    roster: Dict[int, Tuple[int, int, int]]
    committee: Tuple[int, ...]
    positions: Dict[int, int]
    kappa: int
    mpk: int = 0
    msk_share: Optional[Share] = None
    shares: Dict[Tuple[int, int], Share] = field(default_factory=dict)
    pending_deals: Dict[int, DkgDeal] = field(default_factory=dict)
    dkg_commitments: Dict[int, Tuple[int, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class CommitteeView:
    """What the server knows about the committee: who sits where.

    levels lists (member ids, threshold) per generation, in the order the
    generations were added; positions are the share x-coordinates.
    """

    levels: Tuple[Tuple[Tuple[int, ...], int], ...]
    positions: Dict[int, int]
    mpk: int = 0

    def position(self, member: int) -> int:
        pos = self.positions.get(member)
        if pos is None:
            raise MissingShare(f"{member} is not a committee member")
        return pos

    def level_of(self, member: int) -> int:
        for depth, (members, _) in enumerate(self.levels, start=1):
            if member in members:
                return depth
        raise MissingShare(f"{member} is not a committee member")

    @property
    def msk_holders(self) -> Tuple[int, ...]:
        return self.levels[0][0]

    @property
    def kappa(self) -> int:
        return self.levels[0][1]

    def structure(self) -> AccessStructure:
        return AccessStructure(
            levels=tuple(
                (frozenset(self.positions[m] for m in members), kappa)
                for members, kappa in self.levels
            )
        )


def committee_view(
    levels: Sequence[Tuple[Sequence[int], int]], mpk: int = 0
) -> CommitteeView:
    """Assign positions in join order and freeze the committee layout."""
    positions: Dict[int, int] = {}
    for members, _ in levels:
        for member in members:
            if member in positions:
                raise InvalidConfig(f"decryptor {member} listed twice")
            positions[member] = len(positions) + 1
    return CommitteeView(
        levels=tuple((tuple(members), kappa) for members, kappa in levels),
        positions=positions,
        mpk=mpk,
    )


# ---------------------------------------------------------------------------
# pre-round: roster commitment, seed dealing, DKG


def build_rootsig(
    group: GroupSpec,
    server_sk: int,
    records: Sequence[Tuple[int, Tuple[int, int, int]]],
) -> RootSig:
    """Commit to the key roster and sign the root with the server's key."""
    leaves = [pk_record(group, party_id, pks) for party_id, pks in records]
    root = merkle_commit(leaves).root
    return RootSig(
        root=root,
        signature=ds_sign(group, server_sk, root),
        records=tuple((party_id, tuple(pks)) for party_id, pks in records),
    )


def verify_roster(
    group: GroupSpec, rootsig: RootSig, server_pk: int
) -> Dict[int, Tuple[int, int, int]]:
    """Check the signed roster commitment and return the key table."""
    if not ds_verify(group, server_pk, rootsig.signature, rootsig.root):
        raise ConsistencyAbort("roster signature does not verify")
    leaves = [pk_record(group, party_id, pks) for party_id, pks in rootsig.records]
    if merkle_commit(leaves).root != rootsig.root:
        raise ConsistencyAbort("roster records do not match the committed root")
    roster: Dict[int, Tuple[int, int, int]] = {}
    for party_id, pks in rootsig.records:
        if party_id in roster:
            raise ConsistencyAbort(f"roster lists {party_id} twice")
        roster[party_id] = pks
    return roster


def _committee_positions(
    committee_levels: Sequence[Tuple[Sequence[int], int]],
) -> Tuple[Tuple[int, ...], Dict[int, int]]:
    flat: List[int] = []
    for members, _ in committee_levels:
        flat.extend(members)
    if len(set(flat)) != len(flat):
        raise InvalidConfig("committee levels overlap")
    return tuple(flat), {member: i + 1 for i, member in enumerate(flat)}


def _deal_to_levels(
    secret: int,
    committee_levels: Sequence[Tuple[Sequence[int], int]],
    positions: Dict[int, int],
    q: int,
    rng,
) -> Tuple[DealerState, Dict[int, Share]]:
    """Deal one seed across every committee generation, keyed by member id."""
    members0, kappa0 = committee_levels[0]
    state, shares = ml_deal_first_level(
        secret, kappa0, [positions[m] for m in members0], q, rng
    )
    by_position = {share.holder: share for share in shares}
    for members, kappa in committee_levels[1:]:
        state, extra = ml_extend_level(state, kappa, [positions[m] for m in members], rng)
        by_position.update({share.holder: share for share in extra})
    return state, {m: by_position[positions[m]] for m in positions}


def _seed_box(
    group: GroupSpec,
    sender_id: int,
    triple: KeyTriple,
    roster: Mapping[int, Tuple[int, int, int]],
    recipient: int,
    entries: Sequence[Tuple[int, Share]],
) -> SeedShare:
    key = ka_agree(group, triple.authcrypt.sk, roster[recipient][1], role="transport")
    payload = encode_seed_payload(group, sender_id, recipient, entries)
    counter = _transport_counter(_COUNTER_SEEDSHARE, sender_id, recipient)
    return SeedShare(
        sender=sender_id,
        recipient=recipient,
        box=ae_encrypt(key, counter, payload),
    )


def pre_round_client(
    group: GroupSpec,
    client_id: int,
    triple: KeyTriple,
    rootsig: RootSig,
    server_pk: int,
    committee_levels: Sequence[Tuple[Sequence[int], int]],
    rng,
) -> Tuple[ClientState, List[SeedShare]]:
    """Verify the roster, establish all seeds, and deal them to the committee.

    Emits one encrypted box per committee member carrying that member's
    share of the self seed and of every pairwise seed. A client already
    seated on the committee still addresses a box to itself so counts
    stay uniform; the simulator hands it straight back.
    """
    roster = verify_roster(group, rootsig, server_pk)
    own = roster.get(client_id)
    if own is None or own != triple.public_keys():
        raise ConsistencyAbort("own keys missing from or mismatched in the roster")
    committee, positions = _committee_positions(committee_levels)
    for member in committee:
        if member not in roster:
            raise ConsistencyAbort(f"committee member {member} not in roster")

    pairwise = {
        peer: ka_agree(group, triple.mask.sk, pks[0], role="seed")
        for peer, pks in sorted(roster.items())
        if peer != client_id
    }
    self_seed = group.random_scalar(rng)

    dealers: Dict[int, DealerState] = {}
    per_member: Dict[int, List[Tuple[int, Share]]] = {m: [] for m in committee}
    dealt: List[Tuple[int, int]] = [(0, self_seed)]
    dealt.extend(sorted(pairwise.items()))
    for peer_key, secret in dealt:
        dealer, shares = _deal_to_levels(secret, committee_levels, positions, group.q, rng)
        dealers[peer_key] = dealer
        for member in committee:
            per_member[member].append((peer_key, shares[member]))

    state = ClientState(
        id=client_id,
        triple=triple,
        roster=roster,
        root=rootsig.root,
        committee=committee,
        positions=positions,
        kappa=committee_levels[0][1],
        self_seed=self_seed,
        pairwise_seeds=pairwise,
        dealers=dealers,
    )
    messages = [
        _seed_box(group, client_id, triple, roster, member, per_member[member])
        for member in committee
    ]
    return state, messages


def new_decryptor_state(
    group: GroupSpec,
    member_id: int,
    triple: KeyTriple,
    rootsig: RootSig,
    server_pk: int,
    committee_levels: Sequence[Tuple[Sequence[int], int]],
) -> DecryptorState:
    roster = verify_roster(group, rootsig, server_pk)
    own = roster.get(member_id)
    if own is None or own != triple.public_keys():
        raise ConsistencyAbort("own keys missing from or mismatched in the roster")
    committee, positions = _committee_positions(committee_levels)
    if member_id not in positions:
        raise InvalidConfig(f"{member_id} is not on the committee")
    return DecryptorState(
        id=member_id,
        position=positions[member_id],
        triple=triple,
        roster=roster,
        committee=committee,
        positions=positions,
        kappa=committee_levels[0][1],
    )


def decryptor_ingest_seed_share(
    group: GroupSpec, state: DecryptorState, msg: SeedShare
) -> None:
    """Open a client's seed box and store the shares it carries.

    Raises AeAuthFailure if the box fails authentication (nothing is
    stored) and ValueError if the payload's addressing or share index
    disagrees with this decryptor.
    """
    sender_pks = state.roster.get(msg.sender)
    if sender_pks is None:
        raise ValueError(f"seed box from unknown sender {msg.sender}")
    key = ka_agree(group, state.triple.authcrypt.sk, sender_pks[1], role="transport")
    plaintext = ae_decrypt(key, msg.box)
    owner, recipient, entries = decode_seed_payload(group, plaintext)
    if owner != msg.sender or recipient != state.id:
        raise ValueError("seed payload addressed to a different pair")
    for peer, share in entries:
        if share.holder != state.position:
            raise ValueError(
                f"share indexed for position {share.holder}, not ours ({state.position})"
            )
        state.shares[(owner, peer)] = share


def dkg_deal_messages(
    group: GroupSpec, state: DecryptorState, rng
) -> List[DkgDealMsg]:
    """Contribute to the committee DKG: one boxed share per other member."""
    secret = group.random_scalar(rng)
    holders = sorted(state.positions.values())
    deal = dkg_deal(group, state.position, secret, state.kappa, holders, rng)
    messages = []
    for member in state.committee:
        share = deal.shares[state.positions[member]]
        if member == state.id:
            state.pending_deals[state.position] = DkgDeal(
                dealer=state.position,
                commitments=deal.commitments,
                shares={state.position: share},
            )
            continue
        key = ka_agree(
            group, state.triple.authcrypt.sk, state.roster[member][1], role="transport"
        )
        counter = _transport_counter(_COUNTER_DKGDEAL, state.id, member)
        messages.append(
            DkgDealMsg(
                dealer=state.id,
                recipient=member,
                commitments=deal.commitments,
                box=ae_encrypt(key, counter, encode_share(group, share)),
            )
        )
    return messages


def decryptor_ingest_dkg(
    group: GroupSpec, state: DecryptorState, msg: DkgDealMsg
) -> None:
    dealer_pks = state.roster.get(msg.dealer)
    if dealer_pks is None or msg.dealer not in state.positions:
        raise ValueError(f"DKG deal from non-member {msg.dealer}")
    key = ka_agree(group, state.triple.authcrypt.sk, dealer_pks[1], role="transport")
    share = decode_share(group, ae_decrypt(key, msg.box))
    dealer_pos = state.positions[msg.dealer]
    state.pending_deals[dealer_pos] = DkgDeal(
        dealer=dealer_pos,
        commitments=msg.commitments,
        shares={state.position: share},
    )


def decryptor_finish_dkg(group: GroupSpec, state: DecryptorState) -> None:
    """Verify all pending deals and lock in the master-key share."""
    expected = set(state.positions.values())
    missing = expected - set(state.pending_deals)
    if missing:
        raise DkgComplaint(min(missing), "no deal received")
    outcome = dkg_finalize(group, state.position, state.pending_deals)
    state.msk_share = outcome.my_share
    state.mpk = outcome.mpk
    state.dkg_commitments = dict(outcome.commitments)
    state.pending_deals = {}


# ---------------------------------------------------------------------------
# collection: report, collect, respond, unmask


def client_report(
    group: GroupSpec,
    state: ClientState,
    config: RoundConfig,
    x: Sequence[int],
    *,
    include_self_mask: bool = True,
    include_pairwise_masks: bool = True,
) -> Report:
    """Mask the input vector for this iteration and sign the liveness tag.

    The two include_* switches exist for tests that need the masking
    algebra exposed; production paths leave them on.
    """
    participants = config.participants()
    if state.id not in participants:
        raise NotParticipant(f"client {state.id} not selected in iteration {config.iteration}")
    vec = np.asarray(list(x), dtype="<u4")
    if vec.shape != (config.vector_len,):
        raise InvalidConfig(
            f"input vector has {vec.shape[0]} entries, config says {config.vector_len}"
        )
    g_t = derive_round_generator(group, config.model_digest, config.iteration)
    y = vec.copy()
    if include_self_mask:
        self_mask = prg_expand(group, group.exp(g_t, state.self_seed), config.vector_len)
        y += self_mask
        state.last_self_mask = self_mask
    else:
        state.last_self_mask = None
    if include_pairwise_masks:
        degree = config.degree(len(participants))
        for j in find_neighbors(
            config.model_digest, config.iteration, participants, state.id, degree
        ):
            seed = state.pairwise_seeds.get(j)
            if seed is None:
                raise MissingSeed(f"no pairwise seed with neighbor {j}")
            mask = prg_expand(group, group.exp(g_t, seed), config.vector_len)
            if j > state.id:
                y += mask
            else:
                y -= mask
    signature = ds_sign(
        group, state.triple.authcrypt.sk, online_message(state.id, config.iteration)
    )
    return Report(
        sender=state.id, iteration=config.iteration, vector=y, signature=signature
    )


@dataclass(frozen=True)
class CollectResult:
    """The server's post-deadline view: who answered, who did not."""

    survivors: Tuple[int, ...]
    dropouts: Tuple[int, ...]
    signatures: Tuple[Tuple[int, bytes], ...]
    masked_sum: np.ndarray


def server_collect(
    group: GroupSpec,
    reports: Sequence[Report],
    config: RoundConfig,
    auth_pks: Mapping[int, int],
) -> CollectResult:
    """Partition the round into survivors and dropouts, or abort.

    A report only counts if its sender was selected, its iteration and
    length match, and its signature verifies; anything else leaves the
    sender in the dropout set.
    """
    participants = config.participants()
    selected = set(participants)
    valid: Dict[int, Report] = {}
    for report in reports:
        if report.sender not in selected or report.sender in valid:
            continue
        if report.iteration != config.iteration:
            continue
        if report.vector.shape != (config.vector_len,):
            continue
        pk = auth_pks.get(report.sender)
        if pk is None or not ds_verify(
            group, pk, report.signature, online_message(report.sender, config.iteration)
        ):
            continue
        valid[report.sender] = report
    survivors = tuple(sorted(valid))
    dropouts = tuple(sorted(selected - set(valid)))
    if not config.quorum_ok(len(survivors), len(participants)):
        raise RoundAbort(
            f"{len(survivors)} of {len(participants)} reports is below the abort threshold"
        )
    masked_sum = np.zeros(config.vector_len, dtype="<u4")
    for sender in survivors:
        masked_sum += valid[sender].vector
    signatures = tuple((sender, valid[sender].signature) for sender in survivors)
    return CollectResult(
        survivors=survivors,
        dropouts=dropouts,
        signatures=signatures,
        masked_sum=masked_sum,
    )


def decryptor_check_request(
    group: GroupSpec, state: DecryptorState, req: CheckReq, config: RoundConfig
) -> Tuple[int, ...]:
    """The response gate: disjoint sets, quorum, and every survivor's tag.

    Returns the participant set implied by the request's digest; raises
    ConsistencyAbort if any check fails.
    """
    survivors, dropouts = req.survivors, req.dropouts
    if set(survivors) & set(dropouts):
        raise ConsistencyAbort("survivor and dropout sets overlap")
    participants = config.participants(req.digest, req.iteration)
    if not config.quorum_ok(len(survivors), len(participants)):
        raise ConsistencyAbort(
            f"{len(survivors)} survivors of {len(participants)} is below the abort threshold"
        )
    sigs = dict(req.signatures)
    for i in survivors:
        sig = sigs.get(i)
        pks = state.roster.get(i)
        if (
            sig is None
            or pks is None
            or not ds_verify(group, pks[1], sig, online_message(i, req.iteration))
        ):
            raise ConsistencyAbort(f"survivor {i} has no valid liveness signature")
    return participants


def _dropout_edges(
    digest: bytes,
    t: int,
    participants: Tuple[int, ...],
    survivors: Sequence[int],
    dropouts: Sequence[int],
    degree: int,
) -> List[Tuple[int, int]]:
    """Edges (dropout, surviving neighbor) whose masks need recovery."""
    survivor_set = set(survivors)
    edges = []
    for j in dropouts:
        for k in find_neighbors(digest, t, participants, j, degree):
            if k in survivor_set:
                edges.append((j, k))
    return edges


def decryptor_seed_elements(
    group: GroupSpec,
    state: DecryptorState,
    req: CheckReq,
    config: RoundConfig,
    participants: Tuple[int, ...],
) -> bytes:
    """This decryptor's share of every seed the claimed sets call for.

    Survivor self seeds first in ascending id order, then dropout
    pairwise seeds in (dropout, neighbor) order, each share lifted to
    the round generator's exponent.
    """
    g_t = derive_round_generator(group, req.digest, req.iteration)
    degree = config.degree(len(participants))
    elements = []
    for i in req.survivors:
        share = state.shares.get((i, 0))
        if share is None:
            raise MissingShare(f"no stored self-seed share for {i}")
        elements.append(group.exp(g_t, share.value))
    for j, k in _dropout_edges(
        req.digest, req.iteration, participants, req.survivors, req.dropouts, degree
    ):
        share = state.shares.get((j, k)) or state.shares.get((k, j))
        if share is None:
            raise MissingShare(f"no stored pairwise-seed share for edge ({j}, {k})")
        elements.append(group.exp(g_t, share.value))
    return b"".join(group.encode_element(el) for el in elements)


def decryptor_respond(
    group: GroupSpec,
    state: DecryptorState,
    req: CheckReq,
    config: RoundConfig,
    rng,
) -> DecResp:
    """Answer a check request with sealed seed material.

    The payload is encrypted under a fresh key, the key is blinded so
    recovering it takes a threshold of matching decryption shares, and
    the claimed sets ride along as associated data: a server that showed
    different sets to different decryptors recovers nothing.
    """
    participants = decryptor_check_request(group, state, req, config)
    payload = decryptor_seed_elements(group, state, req, config, participants)
    k_u = group.random_element(rng)
    aad = canonical_sets(req.survivors, req.dropouts) + encode_iteration(req.iteration)
    box = ae_encrypt(_temp_key(group, k_u), req.iteration, payload, aad)
    h = _set_scalar(group, req.survivors, req.dropouts)
    blinded = group.mul(
        k_u, group.exp(state.mpk, (state.triple.decrypt.sk + h) % group.q)
    )
    shares: List[Tuple[int, int]] = []
    if state.msk_share is not None:
        g_h = group.exp_g(h)
        for member in sorted(state.committee):
            if member == state.id:
                continue
            base = group.mul(g_h, state.roster[member][2])
            shares.append((member, group.exp(base, state.msk_share.value)))
    return DecResp(
        sender=state.id,
        iteration=req.iteration,
        seed_box=box,
        blinded_key=blinded,
        shares=tuple(shares),
    )


def recover_temp_key(
    group: GroupSpec,
    view: CommitteeView,
    target: DecResp,
    helpers: Sequence[DecResp],
) -> int:
    """Unblind one response's box key from other responders' shares."""
    by_position: Dict[int, int] = {}
    for helper in helpers:
        if helper.sender == target.sender:
            raise MissingShare("a response cannot help unblind its own key")
        addressed = dict(helper.shares)
        if target.sender not in addressed:
            raise MissingShare(
                f"response from {helper.sender} carries no share for {target.sender}"
            )
        by_position[view.position(helper.sender)] = addressed[target.sender]
    coeffs = lagrange_coefficients(by_position.keys(), group.q)
    denominator = interpolate_in_exponent(group, by_position, coeffs)
    return group.div(target.blinded_key, denominator)


def open_seed_box(
    group: GroupSpec,
    temp_key: int,
    response: DecResp,
    survivors: Sequence[int],
    dropouts: Sequence[int],
) -> bytes:
    """Open a response's payload under the server's view of the sets."""
    aad = canonical_sets(survivors, dropouts) + encode_iteration(response.iteration)
    return ae_decrypt(_temp_key(group, temp_key), response.seed_box, aad)


def _mask_quorum(view: CommitteeView, opened_positions: Sequence[int]) -> List[int]:
    """Pick the interpolation subset, shallowest satisfying level first."""
    pos_level = {
        view.positions[m]: depth
        for depth, (members, _) in enumerate(view.levels, start=1)
        for m in members
    }
    available = sorted(opened_positions)
    for depth, (_, kappa) in enumerate(view.levels, start=1):
        eligible = [pos for pos in available if pos_level[pos] <= depth]
        if len(eligible) >= kappa:
            return eligible[:kappa]
    raise RoundAbort("decryptable responses do not satisfy the reconstruction structure")


def _decode_payload_elements(
    group: GroupSpec, payload: bytes, slots: int
) -> Optional[List[int]]:
    """Parse a seed payload into elements, or None if it is malformed."""
    width = group.element_bytes
    if len(payload) != slots * width:
        return None
    try:
        return [
            group.decode_element(payload[i * width : (i + 1) * width])
            for i in range(slots)
        ]
    except ValueError:
        return None


def unmask_from_elements(
    group: GroupSpec,
    view: CommitteeView,
    opened: Mapping[int, Sequence[int]],
    collect: CollectResult,
    config: RoundConfig,
) -> np.ndarray:
    """Finish the sum from per-position seed elements already recovered.

    opened maps committee positions to that responder's payload elements,
    survivor slots first, dropout-edge slots after. Fewer than kappa
    positions, or none satisfying the share structure, aborts the round.
    """
    survivors, dropouts = collect.survivors, collect.dropouts
    participants = config.participants()
    degree = config.degree(len(participants))
    edges = _dropout_edges(
        config.model_digest, config.iteration, participants, survivors, dropouts, degree
    )
    if len(opened) < view.kappa:
        raise RoundAbort(
            f"only {len(opened)} of the required {view.kappa} responses were usable"
        )
    quorum = _mask_quorum(view, sorted(opened))
    coeffs = lagrange_coefficients(quorum, group.q)

    def recover_mask(slot: int) -> np.ndarray:
        element = interpolate_in_exponent(
            group, {pos: opened[pos][slot] for pos in quorum}, coeffs
        )
        return prg_expand(group, element, config.vector_len)

    mask_total = np.zeros(config.vector_len, dtype="<u4")
    for slot in range(len(survivors)):
        mask_total += recover_mask(slot)
    for slot, (j, k) in enumerate(edges, start=len(survivors)):
        if j > k:
            mask_total += recover_mask(slot)
        else:
            mask_total -= recover_mask(slot)
    return collect.masked_sum - mask_total


def server_unmask(
    group: GroupSpec,
    view: CommitteeView,
    collect: CollectResult,
    responses: Sequence[DecResp],
    config: RoundConfig,
) -> np.ndarray:
    """Recover the mask total from decryptor responses and finish the sum.

    Responses whose boxes fail authentication are skipped: that is the
    protocol's signal that the responder saw different sets. Fewer than
    kappa usable boxes aborts the round.
    """
    survivors, dropouts = collect.survivors, collect.dropouts
    participants = config.participants()
    degree = config.degree(len(participants))
    edges = _dropout_edges(
        config.model_digest, config.iteration, participants, survivors, dropouts, degree
    )
    slots = len(survivors) + len(edges)

    usable = [
        r for r in responses if r.sender in view.positions and r.has_blinded_key
    ]
    originals = sorted(
        (r for r in usable if r.sender in set(view.msk_holders)),
        key=lambda r: view.position(r.sender),
    )
    opened: Dict[int, List[int]] = {}
    for response in sorted(usable, key=lambda r: view.position(r.sender)):
        helpers = [r for r in originals if r.sender != response.sender][: view.kappa]
        if len(helpers) < view.kappa:
            continue
        try:
            temp_key = recover_temp_key(group, view, response, helpers)
            payload = open_seed_box(group, temp_key, response, survivors, dropouts)
        except (AeAuthFailure, MissingShare):
            continue
        elements = _decode_payload_elements(group, payload, slots)
        if elements is not None:
            opened[view.position(response.sender)] = elements

    if len(opened) < view.kappa:
        raise RoundAbort(
            f"only {len(opened)} of the required {view.kappa} responses were decryptable"
        )
    return unmask_from_elements(group, view, opened, collect, config)


# ---------------------------------------------------------------------------
# dynamic extension: dealing to a new committee generation


def client_note_roster(
    group: GroupSpec, state: ClientState, rootsig: RootSig, server_pk: int
) -> None:
    """Adopt a re-signed roster, agreeing on seeds with any new peers.

    New pairwise seeds are derived on the spot; they are covered for
    dropout recovery by the new peers' own dealings, so nothing extra
    needs to be dealt here.
    """
    roster = verify_roster(group, rootsig, server_pk)
    own = roster.get(state.id)
    if own is None or own != state.triple.public_keys():
        raise ConsistencyAbort("own keys missing from or mismatched in the new roster")
    for peer, pks in state.roster.items():
        if roster.get(peer) != pks:
            raise ConsistencyAbort(f"existing keys for {peer} changed in the new roster")
    for peer, pks in sorted(roster.items()):
        if peer != state.id and peer not in state.pairwise_seeds:
            state.pairwise_seeds[peer] = ka_agree(
                group, state.triple.mask.sk, pks[0], role="seed"
            )
    state.roster = roster
    state.root = rootsig.root


def decryptor_note_extension(
    group: GroupSpec,
    state: DecryptorState,
    rootsig: RootSig,
    server_pk: int,
    new_members: Sequence[int],
    mpk: int = 0,
) -> None:
    """Record newly seated committee members (and the grown roster).

    Existing share material is untouched. A freshly seated member passes
    its own state here too, with the published master public key, so its
    later responses can blind their box keys.
    """
    roster = verify_roster(group, rootsig, server_pk)
    for peer, pks in state.roster.items():
        if roster.get(peer) != pks:
            raise ConsistencyAbort(f"existing keys for {peer} changed in the new roster")
    start = len(state.positions)
    for offset, member in enumerate(new_members):
        if member not in roster:
            raise ConsistencyAbort(f"new committee member {member} not in roster")
        if member in state.positions:
            raise InvalidConfig(f"{member} is already on the committee")
        state.positions[member] = start + offset + 1
    state.roster = roster
    state.committee = state.committee + tuple(new_members)
    if mpk:
        state.mpk = mpk


def client_extend_dealings(
    group: GroupSpec,
    state: ClientState,
    new_members: Sequence[int],
    new_kappa: int,
    rng,
) -> List[SeedShare]:
    """Extend every dealt seed to newly seated decryptors.

    Existing committee members' shares are untouched; only the new
    members receive boxes, each holding next-level shares of the self
    seed and every pairwise seed.
    """
    for member in new_members:
        if member not in state.roster:
            raise ConsistencyAbort(f"new committee member {member} not in roster")
        if member in state.positions:
            raise InvalidConfig(f"{member} is already on the committee")
    start = len(state.positions)
    new_positions = {member: start + i + 1 for i, member in enumerate(new_members)}
    per_member: Dict[int, List[Tuple[int, Share]]] = {m: [] for m in new_members}
    for peer_key in sorted(state.dealers):
        dealer = state.dealers[peer_key]
        dealer, shares = ml_extend_level(
            dealer, new_kappa, list(new_positions.values()), rng
        )
        state.dealers[peer_key] = dealer
        by_position = {share.holder: share for share in shares}
        for member in new_members:
            per_member[member].append((peer_key, by_position[new_positions[member]]))
    state.positions.update(new_positions)
    state.committee = state.committee + tuple(new_members)
    return [
        _seed_box(group, state.id, state.triple, state.roster, member, per_member[member])
        for member in new_members
    ]
