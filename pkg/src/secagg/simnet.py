"""Deterministic discrete-event simulation of full aggregation sessions.

Every party (one server, numbered clients, the committee members among
them) exchanges real wire envelopes through a delay-ordered event queue.
Message bytes are counted on the serialized envelope exactly as it would
cross a network. One metrics row is written per sent message and one per
delivery, plus a summary row per iteration carrying the outcome and the
final round number for that iteration.

Determinism: one master seed fans out to per-purpose seeds through
sha256, so a (seed, spec, script) triple fixes every key, seed share,
dropout set, input vector, delay, and therefore every byte on the wire
and every row value except cpu_us, which is measured wall time and is
the one nondeterministic column.

Round numbering counts server-to-parties-and-back exchanges within the
collection phase: the model push and the reports are round 1, the check
request and responses are round 2, and the signature-gated variant adds
its extra exchange as round 3. Pre-round and join traffic is round 0.

The adversary script models a malicious server. It can present different
survivor and dropout sets to different committee members, different
model digests to different clients, or discard selected responses; it
cannot touch the pre-round key commitment exchange, which the protocol
assumes is bound by the signed roster.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import random
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, IO, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import protocol as proto
from .crypto import KeyTriple, keygen_triple
from .errors import (
    CombineReject,
    ConsistencyAbort,
    InsufficientShares,
    InvalidConfig,
    InvalidPlan,
    NotParticipant,
    RoundAbort,
    VerifyUnavailable,
)
from .groups import GroupSpec
from .tss import (
    KnownExponentVerifier,
    VerifierBackend,
    dropout_message,
    pk_shares_from_commitments,
    survivor_message,
    tss_combine,
    tss_handle_full,
    tss_handle_request,
)
from .wire import (
    CheckReq,
    DecResp,
    DkgDealMsg,
    Model,
    PkCommit,
    Report,
    RootSig,
    SeedShare,
    TssFull,
    TssPart,
    TssReq,
    decode_message,
    encode_message,
)
from .sharing import interpolate_at_zero

__all__ = [
    "SERVER",
    "DelayModel",
    "AdversaryScript",
    "SessionSpec",
    "MetricRow",
    "METRIC_FIELDS",
    "SessionResult",
    "Session",
    "run_session",
    "inject_dropouts",
    "write_metrics",
]

SERVER = 0

METRIC_FIELDS = (
    "iter",
    "entity_kind",
    "entity_id",
    "phase",
    "msg_type",
    "bytes_sent",
    "bytes_recv",
    "cpu_us",
    "round",
    "outcome",
)

_MSG_NAMES = {
    PkCommit: "PKCOMMIT",
    RootSig: "ROOTSIG",
    SeedShare: "SEEDSHARE",
    DkgDealMsg: "DKGDEAL",
    Model: "MODEL",
    Report: "REPORT",
    CheckReq: "CHECKREQ",
    DecResp: "DECRESP",
    TssReq: "TSSREQ",
    TssPart: "TSSPART",
    TssFull: "TSSFULL",
}

_ROUND_OF = {
    "MODEL": 1,
    "REPORT": 1,
    "CHECKREQ": 2,
    "TSSREQ": 2,
    "TSSPART": 2,
    "TSSFULL": 3,
}


def _sub_seed(master: int, label: str) -> int:
    digest = hashlib.sha256(
        master.to_bytes(8, "little", signed=False) + label.encode()
    ).digest()
    return int.from_bytes(digest, "big")


def _sub_rng(master: int, label: str) -> random.Random:
    return random.Random(_sub_seed(master, label))


@dataclass
class DelayModel:
    """Per-message transit time: a base cost plus seeded uniform jitter."""

    base_us: int = 50_000
    jitter_us: int = 20_000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.base_us < 0 or self.jitter_us < 0:
            raise InvalidConfig("delays cannot be negative")
        self._rng = _sub_rng(self.seed, "delay")

    def sample(self) -> int:
        return self.base_us + self._rng.randrange(self.jitter_us + 1)


@dataclass(frozen=True)
class AdversaryScript:
    """What the malicious server does this session.

    mode "honest" plays by the rules. "inconsistent_sets" shows committee
    members in partition group 1 a doctored survivor split (the highest
    surviving id is recast as a dropout) and unmasks against that view.
    "inconsistent_model" sends clients in partition group v > 0 a variant
    model digest. "drop_responses" silently discards responses from the
    listed committee members.
    """

    mode: str = "honest"
    partition: Mapping[int, int] = field(default_factory=dict)
    drops: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        known = ("honest", "inconsistent_sets", "inconsistent_model", "drop_responses")
        if self.mode not in known:
            raise InvalidConfig(f"unknown adversary mode {self.mode!r}")

    def variant_digest(self, true_digest: bytes, group_index: int) -> bytes:
        if group_index == 0:
            return true_digest
        return hashlib.sha256(
            b"variant" + group_index.to_bytes(4, "little") + true_digest
        ).digest()


@dataclass(frozen=True)
class SessionSpec:
    """Shape of a whole session: population, committee, and round plan."""

    n_clients: int
    committee_size: int
    kappa: int
    vector_len: int
    iterations: int
    eta_c: float = 0.0
    eta_d: float = 0.0
    dropout_rate: float = 0.0
    selection: str = "static"
    round_size: Optional[int] = None
    select_num: Optional[int] = None
    select_den: Optional[int] = None
    expected_degree: Optional[int] = None
    abort_rule: str = "eta"
    mode: str = "oneround"
    input_bits: int = 16

    def __post_init__(self) -> None:
        if self.mode not in ("oneround", "tss"):
            raise InvalidConfig(f"unknown collection mode {self.mode!r}")
        if self.selection not in ("static", "dynamic"):
            raise InvalidConfig(f"unknown selection mode {self.selection!r}")
        if not 1 <= self.committee_size <= self.n_clients:
            raise InvalidConfig("committee must be a nonempty subset of the clients")
        if self.iterations < 1:
            raise InvalidConfig("a session needs at least one iteration")
        if self.input_bits not in (16, 32):
            raise InvalidConfig("inputs are 16- or 32-bit")
        # surface bad threshold parameters before any keys are generated
        self.round_config(1, bytes(32))

    def round_config(self, t: int, digest: bytes) -> proto.RoundConfig:
        if self.selection == "static":
            round_size = self.round_size if self.round_size is not None else self.n_clients
            num = den = None
        else:
            round_size = None
            num = self.select_num if self.select_num is not None else 1
            den = self.select_den if self.select_den is not None else 2
        return proto.RoundConfig(
            iteration=t,
            model_digest=digest,
            total_clients=self.n_clients,
            committee_size=self.committee_size,
            kappa=self.kappa,
            eta_c=self.eta_c,
            eta_d=self.eta_d,
            round_size=round_size,
            select_num=num,
            select_den=den,
            expected_degree=self.expected_degree,
            vector_len=self.vector_len,
            abort_rule=self.abort_rule,
        )


@dataclass
class MetricRow:
    iter: int
    entity_kind: str
    entity_id: int
    phase: str
    msg_type: str
    bytes_sent: int
    bytes_recv: int
    cpu_us: int
    round: int
    outcome: str

    def as_tuple(self) -> Tuple:
        return (
            self.iter, self.entity_kind, self.entity_id, self.phase, self.msg_type,
            self.bytes_sent, self.bytes_recv, self.cpu_us, self.round, self.outcome,
        )


@dataclass
class SessionResult:
    rows: List[MetricRow]
    outcomes: List[str]
    sums: List[Optional[np.ndarray]]
    expected: List[Optional[np.ndarray]]
    committee: Tuple[int, ...]


def inject_dropouts(
    participants_by_iter: Mapping[int, Sequence[int]],
    rate: float,
    seed: int,
    *,
    eta_d: float,
) -> Dict[int, Tuple[int, ...]]:
    """Draw a per-iteration dropout set of size floor(rate * n_t).

    The plan is refused outright if the requested rate exceeds the
    dropout budget the thresholds were sized for.
    """
    if not 0 <= rate <= 1:
        raise InvalidPlan(f"dropout rate {rate} is not in [0, 1]")
    if Fraction(str(rate)) > Fraction(str(eta_d)):
        raise InvalidPlan(
            f"dropout rate {rate} exceeds the tolerated fraction {eta_d}"
        )
    plan: Dict[int, Tuple[int, ...]] = {}
    for t in sorted(participants_by_iter):
        participants = sorted(participants_by_iter[t])
        count = int(Fraction(str(rate)) * len(participants))
        rng = _sub_rng(seed, f"dropouts/{t}")
        plan[t] = tuple(sorted(rng.sample(participants, count)))
    return plan


def write_metrics(rows: Sequence[MetricRow], sink: Union[str, IO[str]]) -> None:
    """Write rows as CSV with the canonical header."""

    def _emit(fh: IO[str]) -> None:
        writer = csv.writer(fh)
        writer.writerow(METRIC_FIELDS)
        for row in rows:
            writer.writerow(row.as_tuple())

    if isinstance(sink, str):
        with open(sink, "w", newline="") as fh:
            _emit(fh)
    else:
        _emit(sink)


class Session:
    """One server, a population of clients, and a committee, end to end.

    Construction runs the pre-round (roster commitment, seed dealing,
    committee key generation). Each run_iteration drives one collection
    iteration under the adversary script. join() grows the population
    and the committee between iterations.
    """

    def __init__(
        self,
        group: GroupSpec,
        spec: SessionSpec,
        script: Optional[AdversaryScript] = None,
        seed: int = 0,
        delay: Optional[DelayModel] = None,
        verifier: Optional[VerifierBackend] = None,
    ):
        self.group = group
        self.spec = spec
        self.script = script or AdversaryScript()
        self.seed = seed
        self.delay = delay or DelayModel(seed=seed)
        self.clock = 0
        self._seq = 0
        self._queue: List[Tuple[int, int, int, int, bytes]] = []
        self.rows: List[MetricRow] = []
        self._iter_rows: List[MetricRow] = []
        self._current_iter = 0
        self._current_phase = "preround"
        self.outcomes: List[str] = []
        self.sums: List[Optional[np.ndarray]] = []
        self.expected: List[Optional[np.ndarray]] = []
        self.iterations_run = 0

        self.committee: Tuple[int, ...] = tuple(range(1, spec.committee_size + 1))
        self.levels: List[Tuple[Tuple[int, ...], int]] = [(self.committee, spec.kappa)]
        self.clients: Dict[int, proto.ClientState] = {}
        self.decryptors: Dict[int, proto.DecryptorState] = {}
        self.triples: Dict[int, KeyTriple] = {}
        self._preround()
        self.verifier = verifier or self._harness_verifier()

    # -- bookkeeping ------------------------------------------------------

    def _kind(self, entity: int) -> str:
        if entity == SERVER:
            return "server"
        return "decryptor" if entity in self.decryptors else "client"

    def _round_of(self, msg_type: str) -> int:
        if self._current_phase != "collection":
            return 0
        if msg_type == "DECRESP":
            # the response round: second exchange normally, third when the
            # release waits on the combined signature
            return 3 if self.spec.mode == "tss" else 2
        return _ROUND_OF.get(msg_type, 0)

    def _row(self, entity: int, msg_type: str, sent: int, recv: int, cpu_us: int) -> None:
        row = MetricRow(
            iter=self._current_iter,
            entity_kind=self._kind(entity),
            entity_id=entity,
            phase=self._current_phase,
            msg_type=msg_type,
            bytes_sent=sent,
            bytes_recv=recv,
            cpu_us=cpu_us,
            round=self._round_of(msg_type),
            outcome="",
        )
        if self._current_phase == "collection":
            self._iter_rows.append(row)
        else:
            self.rows.append(row)

    def _send(self, sender: int, receiver: int, msg) -> None:
        name = _MSG_NAMES[type(msg)]
        if self._current_phase == "collection" and name == "SEEDSHARE":
            raise AssertionError("seed shares must never travel during collection")
        data = encode_message(self.group, msg)
        self._row(sender, name, len(data), 0, 0)
        self._seq += 1
        heapq.heappush(
            self._queue,
            (self.clock + self.delay.sample(), self._seq, sender, receiver, data),
        )

    def _drain(self) -> List[Tuple[int, int, bytes]]:
        out = []
        while self._queue:
            at, _, sender, receiver, data = heapq.heappop(self._queue)
            self.clock = max(self.clock, at)
            out.append((sender, receiver, data))
        return out

    def _deliver(self, receiver: int, msg_type: str, data: bytes, handler) -> object:
        """Run a receive handler and charge its wall time to the receiver."""
        start = time.perf_counter_ns()
        result = handler()
        cpu_us = (time.perf_counter_ns() - start) // 1000
        self._row(receiver, msg_type, 0, len(data), cpu_us)
        return result

    # -- pre-round ---------------------------------------------------------

    def _preround(self) -> None:
        group, spec = self.group, self.spec
        self._current_phase = "preround"
        key_rng = _sub_rng(self.seed, "keys")
        self.server_triple = keygen_triple(group, key_rng)
        for i in range(1, spec.n_clients + 1):
            self.triples[i] = keygen_triple(group, key_rng)

        for i in range(1, spec.n_clients + 1):
            self._send(i, SERVER, PkCommit(sender=i, public_keys=self.triples[i].public_keys()))
        records = []
        for sender, receiver, data in self._drain():
            msg = decode_message(group, data)
            self._deliver(SERVER, "PKCOMMIT", data, lambda: None)
            records.append((msg.sender, msg.public_keys))
        records.sort()
        self.rootsig = proto.build_rootsig(group, self.server_triple.authcrypt.sk, records)
        self.auth_pks = {pid: pks[1] for pid, pks in records}

        for i in range(1, spec.n_clients + 1):
            self._send(SERVER, i, self.rootsig)
        rootsig_at: Dict[int, RootSig] = {}
        for sender, receiver, data in self._drain():
            msg = decode_message(group, data)
            self._deliver(receiver, "ROOTSIG", data, lambda: None)
            rootsig_at[receiver] = msg

        for i in self.committee:
            self.decryptors[i] = proto.new_decryptor_state(
                group, i, self.triples[i], rootsig_at[i], self.server_triple.authcrypt.pk,
                self.levels,
            )
        for i in range(1, spec.n_clients + 1):
            deal_rng = _sub_rng(self.seed, f"deal/{i}")
            state, boxes = proto.pre_round_client(
                group, i, self.triples[i], rootsig_at[i],
                self.server_triple.authcrypt.pk, self.levels, deal_rng,
            )
            self.clients[i] = state
            for box in boxes:
                self._send(i, box.recipient, box)
        for sender, receiver, data in self._drain():
            box = decode_message(group, data)
            target = self.decryptors[receiver]
            self._deliver(
                receiver, "SEEDSHARE", data,
                lambda: proto.decryptor_ingest_seed_share(group, target, box),
            )

        for i in self.committee:
            dkg_rng = _sub_rng(self.seed, f"dkg/{i}")
            for msg in proto.dkg_deal_messages(group, self.decryptors[i], dkg_rng):
                self._send(i, msg.recipient, msg)
        for sender, receiver, data in self._drain():
            deal = decode_message(group, data)
            target = self.decryptors[receiver]
            self._deliver(
                receiver, "DKGDEAL", data,
                lambda: proto.decryptor_ingest_dkg(group, target, deal),
            )
        for i in self.committee:
            proto.decryptor_finish_dkg(group, self.decryptors[i])
        self.mpk = self.decryptors[self.committee[0]].mpk
        self.view = proto.committee_view(self.levels, mpk=self.mpk)

    def _harness_verifier(self) -> VerifierBackend:
        """Known-exponent oracle for the signature-gated mode.

        The harness owns every share, so it can answer the Diffie-Hellman
        checks a pairing would handle on a curve that supports one.
        """
        table: Dict[int, int] = {}
        holders = {}
        for i in self.view.msk_holders:
            value = self.decryptors[i].msk_share.value
            table[self.group.exp_g(value)] = value
            holders[self.decryptors[i].position] = value
        kappa = self.view.kappa
        quorum = {pos: holders[pos] for pos in sorted(holders)[:kappa]}
        msk = interpolate_at_zero(quorum, self.group.q)
        table[self.group.exp_g(msk)] = msk
        return KnownExponentVerifier(table)

    # -- collection --------------------------------------------------------

    def _model_digest(self, t: int) -> bytes:
        return hashlib.sha256(
            b"model" + self.seed.to_bytes(8, "little") + t.to_bytes(8, "little")
        ).digest()

    def _inputs(self, t: int, participants: Sequence[int]) -> Dict[int, np.ndarray]:
        rng = _sub_rng(self.seed, f"inputs/{t}")
        bound = 2 ** self.spec.input_bits
        return {
            i: np.array(
                [rng.randrange(bound) for _ in range(self.spec.vector_len)], dtype="<u4"
            )
            for i in participants
        }

    def _dropouts_for(self, t: int, participants: Sequence[int]) -> Tuple[int, ...]:
        if self._dropout_plan is not None:
            return tuple(self._dropout_plan.get(t, ()))
        if self.spec.dropout_rate == 0:
            return ()
        plan = inject_dropouts(
            {t: participants}, self.spec.dropout_rate, self.seed, eta_d=self.spec.eta_d
        )
        return plan[t]

    def run_iteration(self, t: int, dropout_plan: Optional[Mapping[int, Sequence[int]]] = None) -> str:
        """Drive one collection iteration; returns the outcome string."""
        group, spec, script = self.group, self.spec, self.script
        self._dropout_plan = dict(dropout_plan) if dropout_plan is not None else None
        self._current_iter = t
        self._current_phase = "collection"
        self._iter_rows = []

        digest = self._model_digest(t)
        config = spec.round_config(t, digest)
        participants = config.participants()
        xs = self._inputs(t, participants)
        dropped = set(self._dropouts_for(t, participants))

        outcome, z, expected, final_round = self._collection_flows(
            config, participants, xs, dropped
        )
        for row in self._iter_rows:
            row.outcome = outcome
        summary_cpu = self._server_cpu_us
        self._iter_rows.append(
            MetricRow(
                iter=t, entity_kind="server", entity_id=SERVER, phase="collection",
                msg_type="outcome", bytes_sent=0, bytes_recv=0, cpu_us=summary_cpu,
                round=final_round, outcome=outcome,
            )
        )
        self.rows.extend(self._iter_rows)
        self._iter_rows = []
        self.outcomes.append(outcome)
        self.sums.append(z)
        self.expected.append(expected)
        self.iterations_run += 1
        return outcome

    def _collection_flows(self, config, participants, xs, dropped):
        group, script = self.group, self.script
        t = config.iteration
        self._server_cpu_us = 0

        # round 1: model out, masked reports back
        digests_seen: Dict[int, bytes] = {}
        for i in participants:
            digest_i = config.model_digest
            if script.mode == "inconsistent_model":
                digest_i = script.variant_digest(
                    config.model_digest, script.partition.get(i, 0)
                )
            digests_seen[i] = digest_i
            self._send(SERVER, i, Model(iteration=t, digest=digest_i))
        reports: List[Report] = []
        for sender, receiver, data in self._drain():
            msg = decode_message(group, data)
            client = self.clients[receiver]
            local = replace(config, model_digest=msg.digest)

            def handle(client=client, local=local, receiver=receiver):
                if receiver in dropped:
                    return None
                try:
                    return proto.client_report(group, client, local, xs[receiver])
                except NotParticipant:
                    return None

            report = self._deliver(receiver, "MODEL", data, handle)
            if report is not None:
                self._send(receiver, SERVER, report)
        for sender, receiver, data in self._drain():
            msg = decode_message(group, data)
            self._deliver(SERVER, "REPORT", data, lambda: None)
            reports.append(msg)

        start = time.perf_counter_ns()
        try:
            collect = proto.server_collect(group, reports, config, self.auth_pks)
        except RoundAbort:
            self._server_cpu_us += (time.perf_counter_ns() - start) // 1000
            return "abort", None, None, 1
        self._server_cpu_us += (time.perf_counter_ns() - start) // 1000

        expected = np.zeros(config.vector_len, dtype="<u4")
        for i in collect.survivors:
            expected += xs[i]

        views = self._server_views(collect)
        if self.spec.mode == "oneround":
            outcome, z, final_round = self._oneround_checkflow(config, collect, views)
        else:
            outcome, z, final_round = self._tss_checkflow(config, collect, views)
        if outcome == "opened":
            outcome = "sum_ok" if np.array_equal(z, expected) else "wrong_sum"
        return outcome, z, expected, final_round

    def _server_views(self, collect) -> Dict[str, Tuple[Tuple[int, ...], Tuple[int, ...], Tuple]]:
        """The honest view and, under inconsistent_sets, the doctored one."""
        honest = (collect.survivors, collect.dropouts, collect.signatures)
        views = {"honest": honest, "goal": honest}
        if self.script.mode == "inconsistent_sets" and collect.survivors:
            victim = collect.survivors[-1]
            doctored = (
                tuple(s for s in collect.survivors if s != victim),
                tuple(sorted(collect.dropouts + (victim,))),
                tuple(p for p in collect.signatures if p[0] != victim),
            )
            views["doctored"] = doctored
            views["goal"] = doctored
        return views

    def _view_for(self, member: int, views) -> Tuple[Tuple[int, ...], Tuple[int, ...], Tuple]:
        if self.script.mode == "inconsistent_sets":
            if self.script.partition.get(member, 0) != 0:
                return views["doctored"]
        return views["honest"]

    def _goal_collect(self, collect, views):
        """The collect result the server actually unmasks against.

        Under the set-splitting attack the doctored sets keep the honest
        masked total; the point of the attack is recovering the victim's
        masks, and the consistency check is what must stop it.
        """
        survivors, dropouts, signatures = views["goal"]
        if survivors == collect.survivors:
            return collect
        return proto.CollectResult(
            survivors=survivors,
            dropouts=dropouts,
            signatures=signatures,
            masked_sum=collect.masked_sum,
        )

    def _oneround_checkflow(self, config, collect, views):
        group, script = self.group, self.script
        t = config.iteration
        for member in sorted(self.decryptors):
            survivors, dropouts, signatures = self._view_for(member, views)
            self._send(
                SERVER, member,
                CheckReq(
                    iteration=t, digest=config.model_digest,
                    survivors=survivors, dropouts=dropouts, signatures=signatures,
                ),
            )
        responses: List[DecResp] = []
        for sender, receiver, data in self._drain():
            req = decode_message(group, data)
            state = self.decryptors[receiver]
            ku_rng = _sub_rng(self.seed, f"ku/{receiver}/{t}")

            def handle(state=state, req=req):
                try:
                    return proto.decryptor_respond(group, state, req, config, ku_rng)
                except ConsistencyAbort:
                    return None

            resp = self._deliver(receiver, "CHECKREQ", data, handle)
            if resp is not None:
                self._send(receiver, SERVER, resp)
        for sender, receiver, data in self._drain():
            msg = decode_message(group, data)
            self._deliver(SERVER, "DECRESP", data, lambda: None)
            if script.mode == "drop_responses" and msg.sender in script.drops:
                continue
            responses.append(msg)

        goal = self._goal_collect(collect, views)
        start = time.perf_counter_ns()
        try:
            z = proto.server_unmask(group, self.view, goal, responses, config)
        except RoundAbort:
            self._server_cpu_us += (time.perf_counter_ns() - start) // 1000
            return "abort", None, 2
        self._server_cpu_us += (time.perf_counter_ns() - start) // 1000
        return "opened", z, 2

    def _tss_checkflow(self, config, collect, views):
        group, script = self.group, self.script
        t = config.iteration
        for member in sorted(self.decryptors):
            survivors, dropouts, signatures = self._view_for(member, views)
            self._send(
                SERVER, member,
                TssReq(
                    iteration=t, digest=config.model_digest,
                    survivors=survivors, dropouts=dropouts, signatures=signatures,
                ),
            )
        sessions = {}
        partials_us: Dict[int, int] = {}
        partials_ud: Dict[int, int] = {}
        for sender, receiver, data in self._drain():
            req = decode_message(group, data)
            state = self.decryptors[receiver]

            def handle(state=state, req=req):
                try:
                    return tss_handle_request(group, state, req, config)
                except ConsistencyAbort:
                    return None

            result = self._deliver(receiver, "TSSREQ", data, handle)
            if result is None:
                continue
            session, part = result
            sessions[receiver] = session
            if part is not None:
                self._send(receiver, SERVER, part)
        for sender, receiver, data in self._drain():
            part = decode_message(group, data)
            self._deliver(SERVER, "TSSPART", data, lambda: None)
            if script.mode == "drop_responses" and part.sender in script.drops:
                continue
            pos = self.view.position(part.sender)
            partials_us[pos] = part.survivor_part
            partials_ud[pos] = part.dropout_part

        goal_survivors, goal_dropouts, _ = views["goal"]
        commitments = self.decryptors[self.view.msk_holders[0]].dkg_commitments
        pk_shares = pk_shares_from_commitments(
            group, commitments, set(partials_us) | set(partials_ud)
        )
        start = time.perf_counter_ns()
        try:
            survivor_sig = tss_combine(
                group, survivor_message(goal_survivors, t),
                partials_us, self.view.kappa, self.verifier, pk_shares,
            )
            dropout_sig = tss_combine(
                group, dropout_message(goal_dropouts, t),
                partials_ud, self.view.kappa, self.verifier, pk_shares,
            )
        except (CombineReject, InsufficientShares, VerifyUnavailable):
            self._server_cpu_us += (time.perf_counter_ns() - start) // 1000
            return "abort", None, 2
        self._server_cpu_us += (time.perf_counter_ns() - start) // 1000
        full = TssFull(iteration=t, survivor_sig=survivor_sig, dropout_sig=dropout_sig)

        for member in sorted(sessions):
            self._send(SERVER, member, full)
        releases: List[DecResp] = []
        for sender, receiver, data in self._drain():
            msg = decode_message(group, data)
            session = sessions[receiver]

            def handle(session=session, msg=msg):
                try:
                    return tss_handle_full(group, session, msg, self.verifier, config)
                except ConsistencyAbort:
                    return None

            resp = self._deliver(receiver, "TSSFULL", data, handle)
            if resp is not None:
                self._send(receiver, SERVER, resp)
        for sender, receiver, data in self._drain():
            msg = decode_message(group, data)
            self._deliver(SERVER, "DECRESP", data, lambda: None)
            if script.mode == "drop_responses" and msg.sender in script.drops:
                continue
            releases.append(msg)

        goal = self._goal_collect(collect, views)
        participants = config.participants()
        degree = config.degree(len(participants))
        edges = proto._dropout_edges(
            config.model_digest, t, participants, goal.survivors, goal.dropouts, degree
        )
        slots = len(goal.survivors) + len(edges)
        opened: Dict[int, List[int]] = {}
        for resp in releases:
            if resp.sender not in self.view.positions or resp.has_blinded_key:
                continue
            elements = proto._decode_payload_elements(group, resp.seed_box, slots)
            if elements is not None:
                opened[self.view.position(resp.sender)] = elements
        start = time.perf_counter_ns()
        try:
            z = proto.unmask_from_elements(group, self.view, opened, goal, config)
        except RoundAbort:
            self._server_cpu_us += (time.perf_counter_ns() - start) // 1000
            return "abort", None, 3
        self._server_cpu_us += (time.perf_counter_ns() - start) // 1000
        return "opened", z, 3

    # -- dynamic join ------------------------------------------------------

    def join(self, new_clients: int, kappa2: int) -> None:
        """Admit new clients, all of them seated as new committee members.

        Existing committee members receive nothing; existing clients send
        exactly one extension box per new member. The master key is not
        re-dealt, so the new members hold seed shares but no key share.
        """
        group, spec = self.group, self.spec
        self._current_phase = "join"
        first = spec.n_clients + 1
        new_ids = tuple(range(first, first + new_clients))
        key_rng = _sub_rng(self.seed, f"join-keys/{self.iterations_run}")
        for i in new_ids:
            self.triples[i] = keygen_triple(group, key_rng)

        for i in new_ids:
            self._send(i, SERVER, PkCommit(sender=i, public_keys=self.triples[i].public_keys()))
        new_records = []
        for sender, receiver, data in self._drain():
            msg = decode_message(group, data)
            self._deliver(SERVER, "PKCOMMIT", data, lambda: None)
            new_records.append((msg.sender, msg.public_keys))
        records = [
            (i, self.triples[i].public_keys()) for i in sorted(self.triples) if i < first
        ] + sorted(new_records)
        self.rootsig = proto.build_rootsig(group, self.server_triple.authcrypt.sk, records)
        self.auth_pks = {pid: pks[1] for pid, pks in records}

        everyone = sorted(self.triples)
        for i in everyone:
            self._send(SERVER, i, self.rootsig)
        rootsig_at: Dict[int, RootSig] = {}
        for sender, receiver, data in self._drain():
            msg = decode_message(group, data)
            self._deliver(receiver, "ROOTSIG", data, lambda: None)
            rootsig_at[receiver] = msg

        levels2 = self.levels + [(new_ids, kappa2)]
        server_pk = self.server_triple.authcrypt.pk
        for i in sorted(self.clients):
            ext_rng = _sub_rng(self.seed, f"extend/{i}/{self.iterations_run}")
            proto.client_note_roster(group, self.clients[i], rootsig_at[i], server_pk)
            boxes = proto.client_extend_dealings(
                group, self.clients[i], new_ids, kappa2, ext_rng
            )
            for box in boxes:
                self._send(i, box.recipient, box)
        for i in self.committee:
            proto.decryptor_note_extension(
                group, self.decryptors[i], rootsig_at[i], server_pk, new_ids
            )
        for i in new_ids:
            self.decryptors[i] = proto.new_decryptor_state(
                group, i, self.triples[i], rootsig_at[i], server_pk, levels2
            )
            self.decryptors[i].mpk = self.mpk
        for i in new_ids:
            deal_rng = _sub_rng(self.seed, f"deal/{i}")
            state, boxes = proto.pre_round_client(
                group, i, self.triples[i], rootsig_at[i], server_pk, levels2, deal_rng
            )
            self.clients[i] = state
            for box in boxes:
                self._send(i, box.recipient, box)
        for sender, receiver, data in self._drain():
            box = decode_message(group, data)
            target = self.decryptors[receiver]
            self._deliver(
                receiver, "SEEDSHARE", data,
                lambda: proto.decryptor_ingest_seed_share(group, target, box),
            )

        self.levels = levels2
        self.committee = self.committee + new_ids
        self.view = proto.committee_view(self.levels, mpk=self.mpk)
        self.spec = replace(spec, n_clients=spec.n_clients + new_clients)

    def result(self) -> SessionResult:
        return SessionResult(
            rows=list(self.rows),
            outcomes=list(self.outcomes),
            sums=list(self.sums),
            expected=list(self.expected),
            committee=self.committee,
        )


def run_session(
    group: GroupSpec,
    spec: SessionSpec,
    script: Optional[AdversaryScript] = None,
    seed: int = 0,
    dropout_plan: Optional[Mapping[int, Sequence[int]]] = None,
    verifier: Optional[VerifierBackend] = None,
) -> SessionResult:
    """Pre-round once, then every configured iteration, start to finish."""
    session = Session(group, spec, script=script, seed=seed, verifier=verifier)
    for t in range(1, spec.iterations + 1):
        per_iter = None
        if dropout_plan is not None:
            per_iter = {t: dropout_plan.get(t, ())}
        session.run_iteration(t, dropout_plan=per_iter)
    return session.result()
