"""Envelope framing and message codec contracts.

Golden byte strings are spelled out with struct in the tiny group,
where elements and scalars are single bytes and layouts can be checked
by eye. Roundtrips run on the mid-size group so multi-byte encodings
and strict-consumption checks get exercised too.
"""

import random
import struct

import numpy as np
import pytest

from secagg.crypto import pk_record
from secagg.sharing import Share
from secagg.wire import (
    MSG_CHECKREQ,
    MSG_DECRESP,
    MSG_MODEL,
    MSG_PKCOMMIT,
    MSG_REPORT,
    MSG_TSSREQ,
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
    canonical_sets,
    decode_id_set,
    decode_message,
    decode_seed_payload,
    deframe,
    encode_id_set,
    encode_message,
    encode_seed_payload,
    frame,
)


class TestFraming:
    def test_frame_layout(self):
        env = frame(0x05, b"abc")
        assert env == b"\x05\x03\x00\x00\x00abc"

    def test_roundtrip(self, rng):
        for _ in range(50):
            msg_type = rng.randrange(256)
            body = bytes(rng.randrange(256) for _ in range(rng.randrange(40)))
            assert deframe(frame(msg_type, body)) == (msg_type, body)

    def test_type_out_of_range(self):
        with pytest.raises(ValueError):
            frame(256, b"")
        with pytest.raises(ValueError):
            frame(-1, b"")

    def test_short_header(self):
        with pytest.raises(ValueError):
            deframe(b"\x05\x03\x00")

    def test_truncated_body(self):
        with pytest.raises(ValueError):
            deframe(b"\x05\x03\x00\x00\x00ab")

    def test_trailing_garbage(self):
        with pytest.raises(ValueError):
            deframe(b"\x05\x03\x00\x00\x00abcd")


class TestIdSets:
    def test_golden(self):
        assert encode_id_set([3, 1]) == struct.pack("<IQQ", 2, 1, 3)
        assert encode_id_set([]) == struct.pack("<I", 0)

    def test_canonical_sets_concatenates(self):
        blob = canonical_sets([2, 1], [5])
        assert blob == struct.pack("<IQQ", 2, 1, 2) + struct.pack("<IQ", 1, 5)

    def test_sorts_input_order_away(self, rng):
        for _ in range(30):
            ids = rng.sample(range(1, 200), rng.randrange(1, 12))
            shuffled = ids[:]
            rng.shuffle(shuffled)
            assert encode_id_set(ids) == encode_id_set(shuffled)

    def test_duplicate_rejected(self):
        with pytest.raises(ValueError):
            encode_id_set([4, 4])

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            encode_id_set([0, 2])
        with pytest.raises(ValueError):
            encode_id_set([-3])

    def test_decode_roundtrip(self, rng):
        for _ in range(30):
            ids = sorted(rng.sample(range(1, 500), rng.randrange(0, 10)))
            blob = encode_id_set(ids) + b"tail"
            decoded, offset = decode_id_set(blob, 0)
            assert decoded == tuple(ids)
            assert blob[offset:] == b"tail"

    def test_decode_rejects_unsorted(self):
        blob = struct.pack("<IQQ", 2, 3, 1)
        with pytest.raises(ValueError):
            decode_id_set(blob, 0)

    def test_decode_rejects_duplicates(self):
        blob = struct.pack("<IQQ", 2, 3, 3)
        with pytest.raises(ValueError):
            decode_id_set(blob, 0)

    def test_decode_rejects_truncation(self):
        blob = struct.pack("<IQ", 2, 1)
        with pytest.raises(ValueError):
            decode_id_set(blob, 0)


class TestSeedPayload:
    def test_golden(self, tiny_group):
        entries = [(0, Share(2, 5, level=0)), (3, Share(2, 7, level=1))]
        blob = encode_seed_payload(tiny_group, 1, 9, entries)
        assert blob == (
            struct.pack("<QQI", 1, 9, 2)
            + struct.pack("<Q", 0)
            + b"\x00\x02\x05"
            + struct.pack("<Q", 3)
            + b"\x01\x02\x07"
        )

    def test_roundtrip(self, sim_group, rng):
        for _ in range(20):
            owner = rng.randrange(1, 100)
            peers = sorted(rng.sample(range(1, 60), rng.randrange(0, 6)))
            entries = [
                (p, Share(rng.randrange(1, 40), sim_group.random_scalar(rng)))
                for p in [0] + peers
            ]
            blob = encode_seed_payload(sim_group, owner, 7, entries)
            assert decode_seed_payload(sim_group, blob) == (owner, 7, tuple(entries))

    def test_out_of_order_rejected(self, tiny_group):
        entries = [(3, Share(1, 1)), (0, Share(1, 2))]
        with pytest.raises(ValueError):
            encode_seed_payload(tiny_group, 1, 2, entries)

    def test_duplicate_peer_rejected(self, tiny_group):
        entries = [(0, Share(1, 1)), (4, Share(1, 2)), (4, Share(1, 3))]
        with pytest.raises(ValueError):
            encode_seed_payload(tiny_group, 1, 2, entries)

    def test_trailing_bytes_rejected(self, tiny_group):
        blob = encode_seed_payload(tiny_group, 1, 2, [(0, Share(1, 1))])
        with pytest.raises(ValueError):
            decode_seed_payload(tiny_group, blob + b"x")


class TestGoldenEnvelopes:
    def test_model(self, tiny_group):
        msg = Model(iteration=3, digest=bytes(range(32)))
        env = encode_message(tiny_group, msg)
        assert env == (
            bytes([MSG_MODEL])
            + struct.pack("<I", 40)
            + struct.pack("<Q", 3)
            + bytes(range(32))
        )

    def test_pk_commit(self, tiny_group):
        msg = PkCommit(sender=7, public_keys=(2, 4, 8))
        env = encode_message(tiny_group, msg)
        assert env == (
            bytes([MSG_PKCOMMIT])
            + struct.pack("<I", 11)
            + struct.pack("<Q", 7)
            + b"\x02\x04\x08"
        )

    def test_report(self, tiny_group):
        vec = np.array([1, 2**32 - 1], dtype="<u4")
        msg = Report(sender=2, iteration=1, vector=vec, signature=b"\x05\x06")
        env = encode_message(tiny_group, msg)
        assert env == (
            bytes([MSG_REPORT])
            + struct.pack("<I", 30)
            + struct.pack("<QQI", 2, 1, 2)
            + b"\x01\x00\x00\x00\xff\xff\xff\xff"
            + b"\x05\x06"
        )

    def test_rootsig_records_match_pk_record(self, tiny_group):
        msg = RootSig(
            root=b"\xaa" * 32,
            signature=b"\x01\x02",
            records=((1, (2, 4, 8)), (5, (3, 9, 13))),
        )
        body = msg.encode_body(tiny_group)
        record_region = body[32 + 2 + 4 :]
        assert record_region == (
            pk_record(tiny_group, 1, (2, 4, 8)) + pk_record(tiny_group, 5, (3, 9, 13))
        )


class TestRoundtrips:
    def _random_sig(self, group, rng):
        return bytes(rng.randrange(256) for _ in range(2 * group.scalar_bytes))

    def test_all_types(self, sim_group, rng):
        g = sim_group
        vec = np.array([rng.randrange(2**32) for _ in range(17)], dtype="<u4")
        messages = [
            PkCommit(3, (g.random_element(rng), g.random_element(rng), g.random_element(rng))),
            RootSig(
                root=bytes(rng.randrange(256) for _ in range(32)),
                signature=self._random_sig(g, rng),
                records=(
                    (1, (g.random_element(rng), g.random_element(rng), g.random_element(rng))),
                    (2, (g.random_element(rng), g.random_element(rng), g.random_element(rng))),
                ),
            ),
            SeedShare(sender=4, recipient=11, box=b"opaque ciphertext"),
            DkgDealMsg(
                dealer=6,
                recipient=2,
                commitments=(g.random_element(rng), g.random_element(rng)),
                box=b"share box",
            ),
            Model(iteration=9, digest=bytes(32)),
            CheckReq(
                iteration=2,
                digest=bytes(32),
                survivors=(1, 4, 6),
                dropouts=(2,),
                signatures=((1, self._random_sig(g, rng)), (4, self._random_sig(g, rng))),
            ),
            TssReq(
                iteration=2,
                digest=bytes(32),
                survivors=(1, 4),
                dropouts=(),
                signatures=(),
            ),
            DecResp(
                sender=8,
                iteration=2,
                seed_box=b"boxed seeds",
                blinded_key=g.random_element(rng),
                shares=((1, g.random_element(rng)), (3, g.random_element(rng))),
            ),
            DecResp(sender=9, iteration=2, seed_box=b"plain seeds"),
            TssPart(
                sender=5,
                iteration=3,
                survivor_part=g.random_element(rng),
                dropout_part=g.random_element(rng),
            ),
            TssFull(
                iteration=3,
                survivor_sig=g.random_element(rng),
                dropout_sig=g.random_element(rng),
            ),
        ]
        for msg in messages:
            decoded = decode_message(g, encode_message(g, msg))
            assert type(decoded) is type(msg)
            if isinstance(msg, Report):
                continue
            assert decoded == msg
        report = Report(sender=1, iteration=9, vector=vec, signature=self._random_sig(g, rng))
        decoded = decode_message(g, encode_message(g, report))
        assert decoded.sender == report.sender
        assert decoded.iteration == report.iteration
        assert decoded.signature == report.signature
        assert decoded.vector.dtype == np.dtype("<u4")
        assert np.array_equal(decoded.vector, vec)

    def test_empty_report_vector(self, tiny_group):
        msg = Report(sender=1, iteration=0, vector=np.zeros(0, "<u4"), signature=b"ab")
        decoded = decode_message(tiny_group, encode_message(tiny_group, msg))
        assert decoded.vector.shape == (0,)

    def test_tss_req_differs_only_in_type_byte(self, tiny_group):
        kwargs = dict(
            iteration=1,
            digest=bytes(32),
            survivors=(1, 2),
            dropouts=(3,),
            signatures=((1, b"xy"), (2, b"zw")),
        )
        check = encode_message(tiny_group, CheckReq(**kwargs))
        tss = encode_message(tiny_group, TssReq(**kwargs))
        assert check[0] == MSG_CHECKREQ
        assert tss[0] == MSG_TSSREQ
        assert check[1:] == tss[1:]
        assert type(decode_message(tiny_group, tss)) is TssReq

    def test_decresp_flag_encodes_key_presence(self, tiny_group):
        with_key = DecResp(sender=1, iteration=0, seed_box=b"b", blinded_key=13)
        without = DecResp(sender=1, iteration=0, seed_box=b"b")
        body_with = with_key.encode_body(tiny_group)
        body_without = without.encode_body(tiny_group)
        assert body_with[16] == 1
        assert body_without[16] == 0
        assert with_key.has_blinded_key
        assert not without.has_blinded_key


class TestMalformed:
    def test_unknown_type(self, tiny_group):
        with pytest.raises(ValueError):
            decode_message(tiny_group, frame(0x7F, b""))

    def test_model_trailing_byte(self, tiny_group):
        body = struct.pack("<Q", 1) + bytes(32) + b"x"
        with pytest.raises(ValueError):
            decode_message(tiny_group, frame(MSG_MODEL, body))

    def test_model_short_digest(self, tiny_group):
        body = struct.pack("<Q", 1) + bytes(31)
        with pytest.raises(ValueError):
            decode_message(tiny_group, frame(MSG_MODEL, body))

    def test_report_truncated_vector(self, tiny_group):
        body = struct.pack("<QQI", 1, 0, 4) + bytes(8) + b"ab"
        with pytest.raises(ValueError):
            decode_message(tiny_group, frame(MSG_REPORT, body))

    def test_decresp_bad_flags(self, tiny_group):
        body = struct.pack("<QQ", 1, 0) + b"\x02" + struct.pack("<I", 0) + struct.pack("<I", 0)
        with pytest.raises(ValueError):
            decode_message(tiny_group, frame(MSG_DECRESP, body))

    def test_checkreq_unsorted_survivors(self, tiny_group):
        body = (
            struct.pack("<Q", 1)
            + bytes(32)
            + struct.pack("<IQQ", 2, 5, 3)
            + struct.pack("<I", 0)
            + struct.pack("<I", 0)
        )
        with pytest.raises(ValueError):
            decode_message(tiny_group, frame(MSG_CHECKREQ, body))

    def test_out_of_range_element_rejected(self, tiny_group):
        body = struct.pack("<Q", 7) + bytes([2, 4, 0])
        with pytest.raises(ValueError):
            decode_message(tiny_group, frame(MSG_PKCOMMIT, body))

    def test_encode_checks_signature_length(self, tiny_group):
        msg = CheckReq(
            iteration=0,
            digest=bytes(32),
            survivors=(),
            dropouts=(),
            signatures=((1, b"much too long"),),
        )
        with pytest.raises(ValueError):
            msg.encode_body(tiny_group)

    def test_report_rejects_matrix(self, tiny_group):
        msg = Report(
            sender=1,
            iteration=0,
            vector=np.zeros((2, 2), "<u4"),
            signature=b"ab",
        )
        with pytest.raises(ValueError):
            msg.encode_body(tiny_group)
