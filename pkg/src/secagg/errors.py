"""Exception types shared across the aggregation engine.

Every failure mode a caller is expected to branch on has a dedicated
class here; modules raise these rather than bare ValueError so the
simulator and harness can map errors to outcomes and exit codes.
"""

from __future__ import annotations


class SecaggError(Exception):
    """Base class for all engine errors."""


# --------------------------------------------------------------------------
# group arithmetic / interpolation


class InvalidIndexSet(SecaggError):
    """Interpolation or sharing index set contains a zero or duplicate id."""


class MissingShare(SecaggError):
    """A coefficient references an index with no corresponding share."""


class EmptyExpansion(SecaggError):
    """Mask expansion requested with length zero."""


# --------------------------------------------------------------------------
# secret sharing / DKG


class ThresholdTooLarge(SecaggError):
    """Reconstruction threshold exceeds the number of holders."""


class InsufficientShares(SecaggError):
    """Fewer shares supplied than the reconstruction threshold."""


class DegenerateExtension(SecaggError):
    """A new sharing level whose threshold leaves no freedom over the old
    polynomial; issuing it would silently nullify the new threshold."""


class AccessDenied(SecaggError):
    """Share-holder set does not satisfy the hierarchical access structure."""


class DkgComplaint(SecaggError):
    """A dealt share failed its coefficient-commitment check.

    Carries the offending dealer id; complaint resolution is out of scope,
    the run aborts.
    """

    def __init__(self, dealer: int, message: str = ""):
        self.dealer = dealer
        super().__init__(message or f"share from dealer {dealer} failed commitment check")


# --------------------------------------------------------------------------
# authenticated crypto


class InvalidPeerKey(SecaggError):
    """Peer public key is the identity or outside the group."""


class AeAuthFailure(SecaggError):
    """Authenticated decryption failed; under the collection protocol this
    is the signal that the sender held a different view of the round."""


class InvalidIndex(SecaggError):
    """Merkle proof requested for a leaf position out of range."""


# --------------------------------------------------------------------------
# protocol state machines


class MissingSeed(SecaggError):
    """A neighbor's pairwise seed was never established (setup bug)."""


class InvalidConfig(SecaggError):
    """Round or experiment configuration violates a validity rule."""


class NotParticipant(SecaggError):
    """Operation requested for a client outside the participant set."""


class RoundAbort(SecaggError):
    """Server-side abort of the current iteration (quorum shortfall or
    too few decryptable responses)."""


class ConsistencyAbort(SecaggError):
    """Decryptor-side refusal: the announced survivor/dropout sets failed
    a consistency check, so no response is sent."""


class CombineReject(SecaggError):
    """Threshold-signature combination saw an ill-formed partial."""


class VerifyUnavailable(SecaggError):
    """No verification backend can check this signature share in the
    configured group."""


class InvalidPlan(SecaggError):
    """Dropout plan incompatible with the configured dropout bound."""
