"""Secure-aggregation protocol engine.

A server learns only the entrywise sum of clients' private vectors. The
engine implements the one-time pre-round phase (key commitment, DKG,
seed sharing), the two-round collection phase with a combined
consistency-check-and-unmask, dynamic joining via multilevel secret
sharing, an alternative threshold-signature cross-check, a deterministic
discrete-event simulator, and a measurement CLI.
"""

from .errors import SecaggError
from .groups import GroupSpec, bench_group, production_group, test_group
from .simnet import (
    AdversaryScript,
    DelayModel,
    Session,
    SessionResult,
    SessionSpec,
    inject_dropouts,
    run_session,
    write_metrics,
)

__version__ = "0.1.0"

__all__ = [
    "AdversaryScript",
    "DelayModel",
    "GroupSpec",
    "SecaggError",
    "Session",
    "SessionResult",
    "SessionSpec",
    "bench_group",
    "inject_dropouts",
    "production_group",
    "run_session",
    "test_group",
    "write_metrics",
    "__version__",
]
