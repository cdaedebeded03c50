"""Threshold secret sharing over a prime-order scalar field.

Implements plain Shamir sharing, a hierarchical scheme in which later
levels receive shares of the same secret at strictly larger thresholds,
and a commitment-checked distributed key generation.  All polynomial
arithmetic happens mod q, the group order; group elements only appear
in the DKG commitments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .errors import (
    AccessDenied,
    DegenerateExtension,
    DkgComplaint,
    InsufficientShares,
    InvalidIndexSet,
    ThresholdTooLarge,
)
from .groups import GroupSpec, interpolate_at_zero


@dataclass(frozen=True)
class Share:
    """One evaluation point of a dealing polynomial.

    ``level`` is 0 for plain Shamir dealings.  Hierarchical dealings tag
    each share with the level it was issued at, starting from 1.
    """

    holder: int
    value: int
    level: int = 0

    def __post_init__(self) -> None:
        if self.holder < 1:
            raise InvalidIndexSet(f"share holder id must be positive, got {self.holder}")
        if self.value < 0:
            raise InvalidIndexSet("share value must be a nonnegative scalar")
        if self.level < 0:
            raise InvalidIndexSet("share level must be nonnegative")


def encode_share(group: GroupSpec, share: Share) -> bytes:
    """Serialize a share as level byte, holder scalar, value scalar."""
    if share.level > 255:
        raise InvalidIndexSet(f"share level {share.level} does not fit in one byte")
    return (
        bytes([share.level])
        + group.encode_scalar(share.holder)
        + group.encode_scalar(share.value)
    )


def decode_share(group: GroupSpec, data: bytes) -> Share:
    width = group.scalar_bytes
    if len(data) != 1 + 2 * width:
        raise ValueError(f"share encoding must be {1 + 2 * width} bytes, got {len(data)}")
    holder = group.decode_scalar(data[1 : 1 + width])
    value = group.decode_scalar(data[1 + width :])
    return Share(holder=holder, value=value, level=data[0])


# ---------------------------------------------------------------------------
# Polynomial arithmetic mod q.


def _poly_eval(coeffs: Sequence[int], x: int, q: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % q
    return acc


def _poly_add(a: Sequence[int], b: Sequence[int], q: int) -> List[int]:
    out = [0] * max(len(a), len(b))
    for i, c in enumerate(a):
        out[i] = c % q
    for i, c in enumerate(b):
        out[i] = (out[i] + c) % q
    return out


def _poly_mul(a: Sequence[int], b: Sequence[int], q: int) -> List[int]:
    if not a or not b:
        return []
    out = [0] * (len(a) + len(b) - 1)
    for i, ca in enumerate(a):
        if ca == 0:
            continue
        for j, cb in enumerate(b):
            out[i + j] = (out[i + j] + ca * cb) % q
    return out


def _vanishing(xs: Sequence[int], q: int) -> List[int]:
    """Monic polynomial with roots at every x in xs."""
    out = [1]
    for x in xs:
        out = _poly_mul(out, [(-x) % q, 1], q)
    return out


def _interpolate_poly(points: Sequence[Tuple[int, int]], q: int) -> List[int]:
    """Coefficients of the unique degree < len(points) interpolant."""
    out: List[int] = [0]
    xs = [x for x, _ in points]
    for i, (xi, yi) in enumerate(points):
        basis = [1]
        denom = 1
        for j, xj in enumerate(xs):
            if j == i:
                continue
            basis = _poly_mul(basis, [(-xj) % q, 1], q)
            denom = denom * (xi - xj) % q
        scale = yi * pow(denom, -1, q) % q
        out = _poly_add(out, [c * scale % q for c in basis], q)
    return out


def _check_holder_ids(holders: Sequence[int], q: int) -> None:
    seen = set()
    for h in holders:
        if h < 1:
            raise InvalidIndexSet(f"holder id must be positive, got {h}")
        r = h % q
        if r == 0:
            raise InvalidIndexSet(f"holder id {h} collapses to zero mod the group order")
        if r in seen:
            raise InvalidIndexSet(f"holder id {h} collides with another id mod the group order")
        seen.add(r)


# ---------------------------------------------------------------------------
# Plain Shamir sharing.


def shares_from_poly(
    coeffs: Sequence[int], holders: Iterable[int], q: int, level: int = 0
) -> List[Share]:
    """Evaluate a fixed dealing polynomial at every holder id.

    The random choice of polynomial lives in the callers; keeping the
    evaluation step separate lets tests drive known polynomials.
    """
    ordered = sorted(holders)
    _check_holder_ids(ordered, q)
    return [Share(holder=h, value=_poly_eval(coeffs, h, q), level=level) for h in ordered]


def ss_share(secret: int, threshold: int, holders: Iterable[int], q: int, rng) -> List[Share]:
    """Deal ``secret`` to ``holders`` so any ``threshold`` of them recover it."""
    ordered = sorted(holders)
    if len(set(ordered)) != len(ordered):
        raise InvalidIndexSet("holder ids must be distinct")
    if threshold < 1:
        raise ThresholdTooLarge(f"threshold must be at least 1, got {threshold}")
    if threshold > len(ordered):
        raise ThresholdTooLarge(
            f"threshold {threshold} exceeds the {len(ordered)} available holders"
        )
    coeffs = [secret % q] + [rng.randrange(q) for _ in range(threshold - 1)]
    return shares_from_poly(coeffs, ordered, q)


def ss_reconstruct(shares: Iterable[Share], threshold: int, q: int) -> int:
    """Interpolate the dealt secret from at least ``threshold`` shares.

    Inconsistent shares are not detected; the caller is responsible for
    transporting shares over an authenticated channel.
    """
    collected = list(shares)
    if len(collected) < threshold:
        raise InsufficientShares(
            f"need at least {threshold} shares, got {len(collected)}"
        )
    levels = {s.level for s in collected}
    if len(levels) > 1:
        raise InvalidIndexSet(
            "shares from multiple levels cannot be combined here, use ml_reconstruct"
        )
    points = {}
    for s in collected:
        if s.holder in points:
            raise InvalidIndexSet(f"duplicate share for holder {s.holder}")
        points[s.holder] = s.value
    return interpolate_at_zero(points, q)


# ---------------------------------------------------------------------------
# Hierarchical sharing.  The dealer keeps one polynomial per level; every
# later polynomial agrees with its predecessors on all previously issued
# points, so old shares stay valid when the holder set grows.


@dataclass(frozen=True)
class AccessStructure:
    """Ordered levels of holders with strictly increasing cumulative thresholds.

    A set of holders is authorized when, for some level i, it contains at
    least kappa_i members drawn from levels 1 through i.
    """

    levels: Tuple[Tuple[frozenset, int], ...]

    def __post_init__(self) -> None:
        if not self.levels:
            raise InvalidIndexSet("access structure needs at least one level")
        seen: set = set()
        prev_kappa = 0
        total = 0
        for members, kappa in self.levels:
            if not members:
                raise InvalidIndexSet("access structure level may not be empty")
            if any(m < 1 for m in members):
                raise InvalidIndexSet("holder ids must be positive")
            if members & seen:
                raise InvalidIndexSet("access structure levels must be disjoint")
            if kappa <= prev_kappa:
                raise DegenerateExtension(
                    f"cumulative thresholds must strictly increase, got {kappa} after {prev_kappa}"
                )
            if prev_kappa and kappa <= total:
                raise DegenerateExtension(
                    f"threshold {kappa} must exceed the {total} holders already dealt to"
                )
            seen |= members
            total += len(members)
            prev_kappa = kappa

    @property
    def depth(self) -> int:
        return len(self.levels)

    def level_of(self, holder: int) -> int:
        for idx, (members, _kappa) in enumerate(self.levels, start=1):
            if holder in members:
                return idx
        raise InvalidIndexSet(f"holder {holder} does not appear in the access structure")

    def satisfied_by(self, member_levels: Iterable[int]) -> bool:
        """Whether holders at the given levels form an authorized set."""
        counts: Dict[int, int] = {}
        for lv in member_levels:
            counts[lv] = counts.get(lv, 0) + 1
        cumulative = 0
        for idx, (_members, kappa) in enumerate(self.levels, start=1):
            cumulative += counts.get(idx, 0)
            if cumulative >= kappa:
                return True
        return False


@dataclass
class DealerState:
    """Single-owner record of a hierarchical dealing in progress."""

    q: int
    secret: int
    levels: List[Tuple[Tuple[int, ...], int]] = field(default_factory=list)
    polys: List[List[int]] = field(default_factory=list)
    issued: Dict[int, Share] = field(default_factory=dict)

    def access_structure(self) -> AccessStructure:
        return AccessStructure(
            levels=tuple((frozenset(members), kappa) for members, kappa in self.levels)
        )

    @property
    def holder_count(self) -> int:
        return len(self.issued)


def ml_deal_first_level(
    secret: int, threshold: int, holders: Iterable[int], q: int, rng
) -> Tuple[DealerState, List[Share]]:
    """Open a hierarchical dealing with a plain Shamir first level."""
    ordered = sorted(holders)
    if len(set(ordered)) != len(ordered):
        raise InvalidIndexSet("holder ids must be distinct")
    if threshold < 1:
        raise ThresholdTooLarge(f"threshold must be at least 1, got {threshold}")
    if threshold > len(ordered):
        raise ThresholdTooLarge(
            f"threshold {threshold} exceeds the {len(ordered)} available holders"
        )
    coeffs = [secret % q] + [rng.randrange(q) for _ in range(threshold - 1)]
    shares = shares_from_poly(coeffs, ordered, q, level=1)
    state = DealerState(
        q=q,
        secret=secret % q,
        levels=[(tuple(ordered), threshold)],
        polys=[coeffs],
        issued={s.holder: s for s in shares},
    )
    return state, shares


def ml_extend_level(
    state: DealerState, threshold: int, holders: Iterable[int], rng
) -> Tuple[DealerState, List[Share]]:
    """Add a level at a larger threshold without disturbing existing shares.

    The new polynomial passes through the origin point and every point
    already issued, which pins threshold_prev + extra coefficients; the
    rest are drawn fresh.  That interpolation system only has room for a
    new polynomial when the threshold clears the number of points already
    fixed, hence the DegenerateExtension guard.
    """
    q = state.q
    new_ordered = sorted(holders)
    if len(set(new_ordered)) != len(new_ordered):
        raise InvalidIndexSet("holder ids must be distinct")
    prior_holders = [h for members, _k in state.levels for h in members]
    overlap = set(new_ordered) & set(prior_holders)
    if overlap:
        raise InvalidIndexSet(f"holders {sorted(overlap)} already hold shares")
    _check_holder_ids(prior_holders + new_ordered, q)

    prev_threshold = state.levels[-1][1]
    fixed = len(prior_holders) + 1
    if threshold <= prev_threshold:
        raise DegenerateExtension(
            f"threshold must grow past {prev_threshold}, got {threshold}"
        )
    if threshold < fixed:
        raise DegenerateExtension(
            f"threshold {threshold} leaves no room beside the {fixed} fixed points"
        )

    prev_poly = state.polys[-1]
    points = [(0, state.secret)] + [(h, _poly_eval(prev_poly, h, q)) for h in prior_holders]
    base = _interpolate_poly(points, q)
    vanish = _vanishing([x for x, _y in points], q)
    blind = [rng.randrange(q) for _ in range(threshold - fixed)]
    next_poly = _poly_add(base, _poly_mul(vanish, blind, q), q)
    while len(next_poly) < threshold:
        next_poly.append(0)

    level = len(state.levels) + 1
    shares = shares_from_poly(next_poly, new_ordered, q, level=level)
    state.levels.append((tuple(new_ordered), threshold))
    state.polys.append(next_poly)
    for s in shares:
        state.issued[s.holder] = s
    return state, shares


def ml_reconstruct(shares: Iterable[Share], structure: AccessStructure, q: int) -> int:
    """Recover the secret from any authorized set of hierarchical shares.

    Shares at level i lie on the level-i polynomial and on every deeper
    one, so once levels 1..i contribute kappa_i shares between them, the
    level-i polynomial is fully determined and shares from deeper levels
    can be ignored.
    """
    collected = list(shares)
    holders = [s.holder for s in collected]
    if len(set(holders)) != len(holders):
        raise InvalidIndexSet("duplicate holder in reconstruction set")
    for s in collected:
        if s.level < 1 or s.level > structure.depth:
            raise InvalidIndexSet(f"share level {s.level} not dealt in this structure")
        if s.holder not in structure.levels[s.level - 1][0]:
            raise InvalidIndexSet(
                f"holder {s.holder} was not dealt to at level {s.level}"
            )
    cumulative = 0
    for idx, (_members, kappa) in enumerate(structure.levels, start=1):
        subset = [s for s in collected if s.level <= idx]
        if len(subset) >= kappa:
            return interpolate_at_zero({s.holder: s.value for s in subset}, q)
    raise AccessDenied("share set does not satisfy the access structure")


# ---------------------------------------------------------------------------
# Distributed key generation.  Every participant deals a random scalar with
# coefficient commitments; the master secret is the sum of all dealt
# scalars, held jointly as the sum of each participant's received shares.


@dataclass(frozen=True)
class DkgDeal:
    """One participant's contribution: commitments plus addressed shares."""

    dealer: int
    commitments: Tuple[int, ...]
    shares: Mapping[int, Share]


@dataclass(frozen=True)
class DkgOutcome:
    holder: int
    my_share: Share
    mpk: int
    commitments: Mapping[int, Tuple[int, ...]]


def dkg_deal(
    group: GroupSpec, dealer: int, secret: int, threshold: int, holders: Iterable[int], rng
) -> DkgDeal:
    ordered = sorted(holders)
    if threshold < 1:
        raise ThresholdTooLarge(f"threshold must be at least 1, got {threshold}")
    if threshold > len(ordered):
        raise ThresholdTooLarge(
            f"threshold {threshold} exceeds the {len(ordered)} participants"
        )
    coeffs = [secret % group.q] + [rng.randrange(group.q) for _ in range(threshold - 1)]
    shares = shares_from_poly(coeffs, ordered, group.q)
    return DkgDeal(
        dealer=dealer,
        commitments=tuple(group.exp_g(c) for c in coeffs),
        shares={s.holder: s for s in shares},
    )


def dkg_verify_share(group: GroupSpec, share: Share, commitments: Sequence[int]) -> bool:
    """Check one received share against the dealer's coefficient commitments.

    The expected value prod_j C_j^(x^j) is folded Horner-style, so every
    exponent is the small holder index x rather than a full-width power.
    """
    expected = group.identity
    for commitment in reversed(commitments):
        expected = group.mul(group.exp(expected, share.holder), commitment)
    return group.exp_g(share.value) == expected


def dkg_finalize(group: GroupSpec, holder: int, deals: Mapping[int, DkgDeal]) -> DkgOutcome:
    """Combine verified deals into this holder's share of the master key."""
    total = 0
    mpk = group.identity
    commitments: Dict[int, Tuple[int, ...]] = {}
    for dealer in sorted(deals):
        deal = deals[dealer]
        share = deal.shares.get(holder)
        if share is None:
            raise DkgComplaint(dealer, f"dealer {dealer} sent no share to holder {holder}")
        if not dkg_verify_share(group, share, deal.commitments):
            raise DkgComplaint(
                dealer, f"share from dealer {dealer} fails its commitment check"
            )
        total = (total + share.value) % group.q
        mpk = group.mul(mpk, deal.commitments[0])
        commitments[dealer] = deal.commitments
    return DkgOutcome(
        holder=holder,
        my_share=Share(holder=holder, value=total),
        mpk=mpk,
        commitments=commitments,
    )


def dkg_run(
    group: GroupSpec,
    participants: Iterable[int],
    threshold: int,
    rng,
    secrets: Optional[Mapping[int, int]] = None,
) -> Dict[int, DkgOutcome]:
    """Run the whole generation locally, returning every participant's view.

    ``secrets`` pins the scalars each participant deals, which gives test
    harnesses a ground-truth master secret to compare against.
    """
    ordered = sorted(participants)
    _check_holder_ids(ordered, group.q)
    deals = {}
    for dealer in ordered:
        secret = secrets[dealer] if secrets is not None else rng.randrange(group.q)
        deals[dealer] = dkg_deal(group, dealer, secret, threshold, ordered, rng)
    return {holder: dkg_finalize(group, holder, deals) for holder in ordered}
