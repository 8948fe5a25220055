"""Protocol-level Monte Carlo oracle.

Simulates the per-round physics (intensity and phase choices, Poisson photon
numbers, per-photon channel survival, dark counts, single-click detection),
the greedy maximal-interval pairing, basis sifting and key mapping, and
aggregates empirical statistics to validate the analytic model.

The detector model routes all surviving photons of a round to one uniformly
chosen detector and adds independent dark counts per detector; a round is
kept when exactly one detector fires.  This reproduces the analytic
click-probability formula up to O(p_d) double-click corrections and keeps
the Z-basis error exactly zero for p_d == 0.

Randomness comes from a counter-based Philox generator keyed by a 64-bit
seed; independent substreams for parallel chunks are derived by jumping the
generator per stream index.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np

from .model import (
    Scenario,
    pairing_rate,
    round_click_prob,
    single_photon_ratio,
    z_bit_error,
    z_pair_ratio,
)

__all__ = [
    "Rounds",
    "RoundRecord",
    "PairRecord",
    "Estimate",
    "EmpiricalStats",
    "simulate_rounds",
    "pair_clicks",
    "sift_and_map",
    "estimate_statistics",
    "write_pair_trace",
]

PHASE_SLICES = 16


@dataclass(frozen=True)
class RoundRecord:
    """One protocol round (materialized view of a Rounds row)."""

    index: int
    z_a: int
    z_b: int
    n_a: int
    n_b: int
    clicked: bool
    detector: int  # 0 = L, 1 = R; meaningful only when clicked
    phase_a: int  # phase slice in [0, 16)
    phase_b: int


@dataclass
class Rounds:
    """Column-oriented round storage; behaves as a sequence of RoundRecord."""

    z_a: np.ndarray
    z_b: np.ndarray
    n_a: np.ndarray
    n_b: np.ndarray
    clicked: np.ndarray
    detector: np.ndarray
    phase_a: np.ndarray
    phase_b: np.ndarray

    def __len__(self) -> int:
        return len(self.z_a)

    def __getitem__(self, index: int) -> RoundRecord:
        return RoundRecord(
            index=index,
            z_a=int(self.z_a[index]),
            z_b=int(self.z_b[index]),
            n_a=int(self.n_a[index]),
            n_b=int(self.n_b[index]),
            clicked=bool(self.clicked[index]),
            detector=int(self.detector[index]),
            phase_a=int(self.phase_a[index]),
            phase_b=int(self.phase_b[index]),
        )

    def __iter__(self) -> Iterator[RoundRecord]:
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class PairRecord:
    """Two paired clicked rounds with their sift annotations.

    ``basis`` is None before sifting, then one of "Z", "X", "zero",
    "discard".  Key bits and the error flag are set for Z pairs (and key
    bits for kept X pairs); the error flag is only meaningful for Z pairs.
    """

    i: int
    j: int
    z_i: tuple[int, int]
    z_j: tuple[int, int]
    n_i: tuple[int, int]
    n_j: tuple[int, int]
    detector_i: int
    detector_j: int
    phase_i: tuple[int, int]
    phase_j: tuple[int, int]
    basis: str | None = None
    kappa_a: int | None = None
    kappa_b: int | None = None
    error: bool | None = None


def simulate_rounds(
    scenario: Scenario, n_rounds: int, seed: int, stream: int = 0
) -> Rounds:
    """Simulate the per-round preparation, channel and detection physics.

    Deterministic for fixed (scenario, n_rounds, seed, stream); separate
    streams are statistically independent.
    """
    if n_rounds < 1:
        raise ValueError(f"need at least one round, got {n_rounds}")
    bit_gen = np.random.Philox(seed)
    if stream:
        bit_gen = bit_gen.jumped(stream)
    rng = np.random.Generator(bit_gen)

    z_a = rng.integers(0, 2, n_rounds, dtype=np.uint8)
    z_b = rng.integers(0, 2, n_rounds, dtype=np.uint8)

    n_a = np.zeros(n_rounds, dtype=np.int16)
    n_b = np.zeros(n_rounds, dtype=np.int16)
    signal_a = np.flatnonzero(z_a)
    signal_b = np.flatnonzero(z_b)
    n_a[signal_a] = rng.poisson(scenario.mu_a, signal_a.size)
    n_b[signal_b] = rng.poisson(scenario.mu_b, signal_b.size)

    survived_a = np.zeros(n_rounds, dtype=np.int16)
    survived_b = np.zeros(n_rounds, dtype=np.int16)
    carrying_a = np.flatnonzero(n_a)
    carrying_b = np.flatnonzero(n_b)
    survived_a[carrying_a] = rng.binomial(n_a[carrying_a], scenario.eta_a)
    survived_b[carrying_b] = rng.binomial(n_b[carrying_b], scenario.eta_b)

    photon_port = rng.integers(0, 2, n_rounds, dtype=np.uint8)
    p_d = scenario.params.p_d
    dark_l = rng.random(n_rounds) < p_d
    dark_r = rng.random(n_rounds) < p_d

    got_photon = (survived_a + survived_b) > 0
    fired_l = (got_photon & (photon_port == 0)) | dark_l
    fired_r = (got_photon & (photon_port == 1)) | dark_r
    clicked = fired_l ^ fired_r
    detector = np.where(fired_r, np.uint8(1), np.uint8(0))

    phase_a = rng.integers(0, PHASE_SLICES, n_rounds, dtype=np.uint8)
    phase_b = rng.integers(0, PHASE_SLICES, n_rounds, dtype=np.uint8)

    return Rounds(
        z_a=z_a,
        z_b=z_b,
        n_a=n_a,
        n_b=n_b,
        clicked=clicked,
        detector=detector,
        phase_a=phase_a,
        phase_b=phase_b,
    )


def pair_clicks(rounds: Rounds, lam: float) -> list[PairRecord]:
    """Greedy left-to-right pairing of clicked rounds.

    At most one clicked round is pending.  The next click pairs with it when
    the index gap is within the maximal interval; otherwise the stale click
    is dropped and the new one becomes pending.  Each click joins at most
    one pair.
    """
    if not (lam == math.inf or lam >= 1):
        raise ValueError(f"pairing interval must be >= 1 or inf, got {lam}")
    pairs: list[PairRecord] = []
    pending = -1
    for index in np.flatnonzero(rounds.clicked):
        i = int(index)
        if pending < 0:
            pending = i
        elif i - pending <= lam:
            pairs.append(
                PairRecord(
                    i=pending,
                    j=i,
                    z_i=(int(rounds.z_a[pending]), int(rounds.z_b[pending])),
                    z_j=(int(rounds.z_a[i]), int(rounds.z_b[i])),
                    n_i=(int(rounds.n_a[pending]), int(rounds.n_b[pending])),
                    n_j=(int(rounds.n_a[i]), int(rounds.n_b[i])),
                    detector_i=int(rounds.detector[pending]),
                    detector_j=int(rounds.detector[i]),
                    phase_i=(int(rounds.phase_a[pending]), int(rounds.phase_b[pending])),
                    phase_j=(int(rounds.phase_a[i]), int(rounds.phase_b[i])),
                )
            )
            pending = -1
        else:
            pending = i
    return pairs


def _party_label(bit_i: int, bit_j: int) -> str:
    if bit_i == bit_j:
        return "zero" if bit_i == 0 else "X"
    return "Z"


def sift_and_map(
    pairs: Sequence[PairRecord], scenario: Scenario, seed: int = 0
) -> list[PairRecord]:
    """Basis sifting and key mapping.

    Z pairs map key bits from which round carried the signal pulse (Alice
    and Bob use opposite conventions, so matching combinations agree).  X
    pairs derive bits from the phase-slice difference, keep only matching
    alignment angles, flip Bob's bit on an (L,R)/(R,L) detector pattern and
    then pass it through the misalignment channel.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    half = PHASE_SLICES // 2
    out: list[PairRecord] = []
    for pair in pairs:
        label_a = _party_label(pair.z_i[0], pair.z_j[0])
        label_b = _party_label(pair.z_i[1], pair.z_j[1])
        if label_a != label_b:
            out.append(replace(pair, basis="discard"))
            continue
        if label_a == "zero":
            out.append(replace(pair, basis="zero"))
            continue
        if label_a == "Z":
            kappa_a = 0 if (pair.z_i[0], pair.z_j[0]) == (0, 1) else 1
            kappa_b = 1 if (pair.z_i[1], pair.z_j[1]) == (0, 1) else 0
            out.append(
                replace(
                    pair,
                    basis="Z",
                    kappa_a=kappa_a,
                    kappa_b=kappa_b,
                    error=kappa_a != kappa_b,
                )
            )
            continue
        # X pair: bits and alignment angles from the phase-slice difference
        diff_a = (pair.phase_j[0] - pair.phase_i[0]) % PHASE_SLICES
        diff_b = (pair.phase_j[1] - pair.phase_i[1]) % PHASE_SLICES
        if diff_a % half != diff_b % half:
            out.append(replace(pair, basis="discard"))
            continue
        kappa_a = 1 if diff_a >= half else 0
        kappa_b = 1 if diff_b >= half else 0
        if pair.detector_i != pair.detector_j:
            kappa_b ^= 1
        if rng.random() < scenario.params.e_d:
            kappa_b ^= 1
        out.append(replace(pair, basis="X", kappa_a=kappa_a, kappa_b=kappa_b))
    return out


@dataclass(frozen=True)
class Estimate:
    """A binomial frequency estimate with its standard error."""

    value: float
    std_error: float
    numerator: int
    denominator: int

    def within_sigmas(self, reference: float, sigmas: float = 3.0) -> bool:
        band = sigmas * self.std_error
        return abs(self.value - reference) <= band


def _estimate(numerator: int, denominator: int) -> Estimate | None:
    if denominator == 0:
        return None
    value = numerator / denominator
    return Estimate(
        value=value,
        std_error=math.sqrt(max(value * (1.0 - value), 0.0) / denominator),
        numerator=numerator,
        denominator=denominator,
    )


@dataclass(frozen=True)
class EmpiricalStats:
    """Empirical counterparts of the analytic per-round quantities.

    Estimates are None when their denominator is empty (flagged undefined).
    """

    p_hat: Estimate | None
    r_p_hat: Estimate | None
    r_s_hat: Estimate | None
    e_z_hat: Estimate | None
    q_bar_hat: Estimate | None


def estimate_statistics(
    pairs: Sequence[PairRecord], rounds: Rounds, scenario: Scenario
) -> EmpiricalStats:
    """Aggregate click, pairing, sifting and error frequencies.

    ``pairs`` must already be sifted.  The single-photon tag uses the source
    photon numbers: exactly one photon per party in total across the pair.
    """
    n_rounds = len(rounds)
    clicks = int(np.count_nonzero(rounds.clicked))
    z_pairs = [p for p in pairs if p.basis == "Z"]
    z_errors = sum(1 for p in z_pairs if p.error)
    single_photon = sum(
        1 for p in z_pairs if p.n_i[0] + p.n_j[0] == 1 and p.n_i[1] + p.n_j[1] == 1
    )
    return EmpiricalStats(
        p_hat=_estimate(clicks, n_rounds),
        r_p_hat=_estimate(len(pairs), n_rounds),
        r_s_hat=_estimate(len(z_pairs), len(pairs)),
        e_z_hat=_estimate(z_errors, len(z_pairs)),
        q_bar_hat=_estimate(single_photon, len(z_pairs)),
    )


def analytic_reference(scenario: Scenario) -> dict[str, float]:
    """Model-core values the empirical statistics are compared against."""
    p = round_click_prob(scenario)
    return {
        "p": p,
        "r_p": pairing_rate(p, scenario.lam),
        "r_s": z_pair_ratio(scenario),
        "e_z": z_bit_error(scenario),
        "q_bar": single_photon_ratio(scenario),
    }


def write_pair_trace(pairs: Sequence[PairRecord], path: str) -> None:
    """Dump one CSV row per pair: i, j, basis, kappa_a, kappa_b, error."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["i", "j", "basis", "kappa_a", "kappa_b", "error"])
        for pair in pairs:
            writer.writerow(
                [
                    pair.i,
                    pair.j,
                    pair.basis if pair.basis is not None else "",
                    pair.kappa_a if pair.kappa_a is not None else "",
                    pair.kappa_b if pair.kappa_b is not None else "",
                    int(pair.error) if pair.error is not None else "",
                ]
            )
