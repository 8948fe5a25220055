"""Analytic channel and key-rate model for asymmetric mode-pairing QKD.

All formulas are exact in the dark-count rate and in the exponentials of the
weak-coherent-pulse statistics; the Taylor-linearized small-intensity model
(dark counts dropped, ``1 - exp(-x) -> x``) is provided separately as
:func:`linearized_key_rate` and is used as a cross-check oracle, never as the
production path.

Conventions:
    * An arm transmittance ``eta`` includes the detector efficiency, so a
      zero-length fiber has ``eta == eta_d``.
    * The maximal pairing interval is a float; ``math.inf`` selects the
      unbounded-interval limit exactly (pairing rate ``p / 2``), while large
      numeric values such as ``1e6`` evaluate the finite formula.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "ModelDegenerateError",
    "SystemParams",
    "Link",
    "IntensityBits",
    "Scenario",
    "KeyRateBreakdown",
    "transmittance_from_distance",
    "distance_from_transmittance",
    "link_at",
    "make_scenario",
    "click_prob_given_intensity",
    "click_prob_given_photons",
    "round_click_prob",
    "pairing_rate",
    "z_pair_ratio",
    "z_bit_error",
    "single_photon_ratio",
    "x_gain_and_phase_error",
    "binary_entropy",
    "key_rate",
    "linearized_key_rate",
]

# Relative tolerance for the distance/transmittance consistency check of Link.
_LINK_RTOL = 1e-9


class ModelDegenerateError(ValueError):
    """A requested ratio is undefined because its conditioning event has
    zero probability (no clicks, or no effective pairs)."""


@dataclass(frozen=True)
class SystemParams:
    """Device and post-processing parameters shared by both arms.

    Defaults are the standard performance-analysis values: 20% detector
    efficiency, 0.2 dB/km fiber, dark counts 1.2e-8 per detector per round,
    error-correction efficiency 1.15 and 4% misalignment.
    """

    eta_d: float = 0.20
    alpha: float = 0.20
    p_d: float = 1.2e-8
    f: float = 1.15
    e_d: float = 0.04
    e_0: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.eta_d <= 1.0:
            raise ValueError(f"detector efficiency must be in (0, 1], got {self.eta_d}")
        if self.alpha <= 0.0:
            raise ValueError(f"fiber attenuation must be positive, got {self.alpha}")
        if not 0.0 <= self.p_d < 1.0:
            raise ValueError(f"dark-count probability must be in [0, 1), got {self.p_d}")
        if self.f < 1.0:
            raise ValueError(f"error-correction efficiency must be >= 1, got {self.f}")
        # 0.5 permitted so the all-noise limit e_d == e_0 stays constructible.
        if not 0.0 <= self.e_d <= 0.5:
            raise ValueError(f"misalignment error must be in [0, 0.5], got {self.e_d}")
        if self.e_0 != 0.5:
            raise ValueError(f"vacuum error probability is fixed at 0.5, got {self.e_0}")


@dataclass(frozen=True)
class Link:
    """One fiber arm: its length and total transmittance (detector included)."""

    distance_km: float
    eta: float

    def __post_init__(self) -> None:
        if self.distance_km < 0.0:
            raise ValueError(f"distance must be >= 0 km, got {self.distance_km}")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"transmittance must be in (0, 1], got {self.eta}")


@dataclass(frozen=True)
class IntensityBits:
    """Per-round intensity selectors: 1 sends the signal pulse, 0 sends vacuum."""

    z_a: int
    z_b: int

    def __post_init__(self) -> None:
        if self.z_a not in (0, 1) or self.z_b not in (0, 1):
            raise ValueError(f"intensity bits must be 0 or 1, got ({self.z_a}, {self.z_b})")


def transmittance_from_distance(distance_km: float, params: SystemParams) -> float:
    """Total one-arm transmittance eta_d * 10**(-alpha*L/10) at fiber length L."""
    if distance_km < 0.0:
        raise ValueError(f"distance must be >= 0 km, got {distance_km}")
    return params.eta_d * 10.0 ** (-params.alpha * distance_km / 10.0)


def distance_from_transmittance(eta: float, params: SystemParams) -> float:
    """Fiber length reproducing a given total transmittance; inverse of
    :func:`transmittance_from_distance`."""
    if eta <= 0.0 or eta > params.eta_d:
        raise ValueError(f"transmittance must be in (0, eta_d={params.eta_d}], got {eta}")
    return 10.0 * math.log10(params.eta_d / eta) / params.alpha


def link_at(distance_km: float, params: SystemParams) -> Link:
    """Construct a consistent Link at the given fiber length."""
    return Link(distance_km, transmittance_from_distance(distance_km, params))


@dataclass(frozen=True)
class Scenario:
    """A full protocol operating point: two arms, pulse intensities, decoy
    intensities and the maximal pairing interval.

    The usual convention puts the shorter arm on side a (delta >= 1); it is
    not enforced here because every model quantity is symmetric under
    swapping the arms together with their intensities.
    """

    link_a: Link
    link_b: Link
    mu_a: float
    mu_b: float
    lam: float
    params: SystemParams
    nu_a: float = 0.0
    nu_b: float = 0.0

    def __post_init__(self) -> None:
        for name, mu in (("mu_a", self.mu_a), ("mu_b", self.mu_b)):
            if not 0.0 < mu <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {mu}")
        for name, nu, mu in (("nu_a", self.nu_a, self.mu_a), ("nu_b", self.nu_b, self.mu_b)):
            if not 0.0 <= nu < mu:
                raise ValueError(f"{name} must be in [0, {name.replace('nu', 'mu')}), got {nu}")
        if math.isfinite(self.lam):
            if self.lam < 1 or self.lam != int(self.lam):
                raise ValueError(f"pairing interval must be an integer >= 1 or inf, got {self.lam}")
        elif not self.lam == math.inf:
            raise ValueError(f"pairing interval must be an integer >= 1 or inf, got {self.lam}")
        for link in (self.link_a, self.link_b):
            expected = transmittance_from_distance(link.distance_km, self.params)
            if abs(link.eta - expected) > _LINK_RTOL * expected:
                raise ValueError(
                    f"link at {link.distance_km} km has eta={link.eta}, "
                    f"inconsistent with params (expected {expected})"
                )

    @property
    def eta_a(self) -> float:
        return self.link_a.eta

    @property
    def eta_b(self) -> float:
        return self.link_b.eta


def make_scenario(
    distance_a_km: float,
    distance_b_km: float,
    mu_a: float,
    mu_b: float,
    lam: float,
    params: SystemParams | None = None,
    nu_a: float = 0.0,
    nu_b: float = 0.0,
) -> Scenario:
    """Build a Scenario from arm lengths, deriving the transmittances."""
    params = params if params is not None else SystemParams()
    return Scenario(
        link_a=link_at(distance_a_km, params),
        link_b=link_at(distance_b_km, params),
        mu_a=mu_a,
        mu_b=mu_b,
        lam=lam,
        params=params,
        nu_a=nu_a,
        nu_b=nu_b,
    )


@dataclass(frozen=True)
class KeyRateBreakdown:
    """All intermediate quantities entering the per-round key rate.

    ``rate`` is clamped at zero; ``raw_rate`` keeps the unclamped value so a
    negative balance between the privacy and correction terms stays visible.
    """

    p: float
    r_p: float
    r_s: float
    q_bar_11: float
    e_z: float
    y_11: float
    e_11: float
    raw_rate: float
    rate: float


def click_prob_given_intensity(z: IntensityBits, scenario: Scenario) -> float:
    """Probability that exactly one detector fires in a round with the given
    intensity selectors."""
    x = scenario.eta_a * scenario.mu_a * z.z_a + scenario.eta_b * scenario.mu_b * z.z_b
    decay = math.exp(-x)
    # 1 - (1 - 2 p_d) e^{-x}, arranged to stay accurate for tiny x.
    return -math.expm1(-x) + 2.0 * scenario.params.p_d * decay


def click_prob_given_photons(n_a: int, n_b: int, scenario: Scenario) -> float:
    """Click probability for a round carrying exact photon numbers per arm."""
    if n_a < 0 or n_b < 0 or n_a != int(n_a) or n_b != int(n_b):
        raise ValueError(f"photon counts must be integers >= 0, got ({n_a}, {n_b})")
    log_pass = n_a * math.log1p(-scenario.eta_a) + n_b * math.log1p(-scenario.eta_b)
    survive_none = math.exp(log_pass)
    return -math.expm1(log_pass) + 2.0 * scenario.params.p_d * survive_none


def round_click_prob(scenario: Scenario) -> float:
    """Unconditional per-round click probability, averaging the four equally
    likely intensity-selector vectors."""
    total = 0.0
    for z_a in (0, 1):
        for z_b in (0, 1):
            total += click_prob_given_intensity(IntensityBits(z_a, z_b), scenario)
    return total / 4.0


def pairing_rate(p: float, lam: float) -> float:
    """Expected pairs formed per round for click probability ``p`` and
    maximal pairing interval ``lam``.

    The unbounded interval gives exactly p/2; lam == 1 reduces to
    p**2 / (1 + p).  The p == 0 limit is defined as 0.
    """
    if p < 0.0 or p > 1.0:
        raise ValueError(f"click probability must be in [0, 1], got {p}")
    if p == 0.0:
        return 0.0
    if math.isinf(lam):
        return p / 2.0
    if lam < 1:
        raise ValueError(f"pairing interval must be >= 1 or inf, got {lam}")
    window_hit = -math.expm1(lam * math.log1p(-p)) if p < 1.0 else 1.0
    return 1.0 / (1.0 / (p * window_hit) + 1.0 / p)


def _z_combination_products(scenario: Scenario) -> tuple[float, float]:
    """Click-probability products of the effective-Z intensity combinations.

    Returns (same-round product, cross-round product): the [00,11]/[11,00]
    combinations share one product and the [01,10]/[10,01] ones the other.
    """
    pr = {
        (z_a, z_b): click_prob_given_intensity(IntensityBits(z_a, z_b), scenario)
        for z_a in (0, 1)
        for z_b in (0, 1)
    }
    return pr[(0, 0)] * pr[(1, 1)], pr[(0, 1)] * pr[(1, 0)]


def z_pair_ratio(scenario: Scenario) -> float:
    """Probability that two independently clicked rounds form an effective
    Z pair (each party sent its signal pulse in exactly one of the rounds)."""
    p = round_click_prob(scenario)
    if p <= 0.0:
        raise ModelDegenerateError("zero click probability: Z-pair ratio undefined")
    same, cross = _z_combination_products(scenario)
    return 2.0 * (same + cross) / (16.0 * p * p)


def z_bit_error(scenario: Scenario) -> float:
    """Expected bit error rate of the Z pairs.

    Errors arise only from the two combinations that put both signal pulses
    in the same round, so the rate is dark-count driven and vanishes exactly
    for p_d == 0.
    """
    same, cross = _z_combination_products(scenario)
    denominator = same + cross
    if denominator <= 0.0:
        raise ModelDegenerateError("zero Z-pair probability: bit error undefined")
    return same / denominator


def single_photon_ratio(scenario: Scenario) -> float:
    """Fraction of effective Z pairs in which each party emitted exactly one
    photon in total across the paired rounds."""
    same, cross = _z_combination_products(scenario)
    denominator = same + cross
    if denominator <= 0.0:
        raise ModelDegenerateError("zero Z-pair probability: single-photon ratio undefined")
    weight = (
        scenario.mu_a
        * math.exp(-scenario.mu_a)
        * scenario.mu_b
        * math.exp(-scenario.mu_b)
    )
    y_same = click_prob_given_photons(0, 0, scenario) * click_prob_given_photons(1, 1, scenario)
    y_cross = click_prob_given_photons(1, 0, scenario) * click_prob_given_photons(0, 1, scenario)
    return weight * (y_same + y_cross) / denominator


def x_gain_and_phase_error(scenario: Scenario) -> tuple[float, float]:
    """Asymptotic single-photon gain and phase error rate of the X basis."""
    eta_a, eta_b = scenario.eta_a, scenario.eta_b
    p_d = scenario.params.p_d
    gain = (1.0 - p_d) ** 2 * (
        eta_a * eta_b / 2.0
        + (2.0 * eta_a + 2.0 * eta_b - 3.0 * eta_a * eta_b) * p_d
        + 4.0 * (1.0 - eta_a) * (1.0 - eta_b) * p_d * p_d
    )
    if gain <= 0.0:
        raise ModelDegenerateError("zero single-photon gain: phase error undefined")
    e_0, e_d = scenario.params.e_0, scenario.params.e_d
    error = (e_0 * gain - (e_0 - e_d) * (1.0 - p_d * p_d) * eta_a * eta_b / 2.0) / gain
    return gain, error


def binary_entropy(x: float) -> float:
    """Binary entropy in bits, with H(0) = H(1) = 0 by continuity."""
    if x < 0.0 or x > 1.0:
        raise ValueError(f"binary entropy argument must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def key_rate(scenario: Scenario) -> KeyRateBreakdown:
    """Per-round secret-key rate with all intermediate quantities.

    Assembles R = r_p * r_s * { q_bar_11 [1 - H(e_11)] - f H(e_z) } and
    clamps negative balances to zero (the raw value is retained).
    """
    p = round_click_prob(scenario)
    r_p = pairing_rate(p, scenario.lam)
    r_s = z_pair_ratio(scenario)
    e_z = z_bit_error(scenario)
    q_bar = single_photon_ratio(scenario)
    y_11, e_11 = x_gain_and_phase_error(scenario)
    raw = r_p * r_s * (
        q_bar * (1.0 - binary_entropy(e_11)) - scenario.params.f * binary_entropy(e_z)
    )
    return KeyRateBreakdown(
        p=p,
        r_p=r_p,
        r_s=r_s,
        q_bar_11=q_bar,
        e_z=e_z,
        y_11=y_11,
        e_11=e_11,
        raw_rate=raw,
        rate=max(raw, 0.0),
    )


def linearized_key_rate(scenario: Scenario) -> KeyRateBreakdown:
    """Small-intensity closed-form model used as an optimizer oracle.

    Dark counts are dropped and the click probability is Taylor-linearized,
    which collapses the intermediates to:

        p     = (eta_a mu_a + eta_b mu_b) / 2
        r_s   = eta_a eta_b mu_a mu_b / (8 p^2)
        q_bar = exp(-mu_a - mu_b)
        e_z   = 0,  e_11 = e_d

    The pairing rate keeps its two limit forms exactly: p/2 for an unbounded
    interval and p^2 for lam == 1 (small-p limit); other intervals use the
    finite formula on the linearized p.
    """
    eta_a, eta_b = scenario.eta_a, scenario.eta_b
    mu_a, mu_b = scenario.mu_a, scenario.mu_b
    p = (eta_a * mu_a + eta_b * mu_b) / 2.0
    if p <= 0.0:
        raise ModelDegenerateError("zero click probability in linearized model")
    if math.isinf(scenario.lam):
        r_p = p / 2.0
    elif scenario.lam == 1:
        r_p = p * p
    else:
        r_p = pairing_rate(p, scenario.lam)
    r_s = eta_a * eta_b * mu_a * mu_b / (8.0 * p * p)
    q_bar = math.exp(-mu_a - mu_b)
    e_11 = scenario.params.e_d
    raw = r_p * r_s * q_bar * (1.0 - binary_entropy(e_11))
    return KeyRateBreakdown(
        p=p,
        r_p=r_p,
        r_s=r_s,
        q_bar_11=q_bar,
        e_z=0.0,
        y_11=eta_a * eta_b / 2.0,
        e_11=e_11,
        raw_rate=raw,
        rate=max(raw, 0.0),
    )
