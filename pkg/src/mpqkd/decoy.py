"""Three-intensity decoy-state estimation for the mode-pairing protocol.

The forward model produces the per-pair-intensity observables an experiment
would report (expected detected-and-sifted ratios and error ratios), built
from photon-number-resolved yields of the channel model.  The estimation
side inverts those observables with linear programs over the unknown
photon-class yields, giving a lower bound on the single-photon yield and an
upper bound on its error rate; both are provably valid for any channel
consistent with the observables.

Pair classes follow the sifting structure: a pair is Z-type when each party
kept at most one non-vacuum round (all of a party's photons travel in one
round), and X-type when a party sent the same non-vacuum intensity in both
rounds (photons split binomially between the rounds).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

import numpy as np
from scipy.optimize import linprog

from .model import Scenario, SystemParams, binary_entropy, click_prob_given_photons

__all__ = [
    "TruncationError",
    "ObservablesInconsistentError",
    "PairIntensityVector",
    "DecoyConfig",
    "DecoyObservables",
    "DecoyBounds",
    "decoy_config_for",
    "pair_intensity_prior",
    "poisson_pair_prob",
    "posterior_intensity_given_photons",
    "expected_observables",
    "bound_single_photon",
    "decoy_key_rate",
    "single_photon_z_yield",
    "single_photon_z_error_yield",
]

# Relative slack on the observable equality constraints inside the LPs.
_EQUALITY_TOL = 1e-10
# Target tail mass when folding photon-number yields into observables.
_OBS_TAIL = 1e-12
_OBS_CUTOFF_CAP = 400


class TruncationError(RuntimeError):
    """The photon-number summation cannot reach the required tail mass."""


class ObservablesInconsistentError(RuntimeError):
    """No channel is consistent with the supplied observables (infeasible LP)."""


class PairIntensityVector(NamedTuple):
    """Summed intensities of two paired rounds, one component per party."""

    sum_a: float
    sum_b: float


@dataclass(frozen=True)
class DecoyConfig:
    """Intensity sets {0, nu, mu} per party, their selection probabilities and
    the photon-number cutoff used by the estimation LPs.

    Selection probabilities are shared between the parties (s_nu and s_mu are
    the same for both); nu may be 0, which degenerates the decoy setting into
    extra vacuum.  ``2 nu == mu`` is rejected because it makes a two-round sum
    ambiguous between a Z-type and an X-type pair.
    """

    mu_a: float
    mu_b: float
    nu_a: float
    nu_b: float
    s_0: float
    s_nu: float
    s_mu: float
    k_max: int = 20

    def __post_init__(self) -> None:
        for name, mu in (("mu_a", self.mu_a), ("mu_b", self.mu_b)):
            if not 0.0 < mu <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {mu}")
        for name, nu, mu in (("nu_a", self.nu_a, self.mu_a), ("nu_b", self.nu_b, self.mu_b)):
            if not 0.0 <= nu < mu:
                raise ValueError(f"{name} must be in [0, mu), got {nu}")
            if nu > 0.0 and abs(2.0 * nu - mu) < 1e-12:
                raise ValueError(f"2*{name} must not equal the signal intensity")
        probs = (self.s_0, self.s_nu, self.s_mu)
        if any(s < 0.0 for s in probs):
            raise ValueError(f"selection probabilities must be >= 0, got {probs}")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"selection probabilities must sum to 1, got {sum(probs)}")
        if self.k_max < 2:
            raise ValueError(f"photon cutoff must be >= 2, got {self.k_max}")

    def levels(self, party: str) -> tuple[float, float, float]:
        if party == "a":
            return (0.0, self.nu_a, self.mu_a)
        if party == "b":
            return (0.0, self.nu_b, self.mu_b)
        raise ValueError(f"party must be 'a' or 'b', got {party!r}")

    def signal_vector(self) -> PairIntensityVector:
        return PairIntensityVector(self.mu_a, self.mu_b)

    def z_settings(self) -> list[PairIntensityVector]:
        """Z-compatible pair sums with nonzero prior, vacuum-vacuum excluded."""
        prior = pair_intensity_prior(self)
        out = []
        for sum_a in sorted({0.0, self.nu_a, self.mu_a}):
            for sum_b in sorted({0.0, self.nu_b, self.mu_b}):
                if sum_a == 0.0 and sum_b == 0.0:
                    continue
                vec = PairIntensityVector(sum_a, sum_b)
                if prior.get(vec, 0.0) > 0.0:
                    out.append(vec)
        return out

    def x_settings(self) -> list[PairIntensityVector]:
        """X-compatible pair sums: each party uses the same intensity in both
        rounds (vacuum included, mirroring the Z construction), not all four
        rounds vacuum."""
        prior = pair_intensity_prior(self)
        sums_a = sorted({2.0 * level for level in self.levels("a")})
        sums_b = sorted({2.0 * level for level in self.levels("b")})
        out = []
        for sum_a in sums_a:
            for sum_b in sums_b:
                if sum_a == 0.0 and sum_b == 0.0:
                    continue
                vec = PairIntensityVector(sum_a, sum_b)
                if prior.get(vec, 0.0) > 0.0:
                    out.append(vec)
        return out


def decoy_config_for(
    scenario: Scenario, s_nu: float = 1e-3, s_mu: float | None = None, k_max: int = 20
) -> DecoyConfig:
    """Config matching a scenario: signal and vacuum share the remaining
    probability equally, the decoy intensity gets the (small) s_nu."""
    if s_mu is None:
        s_mu = (1.0 - s_nu) / 2.0
    return DecoyConfig(
        mu_a=scenario.mu_a,
        mu_b=scenario.mu_b,
        nu_a=scenario.nu_a,
        nu_b=scenario.nu_b,
        s_0=1.0 - s_nu - s_mu,
        s_nu=s_nu,
        s_mu=s_mu,
        k_max=k_max,
    )


def _party_sum_prior(levels: Iterable[float], probs: Iterable[float]) -> dict[float, float]:
    out: dict[float, float] = {}
    for level_i, prob_i in zip(levels, probs):
        for level_j, prob_j in zip(levels, probs):
            total = level_i + level_j
            out[total] = out.get(total, 0.0) + prob_i * prob_j
    return out


def pair_intensity_prior(config: DecoyConfig) -> dict[PairIntensityVector, float]:
    """Probability of each two-round summed-intensity vector; sums to 1."""
    probs = (config.s_0, config.s_nu, config.s_mu)
    prior_a = _party_sum_prior(config.levels("a"), probs)
    prior_b = _party_sum_prior(config.levels("b"), probs)
    return {
        PairIntensityVector(sum_a, sum_b): qa * qb
        for sum_a, qa in prior_a.items()
        for sum_b, qb in prior_b.items()
    }


def poisson_pair_prob(k: tuple[int, int], mu_vec: PairIntensityVector) -> float:
    """Probability of emitting k = (k_a, k_b) photons in total over a pair
    with summed intensities mu_vec (product of two Poissons, 0**0 == 1)."""
    k_a, k_b = k
    if k_a < 0 or k_b < 0:
        raise ValueError(f"photon counts must be >= 0, got {k}")
    return (
        math.exp(-mu_vec.sum_a - mu_vec.sum_b)
        * mu_vec.sum_a**k_a
        * mu_vec.sum_b**k_b
        / (math.factorial(k_a) * math.factorial(k_b))
    )


def posterior_intensity_given_photons(
    k: tuple[int, int], config: DecoyConfig
) -> dict[PairIntensityVector, float]:
    """Bayes posterior over summed-intensity vectors given total photon numbers."""
    prior = pair_intensity_prior(config)
    joint = {vec: q * poisson_pair_prob(k, vec) for vec, q in prior.items()}
    total = sum(joint.values())
    if total <= 0.0:
        raise ValueError(f"photon numbers {k} are unreachable under this config")
    return {vec: value / total for vec, value in joint.items()}


def _poisson_cutoff(mean: float, tail: float) -> int:
    """Smallest K with P(Poisson(mean) > K) <= tail."""
    if mean == 0.0:
        return 0
    term = math.exp(-mean)
    cdf = term
    k = 0
    while 1.0 - cdf > tail:
        k += 1
        if k > _OBS_CUTOFF_CAP:
            raise TruncationError(
                f"cannot reach tail {tail} below k={_OBS_CUTOFF_CAP} for mean {mean}"
            )
        term *= mean / k
        cdf += term
    return k


def _photon_click(n_a: int, n_b: int, scenario: Scenario, dark: bool) -> float:
    if dark:
        return click_prob_given_photons(n_a, n_b, scenario)
    log_pass = n_a * math.log1p(-scenario.eta_a) + n_b * math.log1p(-scenario.eta_b)
    return -math.expm1(log_pass)


def single_photon_z_yield(scenario: Scenario) -> float:
    """Ground-truth Z yield of the (1, 1) photon class."""
    return _z_yield(1, 1, scenario)


def single_photon_z_error_yield(scenario: Scenario) -> float:
    """Ground-truth erroneous-Z yield of the (1, 1) photon class."""
    return _z_error_yield(1, 1, scenario)


def _z_yield(k_a: int, k_b: int, scenario: Scenario) -> float:
    """Detected-Z probability for a pair carrying k photons in total.

    Each party's photons ride its single non-vacuum round; the four ways the
    two signal rounds interleave are equally likely, two of them stacking
    both signals in the same round.
    """
    y = lambda a, b: _photon_click(a, b, scenario, dark=True)
    return 0.5 * (y(0, 0) * y(k_a, k_b) + y(k_a, 0) * y(0, k_b))


def _z_error_yield(k_a: int, k_b: int, scenario: Scenario) -> float:
    y = lambda a, b: _photon_click(a, b, scenario, dark=True)
    return 0.5 * y(0, 0) * y(k_a, k_b)


def _binomial_split_weights(k: int) -> list[tuple[int, float]]:
    scale = 0.5**k
    return [(j, math.comb(k, j) * scale) for j in range(k + 1)]


def _x_yield(k_a: int, k_b: int, scenario: Scenario, dark: bool = True) -> float:
    """Detected-X probability for a pair carrying k photons in total.

    Both of a party's rounds carry the same intensity, so its photons split
    binomially between the rounds.
    """
    total = 0.0
    for j_a, w_a in _binomial_split_weights(k_a):
        for j_b, w_b in _binomial_split_weights(k_b):
            first = _photon_click(j_a, j_b, scenario, dark)
            second = _photon_click(k_a - j_a, k_b - j_b, scenario, dark)
            total += w_a * w_b * first * second
    return total


def _x_error_yield(k_a: int, k_b: int, scenario: Scenario) -> float:
    """Erroneous-X yield: vacuum-noise error on everything, reduced to the
    misalignment error on the photon-only coincidences."""
    e_0 = scenario.params.e_0
    e_d = scenario.params.e_d
    coincident = _x_yield(k_a, k_b, scenario, dark=False)
    return e_0 * _x_yield(k_a, k_b, scenario, dark=True) - (e_0 - e_d) * coincident


@dataclass(frozen=True)
class DecoyObservables:
    """Expected detected/error ratios per pair-intensity setting and basis."""

    z_total: Mapping[PairIntensityVector, float]
    z_error: Mapping[PairIntensityVector, float]
    x_total: Mapping[PairIntensityVector, float]
    x_error: Mapping[PairIntensityVector, float]

    def __post_init__(self) -> None:
        for totals, errors in ((self.z_total, self.z_error), (self.x_total, self.x_error)):
            for vec, total in totals.items():
                err = errors[vec]
                if not 0.0 <= err <= total + 1e-15 or total > 1.0 + 1e-12:
                    raise ValueError(
                        f"observables for {vec} violate 0 <= error <= total <= 1: "
                        f"({err}, {total})"
                    )


def expected_observables(scenario: Scenario, config: DecoyConfig) -> DecoyObservables:
    """Forward model: fold the photon-class yields through the Poisson photon
    statistics of every realizable pair-intensity setting.

    The photon sums extend far enough that the neglected tail mass stays
    below 1e-12 for every setting.
    """
    if abs(config.mu_a - scenario.mu_a) > 1e-12 or abs(config.mu_b - scenario.mu_b) > 1e-12:
        raise ValueError("config signal intensities disagree with the scenario")

    def fold(settings, yield_fn, error_fn):
        totals: dict[PairIntensityVector, float] = {}
        errors: dict[PairIntensityVector, float] = {}
        for vec in settings:
            cut_a = _poisson_cutoff(vec.sum_a, _OBS_TAIL / 2.0)
            cut_b = _poisson_cutoff(vec.sum_b, _OBS_TAIL / 2.0)
            total = 0.0
            error = 0.0
            for k_a in range(cut_a + 1):
                for k_b in range(cut_b + 1):
                    weight = poisson_pair_prob((k_a, k_b), vec)
                    total += weight * yield_fn(k_a, k_b, scenario)
                    error += weight * error_fn(k_a, k_b, scenario)
            totals[vec] = total
            errors[vec] = error
        return totals, errors

    z_total, z_error = fold(config.z_settings(), _z_yield, _z_error_yield)
    x_total, x_error = fold(config.x_settings(), _x_yield, _x_error_yield)
    return DecoyObservables(z_total, z_error, x_total, x_error)


@dataclass(frozen=True)
class DecoyBounds:
    """Single-photon bounds extracted from observables.

    ``phase_error_upper`` is the ratio e_x_11_upper / m_x_11_lower, or None
    when the X lower bound is degenerate (no key can be claimed).
    """

    m_z_11_lower: float
    e_z_11_upper: float
    m_z_11_lower_by_setting: Mapping[PairIntensityVector, float]
    e_z_11_upper_by_setting: Mapping[PairIntensityVector, float]
    m_x_11_lower: float
    e_x_11_upper: float
    q_bar_lower: float
    phase_error_upper: float | None


def _solve_basis_lp(
    settings: list[PairIntensityVector],
    totals: Mapping[PairIntensityVector, float],
    errors: Mapping[PairIntensityVector, float],
    k_max: int,
) -> tuple[float, float]:
    """Min single-photon yield and max single-photon error yield consistent
    with the observables.

    Unknowns are the per-photon-class yields m_k and error yields e_k on the
    truncated grid, plus one tail slack per observable equation bounded by
    the truncated Poisson mass (yields never exceed 1).
    """
    classes = [(k_a, k_b) for k_a in range(k_max + 1) for k_b in range(k_max + 1)]
    index = {k: i for i, k in enumerate(classes)}
    n = len(classes)
    n_settings = len(settings)
    n_vars = 2 * n + 2 * n_settings

    # Work in units of the largest observable: yields and slacks scale by
    # 1/unit, keeping all right-hand sides within a few decades of 1.  The
    # raw observables sit as low as 1e-13, far below solver feasibility
    # tolerances.
    unit = max(max(totals[vec] for vec in settings), 1e-300)

    rows: list[np.ndarray] = []
    rhs: list[float] = []

    def add_equality(coeffs: np.ndarray, value: float) -> None:
        # Relative equality tolerance: an absolute 1e-10 slack would swamp
        # the dark-count-dominated observables.
        scaled = value / unit
        tol = _EQUALITY_TOL * scaled
        rows.append(coeffs)
        rhs.append(scaled + tol)
        rows.append(-coeffs)
        rhs.append(-(scaled - tol))

    tails = []
    for s_idx, vec in enumerate(settings):
        weights = np.array([poisson_pair_prob(k, vec) for k in classes])
        tails.append(max(0.0, 1.0 - float(weights.sum())))
        row_m = np.zeros(n_vars)
        row_m[:n] = weights
        row_m[2 * n + s_idx] = 1.0
        add_equality(row_m, totals[vec])
        row_e = np.zeros(n_vars)
        row_e[n : 2 * n] = weights
        row_e[2 * n + n_settings + s_idx] = 1.0
        add_equality(row_e, errors[vec])

    # e_k <= m_k
    for i in range(n):
        row = np.zeros(n_vars)
        row[n + i] = 1.0
        row[i] = -1.0
        rows.append(row)
        rhs.append(0.0)

    a_ub = np.array(rows)
    b_ub = np.array(rhs)
    box = 1.0 / unit
    bounds = (
        [(0.0, box)] * (2 * n)
        + [(0.0, t / unit) for t in tails]
        + [(0.0, t / unit) for t in tails]
    )

    target = index[(1, 1)]
    results = []
    for objective_sign, column in ((1.0, target), (-1.0, n + target)):
        c = np.zeros(n_vars)
        c[column] = objective_sign
        res = linprog(
            c,
            A_ub=a_ub,
            b_ub=b_ub,
            bounds=bounds,
            method="highs",
            options={
                "primal_feasibility_tolerance": 1e-10,
                "dual_feasibility_tolerance": 1e-9,
            },
        )
        if res.status == 2:
            raise ObservablesInconsistentError(
                "no photon-class yields reproduce the observables"
            )
        if not res.success:
            raise RuntimeError(f"decoy LP failed: {res.message}")
        results.append(res.x[column] * unit)
    lower_m = min(max(results[0], 0.0), 1.0)
    upper_e = min(max(results[1], 0.0), 1.0)
    return lower_m, upper_e


def bound_single_photon(observables: DecoyObservables, config: DecoyConfig) -> DecoyBounds:
    """Linear-program bounds on the single-photon pair statistics.

    Z and X bases are bounded independently with the same machinery; the
    per-setting projections scale the photon-class bounds by the Poisson
    weight of the (1, 1) class at each setting.
    """
    z_settings = [vec for vec in config.z_settings() if vec in observables.z_total]
    if z_settings:
        m_z_lower, e_z_upper = _solve_basis_lp(
            z_settings, observables.z_total, observables.z_error, config.k_max
        )
    else:
        m_z_lower, e_z_upper = 0.0, 1.0

    x_settings = [vec for vec in config.x_settings() if vec in observables.x_total]
    if x_settings:
        m_x_lower, e_x_upper = _solve_basis_lp(
            x_settings, observables.x_total, observables.x_error, config.k_max
        )
    else:
        m_x_lower, e_x_upper = 0.0, 1.0

    m_by_setting = {
        vec: poisson_pair_prob((1, 1), vec) * m_z_lower for vec in z_settings
    }
    e_by_setting = {
        vec: poisson_pair_prob((1, 1), vec) * e_z_upper for vec in z_settings
    }

    signal = config.signal_vector()
    signal_total = observables.z_total.get(signal, 0.0)
    q_bar_lower = (
        m_by_setting.get(signal, 0.0) / signal_total if signal_total > 0.0 else 0.0
    )
    phase_error_upper = e_x_upper / m_x_lower if m_x_lower > 0.0 else None
    return DecoyBounds(
        m_z_11_lower=m_z_lower,
        e_z_11_upper=e_z_upper,
        m_z_11_lower_by_setting=m_by_setting,
        e_z_11_upper_by_setting=e_by_setting,
        m_x_11_lower=m_x_lower,
        e_x_11_upper=e_x_upper,
        q_bar_lower=min(q_bar_lower, 1.0),
        phase_error_upper=phase_error_upper,
    )


def decoy_key_rate(
    bounds: DecoyBounds,
    observed_m_z: float,
    observed_e_z: float,
    params: SystemParams,
) -> float:
    """Asymptotic key rate from decoy bounds and the directly observed
    signal-setting Z statistics, clamped at zero.

    ``observed_m_z`` carries the normalization (pass the per-round detected
    Z-pair rate to compare against the analytic per-round key rate).  A
    degenerate X bound (no single-photon evidence) yields zero.
    """
    if not 0.0 <= observed_m_z <= 1.0 or not 0.0 <= observed_e_z <= 1.0:
        raise ValueError("observed ratios must lie in [0, 1]")
    if bounds.phase_error_upper is None:
        return 0.0
    phase_error = min(bounds.phase_error_upper, 0.5)
    raw = observed_m_z * (
        bounds.q_bar_lower * (1.0 - binary_entropy(phase_error))
        - params.f * binary_entropy(observed_e_z)
    )
    return max(raw, 0.0)
