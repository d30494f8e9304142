"""Intensity-difference noise of partially detected twin-beam coherence areas.

Three routes to the same observable are provided:

* the printed single-pair and multimode reference formulas
  (:func:`nrf_paper_eq1`, :func:`noise_paper_eq2`) and their extension to
  arbitrary detector assignments (:func:`nrf_paper_model`);
* a linearized covariance engine (:func:`nrf_covariance`) built from
  bright-seed pair moments and binomial partition statistics;
* a seeded Monte-Carlo sampler (:func:`monte_carlo_nrf`) used as an oracle
  for the covariance engine.

All fluxes are in arbitrary linear units; noise results are normalized to
the shot-noise level (SNL) of the detected light.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "NoiseDomainError",
    "TwoModeSqueezedPair",
    "PaperNoiseInputs",
    "RegionEntry",
    "DetectionAssignment",
    "NoiseResult",
    "nrf_paper_eq1",
    "noise_paper_eq2",
    "nrf_paper_model",
    "nrf_lossy_closed_form",
    "pair_moments",
    "partition_covariance",
    "nrf_covariance",
    "monte_carlo_nrf",
    "batch_means",
]

_SUM_TOL = 1e-12


class NoiseDomainError(ValueError):
    """Raised when inputs fall outside the physical domain of a noise model."""


@dataclass(frozen=True)
class TwoModeSqueezedPair:
    """One probe/conjugate coherence-area pair.

    Probe mean flux is ``gain * seed_flux`` and conjugate mean flux is
    ``(gain - 1) * seed_flux``.
    """

    gain: float
    seed_flux: float = 1.0
    id: str = "pair"

    def __post_init__(self):
        if not math.isfinite(self.gain) or self.gain < 1.0:
            raise NoiseDomainError(f"gain={self.gain!r} must be >= 1")
        if not math.isfinite(self.seed_flux) or self.seed_flux <= 0.0:
            raise NoiseDomainError(f"seed_flux={self.seed_flux!r} must be > 0")

    @property
    def probe_flux(self) -> float:
        return self.gain * self.seed_flux

    @property
    def conj_flux(self) -> float:
        return (self.gain - 1.0) * self.seed_flux


@dataclass(frozen=True)
class PaperNoiseInputs:
    """Inputs of the multimode partition formula.

    ``modes`` holds ``(power, efficiency)`` for every mode split across the
    detector; ``p_sw`` is the power in modes isolated on one channel.
    """

    p_sw: float
    p_0: float
    modes: tuple[tuple[float, float], ...]
    eta_d: float
    gain: float

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple((float(p), float(e)) for p, e in self.modes))
        if self.p_0 <= 0:
            raise NoiseDomainError(f"p_0={self.p_0!r} must be > 0")
        if self.p_sw < 0 or any(p < 0 for p, _ in self.modes):
            raise NoiseDomainError("powers must be >= 0")
        effs = [self.eta_d] + [e for _, e in self.modes]
        if any(not 0.0 <= e <= 1.0 for e in effs):
            raise NoiseDomainError("efficiencies must lie in [0, 1]")
        if self.gain < 1.0:
            raise NoiseDomainError(f"gain={self.gain!r} must be >= 1")
        total = self.p_sw + sum(p for p, _ in self.modes)
        if abs(total - self.p_0) > _SUM_TOL * max(1.0, abs(self.p_0)):
            raise NoiseDomainError(
                f"p_sw + sum(P_i) = {total!r} does not equal p_0 = {self.p_0!r}"
            )


@dataclass(frozen=True)
class RegionEntry:
    """A detector region seen by one arm of a pair.

    ``sign`` is +1 or -1 for the two inputs of the balanced detector and 0
    for light that reaches a region but is not used.
    """

    region_id: str
    t: float
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise NoiseDomainError(f"sign={self.sign!r} must be -1, 0 or +1")
        if not math.isfinite(self.t) or self.t < 0:
            raise NoiseDomainError(f"transmission t={self.t!r} must be >= 0")


def _entries(items) -> tuple[RegionEntry, ...]:
    out = []
    for item in items:
        out.append(item if isinstance(item, RegionEntry) else RegionEntry(*item))
    return tuple(out)


@dataclass(frozen=True)
class DetectionAssignment:
    """Routing of every pair's probe and conjugate light onto detector regions.

    ``arms`` maps pair id to ``(probe_entries, conj_entries)``.  Region
    transmissions are geometric; ``efficiency`` multiplies all of them.
    ``background`` is additive variance in units of the SNL, and
    ``cmrr_imbalance`` scales the negative input by ``1 - cmrr_imbalance``.
    """

    arms: Mapping[str, tuple[tuple[RegionEntry, ...], tuple[RegionEntry, ...]]]
    background: float = 0.0
    cmrr_imbalance: float = 0.0
    efficiency: float = 1.0

    def __post_init__(self):
        arms = {}
        for pid, (probe, conj) in dict(self.arms).items():
            probe, conj = _entries(probe), _entries(conj)
            for name, entries in (("probe", probe), ("conjugate", conj)):
                total = sum(e.t for e in entries)
                if total > 1.0 + _SUM_TOL:
                    raise NoiseDomainError(
                        f"pair {pid!r} {name} transmissions sum to {total!r} > 1"
                    )
            arms[pid] = (probe, conj)
        object.__setattr__(self, "arms", arms)
        if self.background < 0:
            raise NoiseDomainError("background must be >= 0")
        if self.cmrr_imbalance < 0:
            raise NoiseDomainError("cmrr_imbalance must be >= 0")
        if not 0.0 <= self.efficiency <= 1.0:
            raise NoiseDomainError("efficiency must lie in [0, 1]")

    def coefficient(self, sign: int) -> float:
        if sign < 0:
            return -(1.0 - self.cmrr_imbalance)
        return float(sign)


@dataclass(frozen=True)
class NoiseResult:
    variance: float
    snl: float
    nrf: float
    nrf_db: float
    stderr_nrf: float = 0.0

    @classmethod
    def from_variance(cls, variance: float, snl: float, stderr_nrf: float = 0.0) -> "NoiseResult":
        if not snl > 0:
            raise NoiseDomainError("SNL = 0: no detected flux reaches a signed region")
        nrf = variance / snl
        return cls(variance, snl, nrf, _db(nrf), stderr_nrf)


def _db(x: float) -> float:
    if x <= 0:
        return -math.inf
    return 10.0 * math.log10(x)


def nrf_paper_eq1(gain: float, eta: float) -> float:
    """Reference single-pair noise ``1 / (eta * (2G - 1))`` exactly as printed.

    This is the published formula, not the covariance engine's prediction;
    the loss-consistent value is :func:`nrf_lossy_closed_form`.
    """
    if not gain >= 1.0:
        raise NoiseDomainError(f"gain={gain!r} must be >= 1")
    if not 0.0 < eta <= 1.0:
        raise NoiseDomainError(f"eta={eta!r} must lie in (0, 1]")
    return 1.0 / (eta * (2.0 * gain - 1.0))


def nrf_lossy_closed_form(gain: float, eta: float) -> float:
    """Beam-splitter loss result ``1 - eta + eta / (2G - 1)``."""
    return 1.0 - eta + eta / (2.0 * gain - 1.0)


def noise_paper_eq2(inputs: PaperNoiseInputs) -> float:
    """Multimode partition noise for equal-gain coherence areas."""
    g = 2.0 * inputs.gain - 1.0
    bracket = inputs.p_sw * inputs.eta_d * g + sum(p * e * g for p, e in inputs.modes)
    if not bracket > 0:
        raise NoiseDomainError("no detected power: reciprocal noise bracket is zero")
    return inputs.p_0 / bracket


def pair_moments(pair: TwoModeSqueezedPair) -> tuple[float, float, float]:
    """Return ``(Var Np, Var Nc, Cov(Np, Nc))`` of a bright-seeded pair."""
    g, n0 = pair.gain, pair.seed_flux
    return (
        g * (2 * g - 1) * n0,
        (g - 1) * (2 * g - 1) * n0,
        2 * g * (g - 1) * n0,
    )


def partition_covariance(
    moments: tuple[float, float, float],
    means: tuple[float, float],
    probe_t: Sequence[float],
    conj_t: Sequence[float],
) -> tuple[np.ndarray, np.ndarray]:
    """Means and covariance of region fluxes after partitioning both arms.

    Regions are ordered probe first, then conjugate.  Each arm is divided
    multinomially; the remainder ``1 - sum(t)`` is lost.
    """
    var_p, var_c, cov_pc = moments
    mean_p, mean_c = means
    tp = np.asarray(probe_t, dtype=float).reshape(-1)
    tc = np.asarray(conj_t, dtype=float).reshape(-1)
    for t in (tp, tc):
        if np.any(t < 0):
            raise NoiseDomainError("transmissions must be >= 0")
        if t.sum() > 1.0 + _SUM_TOL:
            raise NoiseDomainError(f"transmissions sum to {t.sum()!r} > 1")

    def arm_block(t, var, mean):
        block = np.outer(t, t) * (var - mean)
        block[np.diag_indices_from(block)] = t**2 * var + t * (1 - t) * mean
        return block

    n_p, n_c = tp.size, tc.size
    cov = np.zeros((n_p + n_c, n_p + n_c))
    cov[:n_p, :n_p] = arm_block(tp, var_p, mean_p)
    cov[n_p:, n_p:] = arm_block(tc, var_c, mean_c)
    cross = np.outer(tp, tc) * cov_pc
    cov[:n_p, n_p:] = cross
    cov[n_p:, :n_p] = cross.T
    return np.concatenate([tp * mean_p, tc * mean_c]), cov


def _pairs_of(layout) -> list[TwoModeSqueezedPair]:
    if hasattr(layout, "pairs"):
        return list(layout.pairs)
    return list(layout)


def _arm_arrays(assignment: DetectionAssignment, pid: str):
    try:
        probe, conj = assignment.arms[pid]
    except KeyError:
        raise NoiseDomainError(f"assignment does not reference pair {pid!r}") from None
    eff = assignment.efficiency
    tp = np.array([e.t * eff for e in probe])
    tc = np.array([e.t * eff for e in conj])
    cp = np.array([assignment.coefficient(e.sign) for e in probe])
    cc = np.array([assignment.coefficient(e.sign) for e in conj])
    ap = np.array([abs(e.sign) for e in probe], dtype=float)
    ac = np.array([abs(e.sign) for e in conj], dtype=float)
    return tp, tc, cp, cc, ap, ac


def _snl(pairs, assignment) -> float:
    snl = 0.0
    for pair in pairs:
        tp, tc, _, _, ap, ac = _arm_arrays(assignment, pair.id)
        snl += pair.probe_flux * float(ap @ tp) + pair.conj_flux * float(ac @ tc)
    return snl


def nrf_covariance(layout, assignment: DetectionAssignment) -> NoiseResult:
    """Noise of the signed photocurrent sum from the full region covariance.

    ``layout`` is a :class:`~coherencemap.geometry.BeamLayout` or any
    iterable of :class:`TwoModeSqueezedPair`.  Pairs are independent, so
    the total variance is a sum of per-pair quadratic forms.
    """
    pairs = _pairs_of(layout)
    variance = 0.0
    for pair in pairs:
        tp, tc, cp, cc, _, _ = _arm_arrays(assignment, pair.id)
        _, cov = partition_covariance(
            pair_moments(pair), (pair.probe_flux, pair.conj_flux), tp, tc
        )
        c = np.concatenate([cp, cc])
        variance += float(c @ cov @ c)
    snl = _snl(pairs, assignment)
    if not snl > 0:
        raise NoiseDomainError("SNL = 0: no detected flux reaches a signed region")
    return NoiseResult.from_variance(variance + assignment.background * snl, snl)


def nrf_paper_model(layout, assignment: DetectionAssignment) -> NoiseResult:
    """Multimode reference formula evaluated on a detector assignment.

    Each pair contributes power ``P_k = (2G_k - 1) N0_k`` and an effective
    efficiency ``eta_d * (f_p+ f_c- + f_p- f_c+)``, where ``f`` are the
    fractions of each arm on the positive and negative inputs.  A pair held
    entirely on opposite inputs is isolated (efficiency ``eta_d``); an evenly
    split pair gets ``eta_d / 2``.  With equal gains this is exactly
    :func:`noise_paper_eq2`.  CMRR imbalance is not part of this model.
    """
    pairs = _pairs_of(layout)
    total_power = 0.0
    bracket = 0.0
    for pair in pairs:
        if pair.id not in assignment.arms:
            raise NoiseDomainError(f"assignment does not reference pair {pair.id!r}")
        probe, conj = assignment.arms[pair.id]
        fp_pos = sum(e.t for e in probe if e.sign > 0)
        fp_neg = sum(e.t for e in probe if e.sign < 0)
        fc_pos = sum(e.t for e in conj if e.sign > 0)
        fc_neg = sum(e.t for e in conj if e.sign < 0)
        eta_k = assignment.efficiency * (fp_pos * fc_neg + fp_neg * fc_pos)
        g = 2.0 * pair.gain - 1.0
        power = g * pair.seed_flux
        total_power += power
        bracket += power * eta_k * g
    snl = _snl(pairs, assignment)
    if not snl > 0:
        raise NoiseDomainError("SNL = 0: no detected flux reaches a signed region")
    if not bracket > 0:
        raise NoiseDomainError("no correlated detected power: reciprocal noise bracket is zero")
    nrf = total_power / bracket + assignment.background
    return NoiseResult(nrf * snl, snl, nrf, _db(nrf))


def batch_means(samples: np.ndarray, n_batches: int) -> tuple[float, float]:
    """Mean of per-batch statistics and its standard error."""
    values = np.asarray(samples, dtype=float)
    if n_batches < 2 or values.size < n_batches:
        raise ValueError("need at least two batches with one value each")
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def _arm_loading(t: np.ndarray) -> np.ndarray:
    """Matrix ``L`` with ``L @ L.T`` equal to the multinomial partition covariance.

    A lost bucket completes the partition so the construction is exact
    for ``sum(t) <= 1``.
    """
    buckets = np.append(t, max(0.0, 1.0 - t.sum()))
    root = np.sqrt(buckets)
    return np.diag(root)[: t.size] - np.outer(t, root)


def monte_carlo_nrf(
    layout,
    assignment: DetectionAssignment,
    n_samples: int = 1_000_000,
    rng_seed: int = 0,
    n_batches: int = 100,
    chunk: int = 1 << 16,
) -> NoiseResult:
    """Sampled estimate of the signed-sum noise with a batch-means error bar.

    Pair fluctuations are drawn from the 2x2 moment matrix; partition noise
    is drawn independently per region from the multinomial covariance.
    Output depends only on the inputs and ``rng_seed``.
    """
    if n_samples < 10_000:
        raise ValueError(f"n_samples={n_samples} must be >= 1e4")
    if n_batches < 10:
        raise ValueError(f"n_batches={n_batches} must be >= 10")
    pairs = _pairs_of(layout)
    snl = _snl(pairs, assignment)
    if not snl > 0:
        raise NoiseDomainError("SNL = 0: no detected flux reaches a signed region")

    plan = []
    for pair in pairs:
        tp, tc, cp, cc, _, _ = _arm_arrays(assignment, pair.id)
        vp, vc, cpc = pair_moments(pair)
        # lower Cholesky factor; the conditional conjugate variance is >= 0 at G = 1
        a = math.sqrt(vp)
        pair_chol = np.array([[a, 0.0], [cpc / a, math.sqrt(max(vc - cpc**2 / vp, 0.0))]])
        plan.append((
            pair_chol,
            tp, cp, _arm_loading(tp) * math.sqrt(pair.probe_flux),
            tc, cc, _arm_loading(tc) * math.sqrt(pair.conj_flux),
        ))

    rng = np.random.default_rng(rng_seed)
    batch_size = n_samples // n_batches
    total = batch_size * n_batches
    s = np.empty(total)
    start = 0
    while start < total:
        m = min(chunk, total - start)
        acc = np.zeros(m)
        for chol, tp, cp, lp, tc, cc, lc in plan:
            fluct = rng.standard_normal((m, 2)) @ chol.T
            zp = rng.standard_normal((m, lp.shape[1]))
            zc = rng.standard_normal((m, lc.shape[1]))
            np_r = fluct[:, :1] * tp + zp @ lp.T
            nc_r = fluct[:, 1:] * tc + zc @ lc.T
            acc += np_r @ cp + nc_r @ cc
        s[start:start + m] = acc
        start += m

    batch_var = s.reshape(n_batches, batch_size).var(axis=1, ddof=1)
    var, err = batch_means(batch_var, n_batches)
    variance = var + assignment.background * snl
    return NoiseResult.from_variance(variance, snl, err / snl)
