"""Detection metrics: the equal-error rate plus the cost-based minDCF and Cllr_min.

Convention: a trial is accepted when its score is >= the threshold. All
sweeps run over the distinct scores plus +inf, which visits every
operating point a threshold can produce.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

LLR_CLAMP = 35.0


@dataclass(frozen=True)
class MetricConfig:
    effective_prior: float = 0.01
    cost_miss: float = 1.0
    cost_fa: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.effective_prior < 1.0:
            raise ConfigError("effective_prior must lie in (0, 1)")
        if self.cost_miss <= 0 or self.cost_fa <= 0:
            raise ConfigError("costs must be positive")

    @property
    def prior(self) -> float:
        """Effective prior after folding in the costs."""
        p = self.effective_prior * self.cost_miss
        return p / (p + (1.0 - self.effective_prior) * self.cost_fa)


def _split(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    lab = np.asarray(labels).ravel()
    if lab.dtype.kind in "US":
        lab = lab == "target"
    lab = lab.astype(bool)
    if s.shape != lab.shape:
        raise ValueError(f"{s.size} scores but {lab.size} labels")
    tar, non = s[lab], s[~lab]
    if tar.size == 0 or non.size == 0:
        raise ValueError("both target and nontarget trials are required")
    return tar, non


def error_rates(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, Pmiss, Pfa) over the distinct scores followed by +inf."""
    tar, non = _split(scores, labels)
    thr = np.append(np.unique(np.concatenate([tar, non])), np.inf)
    p_miss = np.searchsorted(np.sort(tar), thr, side="left") / tar.size
    p_fa = 1.0 - np.searchsorted(np.sort(non), thr, side="left") / non.size
    return thr, p_miss, p_fa


def eer(scores, labels) -> float:
    _, p_miss, p_fa = error_rates(scores, labels)
    # at the lowest score Pmiss = 0 < Pfa = 1, at +inf Pmiss = 1 > Pfa = 0
    i = int(np.argmax(p_miss >= p_fa))
    if p_miss[i] == p_fa[i]:
        return float(p_miss[i])
    # interpolate linearly along the segment between the two operating points
    dm, df = p_miss[i] - p_miss[i - 1], p_fa[i] - p_fa[i - 1]
    alpha = (p_fa[i - 1] - p_miss[i - 1]) / (dm - df)
    return float(p_miss[i - 1] + alpha * dm)


def dcf_curve(scores, labels, cfg: MetricConfig | None = None) -> np.ndarray:
    cfg = cfg or MetricConfig()
    p = cfg.prior
    _, p_miss, p_fa = error_rates(scores, labels)
    # the -inf threshold (accept everything) is the point before the first score
    p_miss = np.insert(p_miss, 0, 0.0)
    p_fa = np.insert(p_fa, 0, 1.0)
    return (p * p_miss + (1 - p) * p_fa) / min(p, 1 - p)


def min_dcf(scores, labels, cfg: MetricConfig | None = None) -> float:
    return float(dcf_curve(scores, labels, cfg).min())


def pav(y: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Non-decreasing least-squares fit of ``y`` (pool adjacent violators)."""
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    means, wts, sizes = [], [], []
    for yi, wi in zip(y, w):
        means.append(yi)
        wts.append(wi)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, n2 = means.pop(), wts.pop(), sizes.pop()
            total = wts[-1] + w2
            means[-1] = (means[-1] * wts[-1] + m2 * w2) / total
            wts[-1] = total
            sizes[-1] += n2
    return np.repeat(means, sizes)


def calibrated_llrs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """PAV-calibrated LLRs (natural log) for targets and nontargets.

    Equal scores are pooled before fitting so that ties never get split.
    """
    tar, non = _split(scores, labels)
    s = np.concatenate([tar, non])
    lab = np.concatenate([np.ones(tar.size), np.zeros(non.size)])
    uniq, inverse = np.unique(s, return_inverse=True)
    counts = np.bincount(inverse)
    hits = np.bincount(inverse, weights=lab)
    post = pav(hits / counts, counts)[inverse]
    prior = tar.size / s.size
    with np.errstate(divide="ignore"):
        llr = np.log(post) - np.log1p(-post) - np.log(prior / (1 - prior))
    llr = np.clip(llr, -LLR_CLAMP, LLR_CLAMP)
    return llr[: tar.size], llr[tar.size:]


def cllr(tar_llr, non_llr) -> float:
    """Cllr in bits for natural-log LLRs."""
    c = np.mean(np.logaddexp(0, -np.asarray(tar_llr))) + np.mean(np.logaddexp(0, np.asarray(non_llr)))
    return float(c / (2 * np.log(2)))


def cllr_min(scores, labels) -> float:
    # PAV can never do worse than the prior-only map (1 bit); min() absorbs rounding
    return min(1.0, cllr(*calibrated_llrs(scores, labels)))


@dataclass(frozen=True)
class MetricTriple:
    cllr_min: float
    min_dcf: float
    eer: float

    def as_dict(self) -> dict:
        return {"cllr_min": self.cllr_min, "min_dcf": self.min_dcf, "eer": self.eer}


def evaluate(scores, labels, cfg: MetricConfig | None = None) -> MetricTriple:
    return MetricTriple(cllr_min(scores, labels), min_dcf(scores, labels, cfg), eer(scores, labels))
