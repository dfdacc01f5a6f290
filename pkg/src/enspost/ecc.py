"""Empirical copula reordering of postprocessed samples.

Reordering a per-site quantile sample by the raw ensemble's rank order
transfers the raw ensemble's spatial dependence structure onto the
postprocessed margins.  The per-subsample variant applies the same
raw-derived permutation independently to each of the n posterior
subsamples, merging them into one N = m·n member ensemble.  Independence
shuffling destroys dependence on purpose and serves as a baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .memos import PredictiveSample


@dataclass(frozen=True)
class RankPermutation:
    """Ranks of the raw members: pi[k] is the rank (1..m) of member k,
    with ties broken at random."""

    pi: tuple

    def __post_init__(self):
        if sorted(self.pi) != list(range(1, len(self.pi) + 1)):
            raise ValueError("pi must be a permutation of 1..m")

    def __len__(self):
        return len(self.pi)


def rank_permutation(raw, rng: np.random.Generator = None) -> RankPermutation:
    """Order-statistic ranks of the raw members, ties resolved at random."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or len(raw) < 1:
        raise ValueError("raw must be a nonempty 1-d member list")
    if rng is None:
        rng = np.random.default_rng()
    tiebreak = rng.random(len(raw))
    order = np.lexsort((tiebreak, raw))
    pi = np.empty(len(raw), dtype=int)
    pi[order] = np.arange(1, len(raw) + 1)
    return RankPermutation(pi=tuple(int(r) for r in pi))


def apply_permutation(pi: RankPermutation, sorted_sample) -> np.ndarray:
    """Member k of the output takes the sorted sample's value at rank pi[k]."""
    sorted_sample = np.asarray(sorted_sample, dtype=float)
    if len(sorted_sample) != len(pi):
        raise ValueError(
            f"sample size {len(sorted_sample)} does not match ensemble size {len(pi)}"
        )
    return sorted_sample[np.asarray(pi.pi) - 1]


def ecc_q(raw, post_sample, rng: np.random.Generator = None) -> np.ndarray:
    """Reorder an ascending quantile sample by the raw ensemble's ranks.

    The output multiset equals the input sample and its rank order equals
    the raw ensemble's (up to tie randomization).  The raw ensemble itself
    is a fixed point: ecc_q(raw, sorted(raw)) == raw.
    """
    raw = np.asarray(raw, dtype=float)
    post_sample = np.asarray(post_sample, dtype=float)
    if len(raw) != len(post_sample):
        raise ValueError(
            f"raw ensemble size {len(raw)} does not match sample size {len(post_sample)}"
        )
    if np.any(np.diff(post_sample) < 0):
        raise ValueError("post_sample must be sorted ascending")
    return apply_permutation(rank_permutation(raw, rng), post_sample)


def ecc_memos(raw_by_site: dict, sample: PredictiveSample,
              rng: np.random.Generator = None) -> dict:
    """Per-subsample reordering of a grouped posterior predictive sample.

    One rank permutation is derived per site from its raw members and
    applied to each of the n subsamples, which must arrive sorted within
    subsample (as the quantile construction produces them).  Returns the
    merged N = m·n values per site, subsample-major.
    """
    if not isinstance(sample, PredictiveSample):
        raise ValueError("subsample grouping metadata missing: expected a PredictiveSample")
    if rng is None:
        rng = np.random.default_rng()
    missing = [s for s in sample.sites if s not in raw_by_site]
    if missing:
        raise ValueError(f"raw ensemble missing for sites {missing}")
    out = {}
    for site in sample.sites:
        raw = np.asarray(raw_by_site[site], dtype=float)
        grouped = sample.at_site(site)  # (n, m)
        if grouped.shape[1] != len(raw):
            raise ValueError(
                f"site {site}: subsample size {grouped.shape[1]} does not match "
                f"raw ensemble size {len(raw)}"
            )
        if np.any(np.diff(grouped, axis=1) < 0):
            raise ValueError(f"site {site}: subsamples must be sorted ascending")
        pi = rank_permutation(raw, rng)
        cols = np.asarray(pi.pi) - 1
        out[site] = grouped[:, cols].reshape(-1)
    return out


def independence_shuffle(sample_by_site: dict, rng: np.random.Generator) -> dict:
    """Independent uniform random permutation of the values at each site."""
    out = {}
    for site in sorted(sample_by_site):
        values = np.asarray(sample_by_site[site], dtype=float)
        out[site] = values[rng.permutation(len(values))]
    return out
