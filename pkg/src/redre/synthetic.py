"""Synthetic transaction tables with a planted card-testing fraud signal.

Each entity (one card) makes a run of transactions.  Ordinary gaps are
heavy-tailed (log-normal around a few hours), so after standardisation the
gap column barely separates minutes from hours.  A random subset of entities
ends in a burst: the trailing gaps are a few minutes long.  Any transaction
is a small "probe" amount with a fixed probability, independent of timing.

The fraud probability of the final transaction rises with ``burst_strength``
times the number of probes made within the hour before it.  The signal is
therefore an interaction of content and elapsed time: trailing probes that
are hours or days old carry none of it.  Class-conditional shifts on the
final transaction's amount, product and counters give every model some
non-temporal signal.

The output uses the ieeecis column layout so it runs through the same
ingestion pipeline as real data.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import expit

HOUR = 3600.0
DAY = 24 * HOUR
HORIZON = 180 * DAY
BURST_WINDOW = 3600.0
PRODUCTS = np.array(["W", "C", "R", "H", "S"])
EMAILS = np.array(["gmail.com", "yahoo.com", "hotmail.com", "anonymous.com", "outlook.com"])


def burst_score(timestamps: np.ndarray, probes: np.ndarray, window: float = BURST_WINDOW,
                cap: int = 3) -> float:
    """Probes among the earlier transactions within ``window`` seconds of the last one.

    Capped at ``cap`` and scaled to [0, 1].
    """
    t = np.asarray(timestamps, dtype=np.float64)
    recent = (t[-1] - t[:-1]) <= window
    count = int(np.sum(recent & np.asarray(probes[:-1], dtype=bool)))
    return min(count, cap) / cap


def generate_synthetic(n_entities: int = 5000, mean_len: float = 12.0, fraud_rate: float = 0.035,
                       burst_strength: float = 8.0, seed: int = 0, max_len: int = 32,
                       burst_prob: float = 0.3, feature_signal: float = 1.0,
                       probe_prob: float = 0.5, gap_median: float = 3 * HOUR,
                       gap_sigma: float = 2.0) -> pd.DataFrame:
    """Record table; only each entity's last transaction can carry ``isFraud = 1``.

    ``fraud_rate`` is the expected fraction of entities whose last
    transaction is fraudulent.  ``feature_signal`` scales the
    class-conditional feature shifts (0 removes them).
    """
    if not 0 < fraud_rate < 1:
        raise ValueError(f"fraud_rate must lie in (0, 1), got {fraud_rate}")
    if burst_strength < 0:
        raise ValueError("burst_strength must be nonnegative")
    if n_entities < 1 or mean_len < 1 or max_len < 1:
        raise ValueError("n_entities, mean_len and max_len must be positive")
    rng = np.random.default_rng(seed)

    lengths = np.minimum(1 + rng.poisson(mean_len - 1, n_entities), max_len)
    total = int(lengths.sum())
    probe = rng.random(total) < probe_prob
    ends = np.cumsum(lengths)
    times, scores = [], np.zeros(n_entities)
    for e, n in enumerate(lengths):
        gaps = rng.lognormal(np.log(gap_median), gap_sigma, n - 1)
        if n > 1 and rng.random() < burst_prob:
            b = rng.integers(1, min(4, n - 1) + 1)
            gaps[-b:] = rng.exponential(600.0, b)
        start = rng.uniform(0, HORIZON)
        t = np.floor(start + np.concatenate([[0.0], np.cumsum(gaps)]))
        times.append(t)
        scores[e] = burst_score(t, probe[ends[e] - n:ends[e]])

    # intercept chosen so the expected fraud rate matches exactly
    drive = burst_strength * scores
    intercept = brentq(lambda a: expit(a + drive).mean() - fraud_rate, -50, 50)
    fraud = rng.random(n_entities) < expit(intercept + drive)

    entity = np.repeat(np.arange(n_entities), lengths)
    last = np.zeros(total, dtype=bool)
    last[ends - 1] = True
    probe &= ~last
    is_fraud = np.zeros(total, dtype=np.int64)
    is_fraud[last] = fraud.astype(np.int64)
    shift = feature_signal * is_fraud

    amount = np.round(rng.lognormal(3.5 + 0.3 * shift, 1.0), 2) + 0.01
    amount[probe] = np.round(rng.uniform(0.5, 3.0, int(probe.sum())), 2)
    base_p = np.array([0.6, 0.1, 0.1, 0.1, 0.1])
    product_p = base_p + 0.1 * shift[:, None] * np.array([-1.0, 1.0, 0.0, 0.0, 0.0])
    pick = (rng.random(total)[:, None] > np.cumsum(product_p, axis=1)).sum(axis=1)
    product = PRODUCTS[np.minimum(pick, len(PRODUCTS) - 1)]
    c1 = rng.poisson(1.5 + 0.5 * shift).astype(np.float64)
    c2 = rng.poisson(2.0, total).astype(np.float64)
    d1 = np.round(rng.exponential(60.0, total) * np.exp(-0.2 * shift))
    d1[rng.random(total) < 0.3] = np.nan
    dist1 = np.round(rng.exponential(20.0, total))
    dist1[rng.random(total) < 0.5] = np.nan
    email = EMAILS[rng.integers(0, len(EMAILS), total)]

    ent_card4 = np.where(rng.random(n_entities) < 0.6, "visa", "mastercard")
    ent_card6 = np.where(rng.random(n_entities) < 0.7, "debit", "credit")
    return pd.DataFrame({
        "TransactionID": np.arange(total, dtype=np.int64) + 1_000_000,
        "isFraud": is_fraud,
        "TransactionDT": np.concatenate(times).astype(np.int64),
        "TransactionAmt": amount,
        "ProductCD": product,
        "card1": 1000 + entity,
        "card2": np.full(total, 111.0),
        "card3": np.full(total, 150.0),
        "card4": ent_card4[entity],
        "card5": np.full(total, 226.0),
        "card6": ent_card6[entity],
        "dist1": dist1,
        "P_emaildomain": email,
        "C1": c1,
        "C2": c2,
        "D1": d1,
    })


def entity_fraud_rate(records: pd.DataFrame) -> float:
    """Fraction of entities whose latest transaction is labelled fraud."""
    last = records.sort_values(["card1", "TransactionDT"], kind="stable").groupby("card1").tail(1)
    return float(last["isFraud"].mean())
