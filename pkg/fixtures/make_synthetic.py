"""Regenerate the synthetic end-to-end fixture.

120 trading days, 30 text features of which 5 drive the close price
through a nonlinear function. About 10% of trading days have no article,
some articles fall on weekends/holidays and are pooled forward, and a few
arrive after the last price date.

    python fixtures/make_synthetic.py
"""

import csv
import datetime as dt
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
SEED = 20160104
N_DAYS = 120
NAMES = [
    "WC", "Analytic", "Clout", "Authentic", "Tone", "WPS", "Sixltr", "Dic",
    "function", "pronoun", "ppron", "i", "we", "you", "shehe", "they",
    "ipron", "article", "prep", "auxverb", "adverb", "conj", "negate",
    "verb", "adj", "compare", "interrog", "number", "quant", "affect",
]
INFORMATIVE = (3, 8, 14, 21, 27)
HOLIDAYS = {dt.date(2016, 1, 26), dt.date(2016, 3, 7), dt.date(2016, 3, 24), dt.date(2016, 4, 14)}


def trading_days(start, count):
    days, d = [], start
    while len(days) < count:
        if d.weekday() < 5 and d not in HOLIDAYS:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def close_price(u):
    a, b, c, d, e = u
    g = 1.2 * np.tanh(3 * (a - 0.5)) + b * c + 0.8 * np.sin(2.5 * d) + 0.6 * e**2
    return 350.0 + 40.0 * g


def main():
    rng = np.random.default_rng(SEED)
    days = trading_days(dt.date(2016, 1, 4), N_DAYS)
    p = len(NAMES)
    loc = rng.uniform(1, 40, size=p)
    scale = rng.uniform(0.5, 8, size=p)

    latent = loc + scale * rng.standard_normal((N_DAYS, p))
    u = rng.uniform(0, 1, size=(N_DAYS, len(INFORMATIVE)))
    for k, j in enumerate(INFORMATIVE):
        latent[:, j] = loc[j] + scale[j] * 4 * (u[:, k] - 0.5)
    close = np.array([close_price(row) for row in u]) + rng.normal(0, 1.0, N_DAYS)

    missing = set(rng.choice(np.arange(3, N_DAYS), size=12, replace=False).tolist())

    articles = []
    for t, day in enumerate(days):
        if t in missing:
            continue
        v = latent[t]
        prev = days[t - 1] if t else day - dt.timedelta(days=3)
        gap = [prev + dt.timedelta(days=k) for k in range(1, (day - prev).days)]
        if gap and rng.random() < 0.5:
            # pooled with the next trading day: the mean of all pooled rows is v
            delta = scale * rng.standard_normal(p) * 0.3
            articles += [(gap[0], v + delta), (gap[-1], v - delta), (day, v)]
        elif rng.random() < 0.4:
            delta = scale * rng.standard_normal(p) * 0.3
            articles += [(day, v + delta), (day, v - delta)]
        else:
            articles.append((day, v))
    tail = days[-1] + dt.timedelta(days=1)
    articles += [(tail, latent[-1]), (tail + dt.timedelta(days=1), latent[-2])]

    with (HERE / "synthetic_features.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *NAMES])
        for day, v in articles:
            w.writerow([day.isoformat(), *(f"{x:.6f}" for x in v)])
    with (HERE / "synthetic_prices.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "close"])
        for day, c in zip(days, close):
            w.writerow([day.isoformat(), f"{c:.2f}"])


if __name__ == "__main__":
    main()
