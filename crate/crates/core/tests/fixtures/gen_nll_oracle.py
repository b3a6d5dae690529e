"""Writes nll_oracle.csv: logistic NLL log(4a) - 2 log sech((s - mu)/2a)
evaluated with mpmath at 60 digits, with a = exp(log_a) taken exactly
from the stored double. The value is split into a double `nll_hi` and the
rounding residual `nll_lo`."""

import random

import mpmath

mpmath.mp.dps = 60
rng = random.Random(20240611)
rows = []
for i in range(10_000):
    log_a = rng.uniform(float(mpmath.log(1e-3)), float(mpmath.log(1e3)))
    mu = rng.uniform(-50.0, 150.0)
    if i % 2 == 0:
        d = rng.uniform(-1e4, 1e4)
    else:
        d = float(mpmath.exp(log_a)) * rng.uniform(-30.0, 30.0)
        d = max(-1e4, min(1e4, d))
    s = mu + d
    a = mpmath.exp(mpmath.mpf(log_a))
    z = (mpmath.mpf(s) - mpmath.mpf(mu)) / (2 * a)
    nll = mpmath.log(4 * a) - 2 * mpmath.log(mpmath.sech(z))
    hi = float(nll)
    lo = float(nll - mpmath.mpf(hi))
    rows.append(f"{log_a!r},{mu!r},{s!r},{hi!r},{lo!r}")

with open("nll_oracle.csv", "w") as f:
    f.write("log_a,mu,s,nll_hi,nll_lo\n")
    f.write("\n".join(rows) + "\n")
