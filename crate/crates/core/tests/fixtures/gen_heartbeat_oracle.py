"""Regenerates heartbeat_oracle.csv: direct evaluation of the two-sound
heartbeat model with exact rational phase folding and 50-digit mpmath.

    python3 gen_heartbeat_oracle.py > heartbeat_oracle.csv
"""
import random
from fractions import Fraction

import mpmath

mpmath.mp.dps = 50

RATES = [8000, 22050, 44100, 48000]
H_LEVELS = [60.0, 75.0, 90.0, 105.0, 120.0]
F_LEVELS = [100.0, 150.0, 200.0, 250.0, 300.0]
SETS = 100
POINTS = 100
MAX_SECONDS = 3


def s1(tp, a, b, f):
    return a * mpmath.exp(-b * tp) * mpmath.sin(2 * mpmath.pi * f * tp)


def value(i, rate, a, b, c, phi, h, f):
    t = Fraction(i, rate)
    period = Fraction(60) / Fraction(h)
    tp = t - period * (t // period)
    if tp != 0 and (period - tp) < Fraction(1, 10**9):
        return None
    m = lambda q: mpmath.mpf(q.numerator) / q.denominator
    a, b, c, f = (mpmath.mpf(x) for x in (a, b, c, f))
    v1 = s1(m(tp), a, b, f)
    if tp < Fraction(phi):
        v2 = mpmath.mpf(0)
    else:
        v2 = c * s1(m(tp - Fraction(phi)), a, b, f)
    return v1 + v2


def main():
    rng = random.Random(0x5EED)
    print("set,a,b,c,phi,h_bpm,f_hz,sample_rate,index,value")
    for s in range(SETS):
        rate = rng.choice(RATES)
        if s < 20:
            a, b, c, phi = 1.0, 30.0, 0.5, 0.3
            h, f = rng.choice(H_LEVELS), rng.choice(F_LEVELS)
        else:
            a = round(rng.uniform(0.2, 1.5), 6)
            b = round(rng.uniform(5.0, 60.0), 6)
            c = round(rng.uniform(0.0, 1.0), 6)
            h = round(rng.uniform(40.0, 180.0), 6)
            phi = round(rng.uniform(0.02, 0.9 * 60.0 / h), 6)
            f = round(rng.uniform(50.0, 400.0), 6)
        n = 0
        while n < POINTS:
            i = rng.randrange(0, MAX_SECONDS * rate)
            v = value(i, rate, a, b, c, phi, h, f)
            if v is None:
                continue
            print(f"{s},{a!r},{b!r},{c!r},{phi!r},{h!r},{f!r},{rate},{i},{mpmath.nstr(v, 25)}")
            n += 1


if __name__ == "__main__":
    main()
