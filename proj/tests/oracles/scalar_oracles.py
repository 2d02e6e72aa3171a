# High-precision reference values frozen into the unit tests.
from mpmath import mp, mpf, sqrt, cos, pi, log, exp

mp.dps = 40


def scaled_linear(n=1000, b0=mpf("0.00085"), b1=mpf("0.012")):
    lo, hi = sqrt(b0), sqrt(b1)
    prod = mpf(1)
    out = []
    for i in range(n):
        r = lo + (hi - lo) * i / (n - 1)
        prod *= 1 - r * r
        out.append(prod)
    return out


def cosine(n=1000, s=mpf("0.008")):
    f = lambda u: cos((u + s) / (1 + s) * pi / 2) ** 2
    prod = mpf(1)
    out = []
    for i in range(n):
        beta = min(1 - f(mpf(i + 1) / n) / f(mpf(i) / n), mpf("0.999"))
        prod *= 1 - beta
        out.append(prod)
    return out


sl = scaled_linear()
for t in (0, 499, 500, 999):
    print(f"scaled_linear t={t} a={mp.nstr(sqrt(sl[t]), 20)} b={mp.nstr(sqrt(1 - sl[t]), 20)}")
cs = cosine()
for t in (0, 500, 999):
    print(f"cosine t={t} a={mp.nstr(sqrt(cs[t]), 20)} b={mp.nstr(sqrt(1 - cs[t]), 20)}")

tau = mpf("0.07")
print("nce(+1,-1,tau=0.07) =", mp.nstr(log(1 + exp(mpf(-2) / tau)), 25))

# toy Gaussian prior, scalar z=1, mu=0, sigma=1, a=0.6, b=0.8
z, mu, sig, a, b = mpf(1), mpf(0), mpf(1), mpf("0.6"), mpf("0.8")
ez0 = mu + a * sig**2 / (a**2 * sig**2 + b**2) * (z - a * mu)
print("posterior eps =", mp.nstr((z - a * ez0) / b, 25))
