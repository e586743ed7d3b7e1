"""Reference values frozen into the unit tests, evaluated at 30 digits."""
from mpmath import mp, mpf, e, erfc, exp, log, pi, sqrt

mp.dps = 30


def sig(a):
    return 1 / (1 + exp(-a))


def log_pdf(z):
    return -z * z / 2 - log(2 * pi) / 2


def phi(z):
    return erfc(-z / sqrt(2)) / 2


def log_surv(z):
    return log(erfc(z / sqrt(2)) / 2)


values = {
    "std_normal_log_pdf(3)": log_pdf(mpf(3)),
    "std_normal_cdf(1)": phi(mpf(1)),
    "std_normal_log_survival(10)": log_surv(mpf(10)),
    "std_normal_log_survival(5)": log_surv(mpf(5)),
    "std_normal_log_survival(5 + 1e-9)": log_surv(mpf(5) + mpf("1e-9")),
    "sigmoid(2)": sig(mpf(2)),
    "log_sigmoid(2)": log(sig(mpf(2))),
    "sigmoid(1.5)": sig(mpf("1.5")),
    "sigmoid(0.7)": sig(mpf("0.7")),
    "sigmoid(1)": sig(mpf(1)),
    "exp(-2)": exp(mpf(-2)),
    "exp(2.3)": exp(mpf("2.3")),
    "ln 9": log(mpf(9)),
    "lognormal_log_density(2, 0.5, 0.8)": -log(mpf(2)) - log(mpf("0.8")) + log_pdf((log(mpf(2)) - mpf("0.5")) / mpf("0.8")),
    "lognormal_log_survivor(e, 0, 1)": log_surv(log(e)),
    "arm grad f=c1c2 h=(0.3,-0.7), d/dh1": sig(mpf("0.3")) * sig(mpf("-0.3")) * sig(mpf("-0.7")),
    "arm grad f=c1c2 h=(0.3,-0.7), d/dh2": sig(mpf("0.3")) * sig(mpf("-0.7")) * sig(mpf("0.7")),
    "corr(log t, x5) at a=0.5, noise_t=0.3": mpf("0.5") / sqrt(mpf("0.25") + mpf("0.09")),
    "disk radius sqrt(2 ln 2)": sqrt(2 * log(mpf(2))),
}

if __name__ == "__main__":
    for k, v in values.items():
        print(f"{k:45s} {mp.nstr(v, 18)}")
