"""Builds the WADA lookup table shipped in ``data/``.

The WADA statistic of a noisy signal z = s + n is
``log E|z| - E log|z|``.  Under the WADA model the clean amplitude |s| is
gamma distributed (shape 0.4, random sign) and n is white Gaussian.  This
module evaluates that expectation by quadrature for each SNR on a grid.

Run ``python -m clinasr._wada_model`` to regenerate the data file.
"""

import warnings
from pathlib import Path

import numpy as np
from scipy import integrate, interpolate, special

SPEECH_SHAPE = 0.4
TABLE_PATH = Path(__file__).parent / "data" / "wada_gamma_0.4.csv"
TABLE_VERSION = "1"


def _elog_shifted_normal(m):
    # E log|m + n| for n ~ N(0, 1)
    if m > 1e4:
        return np.log(m) - 0.5 / m**2 - 0.75 / m**4

    def f(y):
        return np.log(y) * (np.exp(-0.5 * (y - m) ** 2) + np.exp(-0.5 * (y + m) ** 2)) / np.sqrt(2 * np.pi)

    if m > 40:
        return integrate.quad(f, m - 40, m + 40, points=[m], limit=400, epsabs=1e-14)[0]
    return integrate.quad(f, 0, m + 40, points=[m] if m > 0 else None, limit=400, epsabs=1e-13)[0]


class _LogResidual:
    """Spline of E log|m + n| - log m over log m."""

    def __init__(self):
        self.grid = np.linspace(np.log(1e-9), np.log(1e4), 3001)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            vals = np.array([_elog_shifted_normal(np.exp(t)) - t for t in self.grid])
            self.at_zero = _elog_shifted_normal(0.0)
        self.spline = interpolate.CubicSpline(self.grid, vals)

    def __call__(self, m):
        if m < 1e-9:
            return self.at_zero - np.log(m)
        if m > 1e4:
            return -0.5 / m**2 - 0.75 / m**4
        return float(self.spline(np.log(m)))


def _excess_abs(m):
    # E|m + n| - m for n ~ N(0, 1), m >= 0
    return np.sqrt(2 / np.pi) * np.exp(-m * m / 2) - 2 * m * special.ndtr(-m)


def wada_statistic(snr_db, shape=SPEECH_SHAPE, residual=None):
    """Model value of log E|z| - E log|z| at the given SNR (unit noise power)."""
    residual = residual or _LogResidual()
    a = shape
    theta = np.sqrt(10 ** (snr_db / 10) / (a * (a + 1)))  # E s^2 = theta^2 a (a+1)

    def weight(t):  # gamma density in t = log u
        return np.exp(a * t - np.exp(t)) / special.gamma(a)

    t0 = -np.log(theta)
    hi = min(t0 + 15, 8.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        e_abs = theta * a + integrate.quad(
            lambda t: _excess_abs(theta * np.exp(t)) * weight(t), -400, hi, points=[t0], limit=500, epsabs=1e-15
        )[0]
        e_log = np.log(theta) + special.digamma(a) + integrate.quad(
            lambda t: residual(theta * np.exp(t)) * weight(t), -400, hi, points=[t0], limit=500, epsabs=1e-15
        )[0]
    return float(np.log(e_abs) - e_log)


def build_table(db_grid=None, shape=SPEECH_SHAPE):
    if db_grid is None:
        db_grid = np.arange(-20.0, 100.0 + 1e-9, 0.5)
    residual = _LogResidual()
    return np.asarray(db_grid, float), np.array([wada_statistic(s, shape, residual) for s in db_grid])


def write_table(path=TABLE_PATH):
    db, g = build_table()
    lines = [
        f"# wada lookup table v{TABLE_VERSION}: gamma speech shape {SPEECH_SHAPE}, gaussian noise",
        "snr_db,statistic",
    ]
    lines += [f"{s:.1f},{v:.12f}" for s, v in zip(db, g)]
    Path(path).write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    write_table()
    print(f"wrote {TABLE_PATH}")
