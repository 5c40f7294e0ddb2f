"""Independent reference computations used by the test-suite.

Everything here is written against mpmath or plain closed forms and shares
no code with the package, so agreement between the two is meaningful.
"""
import mpmath as mp

mp.mp.dps = 30


def gaussian_density(x, variances):
    """Centred Gaussian density with diagonal covariance at a point."""
    q = mp.fsum(mp.mpf(xi) ** 2 / v for xi, v in zip(x, variances))
    det = mp.fprod(variances)
    return (2 * mp.pi) ** (-mp.mpf(len(x)) / 2) / mp.sqrt(det) * mp.e ** (-q / 2)


def walk_series(q, d, n_start=2, n_direct=4000):
    """``sum_{n >= n_start} (2 pi n)^{-d/2} exp(-q/(2n))`` for unit determinant.

    Direct summation to ``n_direct`` followed by the midpoint-rule integral of
    the tail with its first two Euler-Maclaurin corrections; the neglected
    remainder is of order ``n_direct^{-d/2 - 5}``.
    """
    q = mp.mpf(q)

    def term(n):
        return (2 * mp.pi * n) ** (-mp.mpf(d) / 2) * mp.e ** (-q / (2 * n))

    head = mp.fsum(term(n) for n in range(n_start, n_direct + 1))
    a = n_direct + mp.mpf(1) / 2
    tail = mp.quad(term, [a, 10 * n_direct, mp.inf])
    tail += mp.diff(term, a, 1) / 24 - 7 * mp.diff(term, a, 3) / 5760
    return head + tail


def walk_c(variances, x, n_start=2):
    """Walk two-point function for diagonal step covariance ``variances``."""
    q = mp.fsum(mp.mpf(xi) ** 2 / v for xi, v in zip(x, variances))
    return walk_series(q, len(x), n_start) / mp.sqrt(mp.fprod(variances))


def a_d(d):
    return mp.gamma(mp.mpf(d - 2) / 2) / (2 * mp.pi ** (mp.mpf(d) / 2))


def infrared_constant_gaussian(scale):
    """``min_k (1 - exp(-s|k|^2/2)) / (|k|^2 ∧ 1)`` for covariance ``s I``.

    The ratio ``(1 - e^{-s t/2})/t`` is decreasing in ``t``, so the minimum
    over ``|k| <= 1`` sits at ``|k| = 1``; beyond it the numerator increases.
    """
    return 1 - mp.e ** (-mp.mpf(scale) / 2)


def chi_shell_average(d, t, a, b):
    """Average of the ``N(0, t I)`` density over the shell ``a <= |x| < b``."""
    d = mp.mpf(d)
    prob = mp.gammainc(d / 2, a * a / (2 * t), b * b / (2 * t), regularized=True)
    vol = mp.pi ** (d / 2) / mp.gamma(d / 2 + 1) * (mp.mpf(b) ** d - mp.mpf(a) ** d)
    return prob / vol


def radial_gaussian_smoothing_3d(h, rho, s, r_max):
    """``E[h(|x + Z|)]`` for ``Z ~ N(0, s I_3)``, ``|x| = rho > 0`` and radial ``h``.

    In three dimensions the angular average of the Gaussian is elementary:
    ``r / (rho sqrt(2 pi s)) (exp(-(r - rho)^2/2s) - exp(-(r + rho)^2/2s))``.
    """
    rho, s = mp.mpf(rho), mp.mpf(s)

    def integrand(r):
        return h(r) * r / (rho * mp.sqrt(2 * mp.pi * s)) * (
            mp.e ** (-(r - rho) ** 2 / (2 * s)) - mp.e ** (-(r + rho) ** 2 / (2 * s)))

    return mp.quad(integrand, [0, rho, r_max])
