"""Independent reference implementations used only by the tests."""

import cmath
import itertools
import math

C0 = 299_792_458.0


def naive_gdft(data, occupancy, scs_base_hz, aoa, aod, delays):
    """Explicit triple loop over (k, p, n') for every grid point."""
    n_r, n_t, n_bins = data.shape
    out = []
    for th, ph, tau in zip(aoa, aod, delays):
        acc = 0j
        for k in range(1, n_r + 1):
            for p in range(1, n_t + 1):
                for n in range(n_bins):
                    if occupancy[n] == 0:
                        continue
                    h = (cmath.exp(-1j * math.pi * k * math.sin(th))
                         * cmath.exp(-1j * math.pi * p * math.sin(ph))
                         * cmath.exp(2j * math.pi * n * scs_base_hz * tau))
                    acc += h * data[k - 1, p - 1, n]
        out.append(abs(acc))
    return out


def brute_force_cost(estimates, truths, miss_penalty_sq):
    """Minimum assignment cost by enumerating every injective matching."""
    n_t, n_e = len(truths), len(estimates)
    best = math.inf
    for chosen in itertools.permutations(range(n_e), min(n_t, n_e)):
        for truth_ids in itertools.permutations(range(n_t), len(chosen)):
            cost = sum((truths[t][0] - estimates[e][0]) ** 2 + (truths[t][1] - estimates[e][1]) ** 2
                       for t, e in zip(truth_ids, chosen))
            cost += (n_t - len(chosen)) * miss_penalty_sq
            best = min(best, cost)
    return best


def path_sum(target, a, b):
    return math.dist(target, a) + math.dist(target, b)


def ellipse_position(sin_aoa, path_m, mbs, mibs):
    """MBS ray intersected with the bistatic ellipse, by direct root finding.

    Solves |t u| + |t u - (mibs - mbs)| = path for t > 0 by bisection.
    """
    cos_aoa = math.sqrt(max(0.0, 1.0 - sin_aoa ** 2))
    ux, uy = sin_aoa, cos_aoa
    bx, by = mibs[0] - mbs[0], mibs[1] - mbs[1]

    def excess(t):
        return t + math.hypot(t * ux - bx, t * uy - by) - path_m

    lo, hi = 0.0, path_m
    if excess(lo) >= 0 or excess(hi) < 0:
        return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    return mbs[0] + t * ux, mbs[1] + t * uy


def propagated_bound(truth, sin_aoa, delay, sin_bin, delay_bin, mbs, mibs, samples=101):
    """Largest position error over the +-1 bin box in (sin AoA, delay)."""
    worst = 0.0
    for s in [sin_aoa - sin_bin + 2 * sin_bin * i / (samples - 1) for i in range(samples)]:
        s = min(max(s, -1.0), 1.0)
        for d in [delay - delay_bin + 2 * delay_bin * i / (samples - 1) for i in range(samples)]:
            pos = ellipse_position(s, d * C0, mbs, mibs)
            if pos is not None:
                worst = max(worst, math.dist(pos, truth))
    return worst
