"""Independent brute-force oracles used to pin expected values.

Everything here is deliberately naive: exhaustive enumeration and direct
formula evaluation, sharing no code paths with the package implementations
they check.
"""
from itertools import combinations, permutations

import numpy as np


def brute_force_mcs(g1, g2) -> int:
    """Largest common induced subgraph by exhaustive enumeration over all
    vertex subsets of g1 and injective kind-preserving mappings into g2."""
    v1 = list(g1.vertices)
    v2 = list(g2.vertices)

    def compatible(a, b):
        return a.kind == b.kind

    def induced_match(subset, image):
        for x in range(len(subset)):
            for y in range(x + 1, len(subset)):
                e1 = g1.has_edge(subset[x].id, subset[y].id)
                e2 = g2.has_edge(image[x].id, image[y].id)
                if e1 != e2:
                    return False
        return True

    for k in range(min(len(v1), len(v2)), 0, -1):
        for subset in combinations(v1, k):
            for image in permutations(v2, k):
                if all(compatible(a, b) for a, b in zip(subset, image)) and \
                        induced_match(subset, image):
                    return k
    return 0


def brute_force_isomorphic(g1, g2) -> bool:
    """Kind-preserving graph isomorphism by trying every vertex bijection."""
    if g1.n_vertices != g2.n_vertices or len(g1.edges) != len(g2.edges):
        return False
    v1 = list(g1.vertices)
    v2 = list(g2.vertices)
    for image in permutations(v2):
        if any(a.kind != b.kind for a, b in zip(v1, image)):
            continue
        ok = True
        for x in range(len(v1)):
            for y in range(x + 1, len(v1)):
                if g1.has_edge(v1[x].id, v1[y].id) != g2.has_edge(image[x].id, image[y].id):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return True
    return False


def pinned_beam_frequencies(length, width, thickness, modulus, density, n):
    """Closed-form natural frequencies [Hz] of a pinned-pinned uniform
    Euler-Bernoulli beam: omega_n = (n*pi/l)^2 * sqrt(EI / (rho*w*t))."""
    inertia = width * thickness**3 / 12.0
    mass_per_length = density * width * thickness
    freqs = []
    for mode in range(1, n + 1):
        omega = (mode * np.pi / length) ** 2 * np.sqrt(modulus * inertia / mass_per_length)
        freqs.append(omega / (2.0 * np.pi))
    return np.array(freqs)


def direct_dft(samples):
    """O(N^2) complex DFT straight from the definition."""
    n = len(samples)
    out = np.zeros(n, dtype=complex)
    for k in range(n):
        for m in range(n):
            out[k] += samples[m] * np.exp(-2j * np.pi * k * m / n)
    return out


def averaged_periodogram_psd(samples, n_window, f_s):
    """Hann-windowed, 50%-overlap averaged one-sided periodogram with
    per-segment mean removal: the textbook estimator the stored Welch
    operator must reproduce."""
    samples = np.asarray(samples, dtype=float)
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_window) / n_window)
    step = n_window // 2
    n_segments = (len(samples) - step) // step
    acc = np.zeros(n_window // 2 + 1)
    norm = f_s * np.sum(window**2)
    for s in range(n_segments):
        seg = samples[s * step: s * step + n_window]
        seg = seg - seg.mean()
        spec = np.fft.rfft(seg * window)
        p = (np.abs(spec) ** 2) / norm
        p[1:-1] *= 2.0
        acc += p
    return acc / n_segments
