"""Waveforms, delayed replicas, echo synthesis, noise and whitening.

The transmit set is a family of unit-energy pulses sharing one envelope
(rectangular with a short raised-cosine edge taper) and distinct integer
multiples of 1/Tp as frequency offsets, which makes them orthogonal at
zero lag and keeps all-lag cross-correlations below the construction
bound.  The effective correlation duration tau_c equals the pulse width.

Fractional delays are applied by band-limited interpolation with an
8-tap Kaiser-windowed sinc kernel; the edge taper keeps the sampled
pulses within the band the kernel can track.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.special

from .errors import BandwidthError, NoiseCovarianceError, ObservationWindowError
from .geometry import AntennaLayout, Position2D, Scene, TargetTruth, path_delay

ORTH_BOUND = 0.05
# minimal offset spacing whose worst-lag cross-correlation ~ 1/(pi*spacing)
# sits below ORTH_BOUND
OFFSET_SPACING = 7
MAX_BAND_FRACTION = 0.25  # of the sampling rate; interpolation accuracy limit

KERNEL_TAPS = 8
KERNEL_BETA = 8.0
TAPER_ALPHA = 0.2


@dataclass(frozen=True)
class WaveformSet:
    """Sampled lowpass transmit signals plus timing metadata."""

    samples: np.ndarray        # (N, N_T) complex, unit energy each
    T: float                   # observation window, s
    Ts: float                  # sampling interval, s
    n_samples: int             # N_T
    tau_c: float               # effective correlation duration, s
    orth_bound: float          # measured max |xcorr| over pairs and lags
    offsets: tuple[int, ...]   # frequency offsets in multiples of 1/pulse
    pulse_width: float

    @property
    def n_waveforms(self) -> int:
        return self.samples.shape[0]

    @property
    def pulse_samples(self) -> int:
        return int(np.ceil(self.pulse_width / self.Ts))


@dataclass(frozen=True)
class NoiseModel:
    """Per-path thermal noise power plus optional clutter covariance.

    sigma_sq may be a scalar (homogeneous paths) or an (n_paths,) array.
    clutter_cov is a dense Hermitian matrix applied to every path, or
    None for a white background.
    """

    sigma_sq: float | np.ndarray = 1.0
    clutter_cov: np.ndarray | None = None

    def path_sigma_sq(self, path: int) -> float:
        if np.isscalar(self.sigma_sq):
            return float(self.sigma_sq)
        return float(np.asarray(self.sigma_sq)[path])

    @property
    def is_white(self) -> bool:
        return self.clutter_cov is None

    def covariance(self, n_samples: int, path: int = 0) -> np.ndarray:
        r = self.path_sigma_sq(path) * np.eye(n_samples, dtype=complex)
        if self.clutter_cov is not None:
            c = np.asarray(self.clutter_cov)
            if c.shape != (n_samples, n_samples):
                raise NoiseCovarianceError(
                    f"clutter covariance shape {c.shape} does not match "
                    f"{n_samples} samples")
            r = r + c
        return r


@dataclass(frozen=True)
class PathObservation:
    path: int                  # flat (l, k) index
    r: np.ndarray              # (N_T,) complex
    whitened: bool = False


@dataclass(frozen=True)
class SteeringVector:
    path: int
    theta: Position2D
    samples: np.ndarray

    def energy(self) -> float:
        return float(np.vdot(self.samples, self.samples).real)


def exp_clutter_cov(n_samples: int, rho: float, power: float) -> np.ndarray:
    """Exponentially correlated clutter covariance, C[i, j] = p * rho^|i-j|."""
    idx = np.arange(n_samples)
    return power * rho ** np.abs(idx[:, None] - idx[None, :]) + 0j


def _tukey(n: int, alpha: float) -> np.ndarray:
    w = np.ones(n)
    edge = int(np.floor(alpha * (n - 1) / 2))
    if edge > 0:
        t = np.arange(edge + 1) / (alpha * (n - 1) / 2)
        w[: edge + 1] = 0.5 * (1 + np.cos(np.pi * (t - 1)))
        w[n - 1 - edge:] = w[: edge + 1][::-1]
    return w


def _max_crosscorr(a: np.ndarray, b: np.ndarray) -> float:
    n = len(a) + len(b)
    nfft = 1 << int(np.ceil(np.log2(n)))
    c = np.fft.ifft(np.fft.fft(a, nfft) * np.conj(np.fft.fft(b, nfft)))
    return float(np.max(np.abs(c)) / (np.linalg.norm(a) * np.linalg.norm(b)))


def build_waveform_set(n_waveforms: int, T: float, n_samples: int,
                       pulse_width: float,
                       taper_alpha: float = TAPER_ALPHA) -> WaveformSet:
    """Construct the orthogonal transmit set and verify its bound.

    Offsets are spaced OFFSET_SPACING/pulse_width apart, centred on zero.
    Raises BandwidthError when the offsets would not fit the sampled band
    or the measured cross-correlation exceeds ORTH_BOUND.
    """
    if n_waveforms < 1:
        raise ValueError("need at least one waveform")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    if pulse_width > T:
        raise ValueError("pulse longer than the observation window")
    Ts = T / (n_samples - 1)
    offsets = tuple(OFFSET_SPACING * (k - n_waveforms // 2)
                    for k in range(n_waveforms))
    max_f = max((abs(m) for m in offsets), default=0) / pulse_width
    if max_f * Ts > MAX_BAND_FRACTION:
        raise BandwidthError(
            f"insufficient bandwidth-time product: {n_waveforms} offsets at "
            f"spacing {OFFSET_SPACING}/Tp need {max_f:.3g} Hz, sampling rate "
            f"is {1 / Ts:.3g} Hz")

    p = int(np.ceil(pulse_width / Ts))
    t = np.arange(p) * Ts
    env = _tukey(p, taper_alpha)
    samples = np.zeros((n_waveforms, n_samples), dtype=complex)
    for i, m in enumerate(offsets):
        pulse = env * np.exp(2j * np.pi * m * t / pulse_width)
        samples[i, :p] = pulse / np.linalg.norm(pulse)

    bound = 0.0
    for i in range(n_waveforms):
        for j in range(i + 1, n_waveforms):
            bound = max(bound, _max_crosscorr(samples[i], samples[j]))
    if bound > ORTH_BOUND:
        raise BandwidthError(
            f"insufficient bandwidth-time product: measured cross-correlation "
            f"{bound:.4f} exceeds {ORTH_BOUND}")
    return WaveformSet(samples=samples, T=T, Ts=Ts, n_samples=n_samples,
                       tau_c=pulse_width, orth_bound=bound, offsets=offsets,
                       pulse_width=pulse_width)


def interp_taps(mu, n_taps: int = KERNEL_TAPS, beta: float = KERNEL_BETA):
    """Kaiser-windowed sinc weights for fractional sample offsets mu in [0, 1).

    Returns (tap_offsets, weights) where weights[..., t] multiplies the
    sample at floor(delay) + tap_offsets[t]; delayed[n] = sum_t w_t *
    s[n - n0 - tap_offsets[t]].
    """
    mu = np.asarray(mu, dtype=float)
    j = np.arange(-(n_taps // 2 - 1), n_taps // 2 + 1)
    x = mu[..., None] - j
    half = n_taps / 2
    inside = np.clip(1 - (x / half) ** 2, 0.0, None)
    w = scipy.special.i0(beta * np.sqrt(inside)) / scipy.special.i0(beta)
    core = np.sinc(x)
    # snap integer arguments so whole-sample delays shift exactly
    on_lattice = x == np.round(x)
    core = np.where(on_lattice, (x == 0.0).astype(float), core)
    return j, core * w


def _replica_window(waveforms: WaveformSet, k: int, tau: float):
    """Nonzero span of the delayed replica: (start_index, samples).

    The stored pulse occupies [0, P); each interpolation tap contributes
    a shifted copy, so the result spans at most P + n_taps samples.
    """
    if tau < 0 or tau + waveforms.tau_c > waveforms.T:
        raise ObservationWindowError(
            f"target outside observation window: delay {tau:.3e} s with "
            f"pulse {waveforms.tau_c:.3e} s exceeds window {waveforms.T:.3e} s")
    s = waveforms.samples[k]
    n = waveforms.n_samples
    p = waveforms.pulse_samples
    d = tau / waveforms.Ts
    n0 = int(np.floor(d))
    mu = d - n0
    offs, w = interp_taps(mu)
    span0 = n0 + int(offs[0])
    width = p + len(offs) - 1
    win = np.zeros(width, dtype=complex)
    for i, wt in enumerate(w):
        if wt != 0.0:
            win[i: i + p] += wt * s[:p]
    # clip to the observation window
    lo = max(0, -span0)
    hi = min(width, n - span0)
    return span0 + lo, win[lo:hi]


def delayed_replica(waveforms: WaveformSet, k: int, tau: float) -> np.ndarray:
    """Waveform k delayed by tau seconds, zero before arrival.

    tau + tau_c must stay inside the observation window so the full pulse
    is captured.
    """
    start, win = _replica_window(waveforms, k, tau)
    out = np.zeros(waveforms.n_samples, dtype=complex)
    out[start: start + len(win)] = win
    return out


def steering_vector(waveforms: WaveformSet, path: int, theta: Position2D,
                    layout: AntennaLayout) -> SteeringVector:
    """Delayed replica of the path's transmit waveform for a candidate
    location (the signal a unit target at theta would return)."""
    l, k = divmod(path, layout.n_tx)
    tau = path_delay(layout, theta, l, k)
    return SteeringVector(path=path, theta=theta,
                          samples=delayed_replica(waveforms, k, tau))


def synthesize_observation(scene: Scene, waveforms: WaveformSet,
                           noise: NoiseModel, path: int,
                           rng: np.random.Generator) -> PathObservation:
    """One path's raw echo: superposition of target replicas plus
    circular complex Gaussian noise and clutter."""
    l, k = divmod(path, scene.layout.n_tx)
    r = np.zeros(waveforms.n_samples, dtype=complex)
    for g, t in enumerate(scene.targets):
        alpha = 1.0 + 0j
        if t.per_path_alpha is not None:
            alpha = t.per_path_alpha[l, k]
        start, win = _replica_window(
            waveforms, k, path_delay(scene.layout, t.position, l, k))
        r[start: start + len(win)] += alpha * win
    sigma = np.sqrt(noise.path_sigma_sq(path))
    if sigma > 0:
        n = waveforms.n_samples
        r += sigma * (rng.standard_normal(n)
                      + 1j * rng.standard_normal(n)) / np.sqrt(2)
    if noise.clutter_cov is not None:
        n = waveforms.n_samples
        c = np.asarray(noise.clutter_cov)
        vals, vecs = np.linalg.eigh(c)
        root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T
        z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
        r += root @ z
    return PathObservation(path=path, r=r, whitened=False)


def whitening_matrix(noise: NoiseModel, n_samples: int,
                     path: int = 0) -> np.ndarray:
    """Hermitian inverse square root of the noise-plus-clutter covariance."""
    r = noise.covariance(n_samples, path)
    if not np.allclose(r, r.conj().T):
        raise NoiseCovarianceError("invalid noise covariance: not Hermitian")
    vals, vecs = np.linalg.eigh(r)
    if np.min(vals) <= 0:
        raise NoiseCovarianceError(
            "invalid noise covariance: not positive definite")
    return (vecs * (1.0 / np.sqrt(vals))) @ vecs.conj().T


def whiten(obs: PathObservation, noise: NoiseModel) -> PathObservation:
    """Transform to unit-covariance noise; downstream math then uses R = I."""
    if obs.whitened:
        raise ValueError("observation already whitened")
    if noise.is_white:
        sigma_sq = noise.path_sigma_sq(obs.path)
        if sigma_sq <= 0:
            raise NoiseCovarianceError(
                "invalid noise covariance: non-positive noise power")
        return PathObservation(path=obs.path, r=obs.r / np.sqrt(sigma_sq),
                               whitened=True)
    w = whitening_matrix(noise, len(obs.r), obs.path)
    return PathObservation(path=obs.path, r=w @ obs.r, whitened=True)


def reference_energies(waveforms: WaveformSet, layout: AntennaLayout,
                       noise: NoiseModel, position: Position2D) -> np.ndarray:
    """Post-whitening replica energy s~^H R^-1 s~ of one location on every
    path, shape (M, N)."""
    out = np.empty((layout.n_rx, layout.n_tx))
    for p, l, k in layout.paths():
        sv = steering_vector(waveforms, p, position, layout)
        if noise.is_white:
            e = sv.energy() / noise.path_sigma_sq(p)
        else:
            w = whitening_matrix(noise, waveforms.n_samples, p)
            ws = w @ sv.samples
            e = float(np.vdot(ws, ws).real)
        out[l, k] = e
    return out


def scale_alphas_for_snr(scene: Scene, waveforms: WaveformSet,
                         noise: NoiseModel, snr_db: float,
                         proportions, phase_rngs,
                         ref_position: Position2D | None = None,
                         ref_proportion: float | None = None,
                         ref_energy: np.ndarray | None = None) -> Scene:
    """Set per-path reflection coefficients for a Monte Carlo trial.

    The strongest target's post-whitening matched-filter SNR
    |alpha|^2 (s~^H R^-1 s~) equals 10^(snr_db/10) on every path; the
    other targets' |alpha|^2 follow their proportion of the square
    modulus.  Phases are drawn uniformly per (target, path) from the
    per-target streams in phase_rngs.

    ref_position/ref_proportion pin the reference outside the scene
    (single-target benchmark runs keep the strength each target had in
    the full scene); by default the strongest target in the scene is
    the reference.
    """
    proportions = np.asarray(proportions, dtype=float)
    if len(proportions) != scene.n_targets:
        raise ValueError("one proportion per target required")
    if scene.n_targets == 0:
        return scene
    if np.any(proportions <= 0):
        raise ValueError("proportions must be positive")
    snr = 10.0 ** (snr_db / 10.0)
    if ref_position is None:
        ref = int(np.argmax(proportions))
        ref_position = scene.targets[ref].position
        ref_proportion = proportions[ref]
    elif ref_proportion is None:
        raise ValueError("ref_proportion required with ref_position")
    layout = scene.layout
    m, n = layout.n_rx, layout.n_tx
    if ref_energy is None:
        ref_energy = reference_energies(waveforms, layout, noise, ref_position)

    targets = []
    for g, t in enumerate(scene.targets):
        mag = np.sqrt(snr * proportions[g] / ref_proportion / ref_energy)
        phases = phase_rngs[g].uniform(0.0, 2.0 * np.pi, size=(m, n))
        alpha = mag * np.exp(1j * phases)
        targets.append(TargetTruth(position=t.position,
                                   amplitude_sq=float(proportions[g]),
                                   per_path_alpha=alpha))
    return Scene(layout=layout, targets=tuple(targets), region=scene.region)
