"""
Monte-Carlo photon generation for pulsed lifetime traces and CW g2 streams.

Every random draw comes from a block substream keyed on ``(seed, block)``, so a
run is reproducible bit for bit and blocks can be generated in any order
(or concurrently) without changing the result.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterator, Optional, Union

import numpy as np
from joblib import Parallel, delayed

from .dynamics import (
    PS_PER_NS,
    ExcitonParams,
    TrionParams,
    dephasing_factor,
    evolve_bloch,
    precession_angle,
)
from .exceptions import ValidationError
from .polarization import (
    Z_AXIS,
    BasisLabel,
    basis_state,
    detection_pair,
    rotate_bloch,
    to_bloch,
)
from .traces import CorrelationTrace, Histogram


logger = logging.getLogger(__name__)

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

PULSE_BLOCK = 1 << 16
CW_BLOCK = 1 << 15
# apply_jitter draws from block 0 of this stream, apart from the emission draws
JITTER_STREAM = 1


class EmitterKind(str, Enum):
    NEUTRAL_EXCITON = "neutral_exciton"
    NEGATIVE_TRION = "negative_trion"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class EmitterConfig:
    """Physical parameters of one emitter plus its optical drive.

    Args:
        kind: Which two-level system emits
        exciton: Parameters when ``kind`` is the neutral exciton
        trion: Parameters when ``kind`` is the negative trion
        pump_rate: CW excitation attempt rate in 1/ns (ignored for pulses)
        pump_polarization: Polarization of the excitation laser
        detection_efficiency: Probability that an emitted photon is recorded
        depolarization: Probability that a photon leaves fully unpolarized
        init_leakage: Rotation (rad) about z of the written Bloch vector
    """

    kind: EmitterKind
    exciton: Optional[ExcitonParams] = None
    trion: Optional[TrionParams] = None
    pump_rate: float = 0.0
    pump_polarization: BasisLabel = BasisLabel.R
    detection_efficiency: float = 1.0
    depolarization: float = 0.0
    init_leakage: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", EmitterKind(self.kind))
        object.__setattr__(self, "pump_polarization", BasisLabel.parse(self.pump_polarization))
        if self.kind is EmitterKind.NEUTRAL_EXCITON and (self.exciton is None or self.trion is not None):
            raise ValidationError("A neutral exciton emitter needs exciton parameters only")
        if self.kind is EmitterKind.NEGATIVE_TRION and (self.trion is None or self.exciton is not None):
            raise ValidationError("A negative trion emitter needs trion parameters only")
        for name in ("detection_efficiency", "depolarization"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}")
        if self.pump_rate < 0:
            raise ValidationError(f"pump_rate must be >= 0, got {self.pump_rate}")

    @property
    def is_trion(self) -> bool:
        return self.kind is EmitterKind.NEGATIVE_TRION

    @property
    def lifetime_tau(self) -> float:
        return self.trion.lifetime_tau if self.is_trion else self.exciton.lifetime_tau

    @property
    def splitting(self) -> float:
        """Splitting of the excited level in ueV."""
        return self.trion.hole_splitting if self.is_trion else self.exciton.e_fss

    @property
    def t2_star(self) -> float:
        """Dephasing time of the excited level in ns."""
        return self.trion.t2_star_hole if self.is_trion else self.exciton.t2_star

    def with_pump(self, pump: Union[str, BasisLabel]) -> "EmitterConfig":
        return replace(self, pump_polarization=BasisLabel.parse(pump))


@dataclass(frozen=True)
class DetectorConfig:
    """Gaussian timing response, dead time and analyzer alignment.

    ``analyzer_rotation`` (rad) turns the analyzer frame about the optical
    axis relative to the dot's H/V frame.
    """

    jitter_fwhm: float = 0.0  # ps
    dead_time: float = 0.0  # ps
    analyzer_rotation: float = 0.0

    def __post_init__(self):
        if self.jitter_fwhm < 0:
            raise ValidationError(f"jitter_fwhm must be >= 0 ps, got {self.jitter_fwhm}")
        if self.dead_time < 0:
            raise ValidationError(f"dead_time must be >= 0 ps, got {self.dead_time}")

    @property
    def sigma(self) -> float:
        return self.jitter_fwhm / FWHM_PER_SIGMA


@dataclass(frozen=True)
class PhotonRecord:
    trajectory_id: int
    pulse_index: int
    emit_time: float
    detect_time: float
    channel: BasisLabel


@dataclass(frozen=True, eq=False)
class PhotonRecords:
    """Columnar store of detected photons; iterating yields :class:`PhotonRecord`."""

    trajectory_id: np.ndarray
    pulse_index: np.ndarray
    emit_time: np.ndarray
    detect_time: np.ndarray
    channel: np.ndarray

    def __len__(self) -> int:
        return len(self.trajectory_id)

    def __getitem__(self, index: int) -> PhotonRecord:
        return PhotonRecord(
            int(self.trajectory_id[index]),
            int(self.pulse_index[index]),
            float(self.emit_time[index]),
            float(self.detect_time[index]),
            BasisLabel(str(self.channel[index])),
        )

    def __iter__(self) -> Iterator[PhotonRecord]:
        for index in range(len(self)):
            yield self[index]

    @classmethod
    def empty(cls) -> "PhotonRecords":
        return cls(
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty(0),
            np.empty(0),
            np.empty(0, dtype="<U1"),
        )

    @classmethod
    def concatenate(cls, parts: list["PhotonRecords"]) -> "PhotonRecords":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(
            *(
                np.concatenate([getattr(p, name) for p in parts])
                for name in ("trajectory_id", "pulse_index", "emit_time", "detect_time", "channel")
            )
        )

    def select(self, mask: np.ndarray) -> "PhotonRecords":
        return PhotonRecords(
            self.trajectory_id[mask],
            self.pulse_index[mask],
            self.emit_time[mask],
            self.detect_time[mask],
            self.channel[mask],
        )

    def with_detect_time(self, detect_time: np.ndarray) -> "PhotonRecords":
        return replace(self, detect_time=np.asarray(detect_time, dtype=float))

    def count(self, channel: Union[str, BasisLabel]) -> int:
        return int(np.count_nonzero(self.channel == BasisLabel.parse(channel).value))


def _block_rng(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    """Generator for one block of draws; ``stream`` separates draw sets sharing a block."""
    if seed < 0:
        raise ValidationError(f"Seed must be a nonnegative integer, got {seed}")
    entropy = [int(seed), int(block)] + ([int(stream)] if stream else [])
    return np.random.default_rng(np.random.SeedSequence(entropy))


def initial_bloch(config: EmitterConfig) -> np.ndarray:
    """Bloch vector the pump writes into the excited level.

    The exciton spin and the trion's hole both follow the pump's Stokes
    vector, R/L landing on the z poles.
    """
    written = to_bloch(basis_state(config.pump_polarization)).as_array()
    if config.init_leakage:
        written = rotate_bloch(written, Z_AXIS, config.init_leakage)
    return written


# ----------------------------------------------------------------------
# Pulsed excitation


def simulate_pulsed(
    config: EmitterConfig,
    detector: DetectorConfig,
    detection_basis,
    n_pulses: int,
    seed: int,
    n_jobs: int = 1,
) -> PhotonRecords:
    """Polarization-resolved lifetime measurement, one emission per pulse.

    Args:
        config: Emitter; ``pump_polarization`` writes the initial spin
        detector: Jitter and analyzer alignment
        detection_basis: Antipodal analyzer pair, e.g. ``"RL"``
        n_pulses: Number of excitation pulses (>= 1)
        seed: Run seed
        n_jobs: Blocks generated concurrently (joblib); results do not depend on it

    Returns:
        Detected photons in pulse order
    """
    pair = detection_pair(detection_basis)
    if int(n_pulses) < 1:
        raise ValidationError(f"n_pulses must be >= 1, got {n_pulses}")
    n_pulses = int(n_pulses)
    starts = range(0, n_pulses, PULSE_BLOCK)
    logger.debug(
        "Pulsed run: %s pump=%s basis=%s%s pulses=%d seed=%d",
        config.kind,
        config.pump_polarization,
        *pair,
        n_pulses,
        seed,
    )
    bounds = [(start, min(start + PULSE_BLOCK, n_pulses)) for start in starts]
    if n_jobs == 1:
        blocks = [_pulse_block(config, detector, pair, lo, hi, seed) for lo, hi in bounds]
    else:
        blocks = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_pulse_block)(config, detector, pair, lo, hi, seed) for lo, hi in bounds
        )
    return PhotonRecords.concatenate(blocks)


def _pulse_block(config, detector, pair, start, stop, seed) -> PhotonRecords:
    rng = _block_rng(seed, start // PULSE_BLOCK)
    n = stop - start
    # fixed draw order keeps every knob (efficiency, jitter, depolarization)
    # from reshuffling the underlying physics
    emit_time = rng.exponential(config.lifetime_tau, n)
    u_depol = rng.random(n)
    u_channel = rng.random(n)
    u_detect = rng.random(n)
    jitter = rng.standard_normal(n) * detector.sigma

    stokes = evolve_bloch(
        np.broadcast_to(initial_bloch(config), (n, 3)).copy(),
        config.splitting,
        emit_time,
        config.t2_star,
    )
    if config.is_trion:
        # the photon is entangled with the electron; only circular light survives
        stokes[:, :2] = 0.0
    stokes[u_depol < config.depolarization] = 0.0
    if detector.analyzer_rotation:
        stokes = rotate_bloch(stokes, Z_AXIS, -2.0 * detector.analyzer_rotation)

    co, cross = pair
    p_co = 0.5 * (1.0 + stokes @ co.axis.as_array())
    channel = np.where(u_channel < p_co, co.value, cross.value)
    kept = u_detect < config.detection_efficiency

    pulses = np.arange(start, stop, dtype=np.int64)
    return PhotonRecords(
        trajectory_id=pulses[kept],
        pulse_index=pulses[kept],
        emit_time=emit_time[kept],
        detect_time=(emit_time + jitter)[kept],
        channel=channel[kept],
    )


def apply_jitter(records: PhotonRecords, detector: DetectorConfig, seed: int) -> PhotonRecords:
    """Add Gaussian timing noise (sigma = FWHM / 2.3548) to every detect_time."""
    if detector.jitter_fwhm == 0 or not len(records):
        return records
    rng = _block_rng(seed, 0, stream=JITTER_STREAM)
    return records.with_detect_time(
        records.detect_time + rng.standard_normal(len(records)) * detector.sigma
    )


def visibility_factor(jitter_fwhm: float, period: float) -> float:
    """Attenuation of a cosine of ``period`` ps under Gaussian jitter."""
    if not period > 0:
        raise ValidationError(f"Period must be > 0 ps, got {period!r}")
    sigma = jitter_fwhm / FWHM_PER_SIGMA
    return math.exp(-2.0 * math.pi**2 * sigma**2 / period**2)


# ----------------------------------------------------------------------
# CW excitation


def simulate_cw_g2(
    config: EmitterConfig,
    detector: DetectorConfig,
    detect_channel: Union[str, BasisLabel],
    duration: float,
    seed: int,
) -> np.ndarray:
    """Time tags of a CW-driven trion detected behind one circular analyzer.

    Classical jump process. In the ground level the electron precesses at
    delta_e/hbar and an excitation succeeds at rate pump_rate (1 +- s_z)/2,
    writing the hole along the pump's circular axis. The hole precesses at
    delta_h/hbar until emission at rate 1/tau; the photon is R with
    probability (1 + h_z)/2 and leaves the electron on the matching pole.

    Args:
        config: Negative-trion emitter with ``pump_rate`` > 0 (1/ns)
        detector: Jitter and dead time
        detect_channel: R or L
        duration: Integration time in ns
        seed: Run seed

    Returns:
        Sorted detection times in ps
    """
    if not config.is_trion:
        raise ValidationError("CW g2 simulation needs a negative trion emitter")
    if not config.pump_rate > 0:
        raise ValidationError(f"CW mode needs pump_rate > 0 (1/ns), got {config.pump_rate}")
    if config.pump_polarization not in (BasisLabel.R, BasisLabel.L):
        raise ValidationError(
            f"CW pump must be circular (R or L), got {config.pump_polarization}"
        )
    channel = BasisLabel.parse(detect_channel)
    if channel not in (BasisLabel.R, BasisLabel.L):
        raise ValidationError(f"CW detection channel must be R or L, got {channel}")
    if not duration > 0:
        raise ValidationError(f"Duration must be > 0 ns, got {duration}")

    trion = config.trion
    pump_sign = 1.0 if config.pump_polarization is BasisLabel.R else -1.0
    detect_sign = 1.0 if channel is BasisLabel.R else -1.0
    horizon = duration * PS_PER_NS
    rate = config.pump_rate / PS_PER_NS

    clock = 0.0
    electron_sign = 0.0  # unpolarized before the first emission
    tags = []
    n_emitted = 0
    block = 0
    while clock < horizon:
        rng = _block_rng(seed, block)
        m = CW_BLOCK
        excited = rng.exponential(trion.lifetime_tau, m)
        u_depol = rng.random(m)
        u_channel = rng.random(m)
        u_detect = rng.random(m)
        jitter = rng.standard_normal(m) * detector.sigma

        hole_z = (
            pump_sign
            * np.cos(precession_angle(trion.hole_splitting, excited))
            * dephasing_factor(trion.t2_star_hole, excited)
        )
        hole_z[u_depol < config.depolarization] = 0.0
        outcome = np.where(u_channel < 0.5 * (1.0 + hole_z), 1.0, -1.0)
        previous = np.concatenate([[electron_sign], outcome[:-1]])

        ground = _ground_dwell(rng, previous, pump_sign, rate, trion, horizon - clock)
        ends = clock + np.cumsum(ground + excited)
        inside = ends <= horizon
        detected = inside & (outcome == detect_sign) & (u_detect < config.detection_efficiency)
        tags.append(ends[detected] + jitter[detected])
        n_emitted += int(np.count_nonzero(inside))

        if not inside.all():
            break
        clock = float(ends[-1])
        electron_sign = float(outcome[-1])
        block += 1

    stream = np.sort(np.concatenate(tags)) if tags else np.empty(0)
    if detector.dead_time > 0:
        stream = _apply_dead_time(stream, detector.dead_time)
    logger.info(
        "CW run: B=%.3f T, %d emissions, %d detections in %.1f ns (seed %d)",
        trion.b_field,
        n_emitted,
        stream.size,
        duration,
        seed,
    )
    if stream.size < 2:
        logger.warning(
            "Only %d detection(s) in %.1f ns: the correlation will be empty", stream.size, duration
        )
    return stream


def _ground_dwell(rng, previous, pump_sign, rate, trion: TrionParams, horizon) -> np.ndarray:
    """Waiting times in the ground level by thinning a rate-``rate`` proposal process.

    Dwell times that would run past ``horizon`` are returned as inf.
    """
    dwell = np.zeros(previous.size)
    splitting = trion.electron_splitting
    if splitting == 0.0 and math.isinf(trion.t2_star_electron):
        # frozen electron: constant rate, possibly zero (optically pumped dark)
        effective = rate * 0.5 * (1.0 + pump_sign * previous)
        dwell = np.full(previous.size, np.inf)
        live = effective > 0
        dwell[live] = rng.exponential(1.0 / effective[live])
        dwell[dwell > horizon] = np.inf
        return dwell

    pending = np.arange(previous.size)
    while pending.size:
        dwell[pending] += rng.exponential(1.0 / rate, pending.size)
        t = dwell[pending]
        electron_z = (
            previous[pending]
            * np.cos(precession_angle(splitting, t))
            * dephasing_factor(trion.t2_star_electron, t)
        )
        accepted = rng.random(pending.size) < 0.5 * (1.0 + pump_sign * electron_z)
        overdue = t > horizon
        dwell[pending[overdue]] = np.inf
        pending = pending[~(accepted | overdue)]
    return dwell


def _apply_dead_time(stream: np.ndarray, dead_time: float) -> np.ndarray:
    kept = []
    ready = -np.inf
    for tag in stream:
        if tag >= ready:
            kept.append(tag)
            ready = tag + dead_time
    return np.asarray(kept, dtype=float)


# ----------------------------------------------------------------------
# Histograms and correlations


def build_histogram(
    records,
    bin_width: float,
    time_range: tuple[float, float],
    channel: Union[str, BasisLabel, None] = None,
    use_emit_time: bool = False,
) -> Histogram:
    """Histogram detection (or emission) times of records, optionally one channel only.

    Args:
        records: :class:`PhotonRecords` or a plain array of times
        bin_width: Bin width in ps
        time_range: ``(start, stop)`` in ps
        channel: Keep only this polarization channel
        use_emit_time: Histogram emission instead of detection times
    """
    if not bin_width > 0:
        raise ValidationError(f"bin_width must be > 0 ps, got {bin_width}")
    start, stop = (float(v) for v in time_range)
    if not stop > start:
        raise ValidationError(f"Empty histogram range ({start}, {stop})")
    label = None
    if isinstance(records, PhotonRecords):
        if channel is not None:
            label = BasisLabel.parse(channel).value
            records = records.select(records.channel == label)
        times = records.emit_time if use_emit_time else records.detect_time
    else:
        if channel is not None:
            raise ValidationError("A channel filter needs photon records, not bare times")
        times = np.asarray(records, dtype=float)
    n_bins = max(1, int(math.ceil((stop - start) / bin_width - 1e-9)))
    edges = start + bin_width * np.arange(n_bins + 1)
    counts, _ = np.histogram(times, bins=edges)
    return Histogram(edges=edges, counts=counts.astype(np.int64), channel=label)


def correlate(tags: np.ndarray, bin_width: float, max_delay: float) -> CorrelationTrace:
    """Coincidence histogram of all tag pairs within +-``max_delay``.

    Args:
        tags: Sorted detection times in ps
        bin_width: Bin width in ps; bins are centered on multiples of it
        max_delay: Largest delay in ns

    Returns:
        Raw (unnormalized) trace with Poisson errors
    """
    tags = np.asarray(tags, dtype=float)
    if tags.size < 2:
        raise ValidationError(f"Need at least 2 tags to correlate, got {tags.size}")
    if np.any(np.diff(tags) < 0):
        raise ValidationError("Time tags must be sorted")
    if not bin_width > 0 or not max_delay > 0:
        raise ValidationError("bin_width and max_delay must be > 0")

    n_side = int(round(max_delay * PS_PER_NS / bin_width))
    limit = (n_side + 0.5) * bin_width
    edges = (np.arange(n_side + 2) - 0.5) * bin_width
    one_sided = np.zeros(n_side + 1, dtype=np.int64)
    for lag in range(1, tags.size):
        delays = tags[lag:] - tags[:-lag]
        if delays.min() > limit:
            break
        counts, _ = np.histogram(delays[delays < limit], bins=edges)
        one_sided += counts

    values = np.concatenate([one_sided[:0:-1], [2 * one_sided[0]], one_sided[1:]]).astype(float)
    delay = np.arange(-n_side, n_side + 1) * bin_width
    return CorrelationTrace(delay=delay, value=values, error=np.sqrt(values))
