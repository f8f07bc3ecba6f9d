"""
Seeded Monte-Carlo sweeps over Eb/N0 for BER and sensing RMSE.

Every frame draws from its own generator, derived from
``(seed, ebno_index, frame_index, stream)`` through
``numpy.random.SeedSequence(seed, spawn_key=(ebno_index, frame_index, stream))``
feeding a PCG64 bit generator. Results are reduced in frame order, so a
sweep is reproducible bit-for-bit regardless of the worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from cdma_otfs import __version__
from cdma_otfs.channel import (
    CommChannelParams,
    DopplerRounding,
    SenChannelParams,
    apply_channel,
    apply_paths,
    build_dd_channel,
    complex_gaussian,
    sample_comm_channel,
    sample_sensing_channel,
)
from cdma_otfs.crb import CrbInputs, crb_range, crb_velocity
from cdma_otfs.errors import InvalidParameterError, NumericFailure
from cdma_otfs.frame import GridConfig, Scheme, make_plan, map_bits_qpsk, spread
from cdma_otfs.receiver import count_bit_errors, detect, ebno_to_n0, mmse_matrix
from cdma_otfs.sensing import estimate_targets, match_to_truth
from cdma_otfs.sequences import Family

STREAM_BITS = 0
STREAM_CHANNEL = 1
STREAM_NOISE = 2

BER_COLUMNS = ("ebno_db", "ber", "bits", "errors", "frames", "seconds")
RMSE_COLUMNS = ("ebno_db", "rmse_range_m", "rmse_velocity_mps", "crb_range_m",
                "crb_velocity_mps", "frames", "seconds")


@dataclass(frozen=True)
class PlanSpec:
    scheme: Scheme = Scheme.PURE_OTFS
    family: Family | None = None
    n_mult: int | None = None  # None = full load

    def label(self, config):
        from cdma_otfs.frame import full_load
        n_mult = self.n_mult or full_load(self.scheme, config)
        fam = self.family.value if self.family else "none"
        return f"{self.scheme.value}_{fam}_{n_mult}"


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    plan: PlanSpec = field(default_factory=PlanSpec)
    comm: CommChannelParams | None = None
    sen: SenChannelParams | None = None
    ebno_db: tuple = (0.0,)
    min_bit_errors: int = 600
    max_bits: int = 10_000_000
    frames: int = 4000
    N_ML: int = 8
    seed: int = 0
    doppler_rounding: DopplerRounding = DopplerRounding.FRACTIONAL
    redraw_clutter: bool = True
    exclusion_radius: int = 0

    def __post_init__(self):
        problems = []
        grid = tuple(float(v) for v in self.ebno_db)
        if not grid:
            problems.append("ebno_db must be non-empty")
        elif any(b <= a for a, b in zip(grid, grid[1:])):
            problems.append("ebno_db must be strictly increasing")
        for name in ("min_bit_errors", "max_bits", "frames", "N_ML"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.seed < 0:
            problems.append("seed must be non-negative")
        if problems:
            raise InvalidParameterError("; ".join(problems))
        object.__setattr__(self, "ebno_db", grid)


@dataclass
class SweepResult:
    kind: str
    rows: list
    metadata: dict

    @property
    def columns(self):
        return BER_COLUMNS if self.kind == "ber" else RMSE_COLUMNS

    def to_csv(self, record_timing=False):
        """CSV text; the ``seconds`` column stays empty unless ``record_timing``."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            out = []
            for col in self.columns:
                value = row[col]
                if col == "seconds" and not record_timing:
                    value = ""
                elif isinstance(value, float):
                    value = repr(float(value))
                out.append(value)
            writer.writerow(out)
        return buf.getvalue()


def derive_rng_stream(seed, ebno_index, frame_index, stream=0):
    """Independent PCG64 generator for one (Eb/N0 point, frame, purpose)."""
    ss = np.random.SeedSequence(seed, spawn_key=(ebno_index, frame_index, stream))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# Per-frame work
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=8)
def plan_for(grid, spec):
    """Spreading plan for a (grid, plan spec) pair, cached per process."""
    return make_plan(grid, spec.scheme, spec.family, spec.n_mult)


def _frame_bits(config, plan, ebno_index, frame_index):
    rng = derive_rng_stream(config.seed, ebno_index, frame_index, STREAM_BITS)
    return rng.integers(0, 2, size=config.grid.beta * plan.n_s, dtype=np.uint8)


def ber_frame(config, ebno_index, frame_index):
    """One communication frame; returns ``(bit_errors, bits)``."""
    plan = plan_for(config.grid, config.plan)
    grid = config.grid
    N0 = ebno_to_n0(config.ebno_db[ebno_index], grid.beta)
    bits = _frame_bits(config, plan, ebno_index, frame_index)
    frame = spread(plan, map_bits_qpsk(bits), grid)
    paths = sample_comm_channel(config.comm, grid,
                                derive_rng_stream(config.seed, ebno_index, frame_index, STREAM_CHANNEL),
                                config.doppler_rounding)
    H = build_dd_channel(paths)
    y = apply_channel(H, frame, N0, derive_rng_stream(config.seed, ebno_index, frame_index, STREAM_NOISE))
    try:
        G = mmse_matrix(H, plan, N0)
    except NumericFailure as exc:
        raise NumericFailure(str(exc), config.seed, ebno_index, frame_index) from exc
    result = detect(G, y.vec)
    return count_bit_errors(result.bits_hat, bits), bits.size


def sensing_n0(paths, ebno_db, beta):
    """Noise power referenced to the first target's received energy per bit."""
    gain2 = abs(paths.paths[0].gain) ** 2
    return gain2 * ebno_to_n0(ebno_db, beta), gain2


def rmse_frame(config, ebno_index, frame_index):
    """One sensing frame; returns per-target squared errors and frame power."""
    plan = plan_for(config.grid, config.plan)
    grid = config.grid
    bits = _frame_bits(config, plan, ebno_index, frame_index)
    frame = spread(plan, map_bits_qpsk(bits), grid)
    if config.redraw_clutter:
        ch_rng = derive_rng_stream(config.seed, ebno_index, frame_index, STREAM_CHANNEL)
    else:
        ch_rng = derive_rng_stream(config.seed, 0, 0, STREAM_CHANNEL)
    paths = sample_sensing_channel(config.sen, grid, ch_rng)
    N0, gain2 = sensing_n0(paths, config.ebno_db[ebno_index], grid.beta)

    y = apply_paths(paths, frame.grid)
    if N0 > 0:
        noise_rng = derive_rng_stream(config.seed, ebno_index, frame_index, STREAM_NOISE)
        y = y + complex_gaussian(noise_rng, y.shape, N0)
    y_vec = y.reshape(-1, order="F")
    _, refined = estimate_targets(frame, y_vec, config.sen.P_t, config.N_ML, grid,
                                  config.exclusion_radius)
    estimates = list(zip(refined.ranges, refined.velocities))
    pairs = match_to_truth(estimates, paths.truth)
    sq = [((e[0] - t[0]) ** 2, (e[1] - t[1]) ** 2) for e, t in pairs]
    return sq, frame.energy / grid.size, N0, gain2


# ---------------------------------------------------------------------------
# Frame scheduling
# ---------------------------------------------------------------------------

def _run_frames(fn, config, ebno_index, frame_indices, executor):
    if executor is None:
        return [fn(config, ebno_index, i) for i in frame_indices]
    n = len(frame_indices)
    return list(executor.map(fn, [config] * n, [ebno_index] * n, frame_indices))


class _Executor:
    def __init__(self, workers):
        self.workers = max(1, int(workers))
        self.pool = None

    def __enter__(self):
        if self.workers > 1:
            self.pool = ProcessPoolExecutor(self.workers)
        return self.pool

    def __exit__(self, *exc):
        if self.pool is not None:
            self.pool.shutdown(cancel_futures=True)
        return False


def _metadata(config, kind, plan):
    meta = {
        "kind": kind,
        "code_version": __version__,
        "config": _jsonable(dataclasses.asdict(config)),
        "plan_label": config.plan.label(config.grid),
        "n_s": plan.n_s,
        "decisions": {
            "qpsk_mapping": "gray: b0 -> sign(re), b1 -> sign(im)",
            "doppler_rounding": DopplerRounding(config.doppler_rounding).value,
            "ebno_convention": ("N0 = 1/(beta*EbN0)" if kind == "ber"
                                else "N0 = |h_target|^2/(beta*EbN0)"),
            "range_sampling_rate": "f_s = delta_f",
            "dft_normalisation": "unitary",
            "rng": "SeedSequence(seed, spawn_key=(ebno_index, frame_index, stream)) -> PCG64",
        },
    }
    if plan.seq_matrix is not None and plan.seq_matrix.meta:
        meta["sequence_meta"] = plan.seq_matrix.meta
    return meta


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if hasattr(obj, "value"):
        return obj.value
    return obj


def run_ber_sweep(config, workers=1, batch=None):
    """BER per Eb/N0 point; each point stops at ``min_bit_errors`` or ``max_bits``."""
    if config.comm is None:
        raise InvalidParameterError("BER sweep needs communication channel parameters")
    plan = plan_for(config.grid, config.plan)
    bits_per_frame = config.grid.beta * plan.n_s
    batch = batch or max(1, workers) * 4
    rows = []
    with _Executor(workers) as executor:
        for e_idx, ebno in enumerate(config.ebno_db):
            t0 = time.perf_counter()
            errors = bits = frames = 0
            while errors < config.min_bit_errors and bits < config.max_bits:
                need_bits = config.max_bits - bits
                n = min(batch, -(-need_bits // bits_per_frame))
                results = _run_frames(ber_frame, config, e_idx, list(range(frames, frames + n)), executor)
                for err, nb in results:
                    errors += err
                    bits += nb
                    frames += 1
                    if errors >= config.min_bit_errors or bits >= config.max_bits:
                        break
            rows.append({"ebno_db": float(ebno), "ber": errors / bits, "bits": bits,
                         "errors": errors, "frames": frames,
                         "seconds": round(time.perf_counter() - t0, 6)})
    return SweepResult("ber", rows, _metadata(config, "ber", plan))


def run_rmse_sweep(config, workers=1, batch=None):
    """Range/velocity RMSE per Eb/N0 point over ``frames`` frames, with CRB references."""
    if config.sen is None:
        raise InvalidParameterError("RMSE sweep needs sensing channel parameters")
    plan = plan_for(config.grid, config.plan)
    grid = config.grid
    batch = batch or max(1, workers) * 16
    rows = []
    with _Executor(workers) as executor:
        for e_idx, ebno in enumerate(config.ebno_db):
            t0 = time.perf_counter()
            sum_r = sum_v = 0.0
            count = 0
            p_sum = 0.0
            n0_gain = None
            for start in range(0, config.frames, batch):
                idx = list(range(start, min(config.frames, start + batch)))
                for sq, p_avg, N0, gain2 in _run_frames(rmse_frame, config, e_idx, idx, executor):
                    for dr, dv in sq:
                        sum_r += dr
                        sum_v += dv
                        count += 1
                    p_sum += p_avg
                    n0_gain = (N0, gain2)
            P_avg = p_sum / config.frames
            N0, gain2 = n0_gain
            if N0 > 0:
                crb_in = CrbInputs(N0, P_avg, gain2, grid)
                crb_r, crb_v = crb_range(crb_in), crb_velocity(crb_in)
            else:
                crb_r = crb_v = 0.0
            rows.append({"ebno_db": float(ebno), "rmse_range_m": math.sqrt(sum_r / count),
                         "rmse_velocity_mps": math.sqrt(sum_v / count),
                         "crb_range_m": crb_r, "crb_velocity_mps": crb_v,
                         "frames": config.frames,
                         "seconds": round(time.perf_counter() - t0, 6)})
    return SweepResult("rmse", rows, _metadata(config, "rmse", plan))


def write_atomic(path, text):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_result(result, csv_path, record_timing=False):
    """CSV plus a JSON sidecar (``<csv>.json``) holding metadata and timings."""
    write_atomic(csv_path, result.to_csv(record_timing))
    meta = dict(result.metadata)
    meta["seconds"] = [row["seconds"] for row in result.rows]
    write_atomic(csv_path + ".json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
