"""
Declarative experiment configuration.

A config is a YAML mapping with up to five sections::

    grid:   {M: 64, N: 64, delta_f: 120.0e3, f_c: 40.0e9}
    comm:   {P_com: 3, L_com: 3, kappa_com_db: 0, V_com: 200}
    sen:    {P_n: 0, kappa_sen_db: 10, targets: [{R: 500, V: 200, rcs: 1}]}
    sweep:  {ebno_db: "0:20:2", seed: 0, min_bit_errors: 600, max_bits: 1.0e7,
             frames: 4000, N_ML: 8, doppler_rounding: fractional,
             redraw_clutter: true, exclusion_radius: 0}
    runs:
      - {scheme: DelayCDMA, family: ZadoffChu, n_mult: full}
      - {scheme: PureOTFS, pair: ZadoffChu}

``ebno_db`` is a list of numbers (``inf`` allowed for a noiseless row) or a
string ``"start:stop:step"`` optionally followed by ``",inf"``. ``pair`` on a
PureOTFS run only tags the output name so a baseline can sit next to each
family; the baseline itself is computed once.

Overrides are ``key=value`` strings. The key is either ``section.key`` or a
bare key that is unique across sections (``M=16``, ``max_bits=2e5``). The
bare keys ``R``, ``V`` and ``rcs`` edit the first sensing target, and
``runs`` takes ``scheme[:family[:n_mult]]`` items separated by commas.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import yaml

from cdma_otfs.channel import (
    CommChannelParams,
    DopplerRounding,
    SenChannelParams,
    Target,
    db_to_linear,
    range_to_delay_index,
)
from cdma_otfs.errors import ConfigError, InvalidParameterError
from cdma_otfs.frame import GridConfig, Scheme, full_load
from cdma_otfs.montecarlo import ExperimentConfig, PlanSpec
from cdma_otfs.sequences import Family, family_capacity

_FAMILIES = ("Gold", "Hadamard", "ZadoffChu")

PRESETS = {
    "table3": {
        "grid": {"M": 64, "N": 64, "delta_f": 120e3, "f_c": 40e9},
        "comm": {"P_com": 3, "L_com": 3, "kappa_com_db": 0.0, "V_com": 200.0},
        "sweep": {"ebno_db": "0:20:2", "min_bit_errors": 600, "max_bits": 10_000_000,
                  "seed": 0, "doppler_rounding": "fractional"},
        "runs": [r for fam in _FAMILIES for r in (
            {"scheme": "DelayCDMA", "family": fam, "n_mult": "full"},
            {"scheme": "PureOTFS", "pair": fam})],
    },
    "table4": {
        "grid": {"M": 64, "N": 64, "delta_f": 120e3, "f_c": 40e9},
        "sen": {"P_n": 0, "kappa_sen_db": 10.0, "targets": [{"R": 500.0, "V": 200.0, "rcs": 1.0}]},
        "sweep": {"ebno_db": "-20:10:2,inf", "frames": 4000, "N_ML": 8, "seed": 0,
                  "redraw_clutter": True, "exclusion_radius": 0},
        "runs": [{"scheme": "PureOTFS"}] + [
            {"scheme": s, "family": fam, "n_mult": "full"}
            for s in ("DelayCDMA", "DopplerCDMA", "DelayDopplerCDMA") for fam in _FAMILIES],
    },
}
PRESETS["table4_clutter"] = copy.deepcopy(PRESETS["table4"])
PRESETS["table4_clutter"]["sen"] = {"P_n": 7, "kappa_sen_db": 10.0,
                                    "targets": [{"R": 200.0, "V": 110.0, "rcs": 1.0}]}

# key -> (section, parser)
_SCHEMA = {
    "grid": {"M": "int", "N": "int", "delta_f": "float", "f_c": "float"},
    "comm": {"P_com": "int", "L_com": "int", "kappa_com_db": "float", "V_com": "float"},
    "sen": {"P_n": "int", "kappa_sen_db": "float", "targets": "targets"},
    "sweep": {"ebno_db": "ebno", "min_bit_errors": "int", "max_bits": "int", "frames": "int",
              "N_ML": "int", "seed": "int", "doppler_rounding": "str",
              "redraw_clutter": "bool", "exclusion_radius": "int"},
}
_TARGET_KEYS = ("R", "V", "rcs")
_BARE = {key: section for section, keys in _SCHEMA.items() for key in keys}


@dataclass(frozen=True)
class Run:
    name: str
    config: ExperimentConfig


def _parse_number(value, kind, problems, where):
    if isinstance(value, bool):
        problems.append(f"{where}: expected {kind}, got {value!r}")
        return None
    try:
        x = float(value)
    except (TypeError, ValueError):
        problems.append(f"{where}: expected {kind}, got {value!r}")
        return None
    if kind == "int":
        if not math.isfinite(x) or x != int(x):
            problems.append(f"{where}: expected an integer, got {value!r}")
            return None
        return int(x)
    return x


def _parse_bool(value, problems, where):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    problems.append(f"{where}: expected a boolean, got {value!r}")
    return None


def parse_ebno(spec):
    """Eb/N0 grid in dB from a list or a ``start:stop:step[,inf]`` string."""
    if isinstance(spec, (list, tuple)):
        return tuple(float(v) for v in spec)
    parts = [p.strip() for p in str(spec).split(",") if p.strip()]
    values = []
    for part in parts:
        if ":" in part:
            start, stop, step = (float(v) for v in part.split(":"))
            if step <= 0:
                raise ValueError(f"step must be positive in {part!r}")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            values.extend(float(v) for v in np.round(start + step * np.arange(n), 10))
        else:
            values.append(float(part))
    return tuple(values)


def _parse_targets(value, problems, where):
    if not isinstance(value, (list, tuple)) or not value:
        problems.append(f"{where}: expected a non-empty list of targets")
        return None
    targets = []
    for i, item in enumerate(value):
        if not isinstance(item, dict):
            problems.append(f"{where}[{i}]: expected a mapping with R, V, rcs")
            continue
        extra = set(item) - set(_TARGET_KEYS)
        if extra:
            problems.append(f"{where}[{i}]: unknown field(s) {sorted(extra)}")
        vals = {}
        for key, default in (("R", None), ("V", 0.0), ("rcs", 1.0)):
            if key not in item:
                if default is None:
                    problems.append(f"{where}[{i}].R: missing")
                vals[key] = default
            else:
                vals[key] = _parse_number(item[key], "float", problems, f"{where}[{i}].{key}")
        if None not in vals.values():
            if vals["R"] <= 0:
                problems.append(f"{where}[{i}].R: must be positive, got {vals['R']}")
            elif vals["rcs"] <= 0:
                problems.append(f"{where}[{i}].rcs: must be positive, got {vals['rcs']}")
            else:
                targets.append(Target(vals["R"], vals["V"], vals["rcs"]))
    return tuple(targets)


def _parse_runs(raw, problems):
    if isinstance(raw, str):
        items = []
        for token in (t.strip() for t in raw.split(",") if t.strip()):
            fields = token.split(":")
            item = {"scheme": fields[0]}
            if len(fields) > 1 and fields[1]:
                item["family"] = fields[1]
            if len(fields) > 2:
                item["n_mult"] = fields[2]
            items.append(item)
        raw = items
    if not isinstance(raw, (list, tuple)) or not raw:
        problems.append("runs: expected a non-empty list")
        return []
    specs = []
    for i, item in enumerate(raw):
        where = f"runs[{i}]"
        if not isinstance(item, dict):
            problems.append(f"{where}: expected a mapping")
            continue
        extra = set(item) - {"scheme", "family", "n_mult", "pair"}
        if extra:
            problems.append(f"{where}: unknown field(s) {sorted(extra)}")
        try:
            scheme = Scheme.parse(item.get("scheme", ""))
        except InvalidParameterError as exc:
            problems.append(f"{where}.scheme: {exc}")
            continue
        family = pair = None
        for key in ("family", "pair"):
            if item.get(key) is None:
                continue
            try:
                parsed = Family.parse(item[key])
            except InvalidParameterError as exc:
                problems.append(f"{where}.{key}: {exc}")
                continue
            if key == "family":
                family = parsed
            else:
                pair = parsed
        n_mult = item.get("n_mult", "full")
        if n_mult in (None, "full"):
            n_mult = None
        else:
            n_mult = _parse_number(n_mult, "int", problems, f"{where}.n_mult")
            if n_mult is None:
                continue
        if scheme is not Scheme.PURE_OTFS and family is None:
            problems.append(f"{where}.family: {scheme.value} needs a sequence family")
            continue
        if scheme is Scheme.PURE_OTFS:
            pair = pair or family
            family = None
        specs.append((where, PlanSpec(scheme, family, n_mult), pair))
    return specs


def merge(base, other):
    """Recursive dict merge; lists and scalars in ``other`` replace those in ``base``."""
    out = copy.deepcopy(base)
    for key, value in other.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_overrides(raw, overrides):
    """Apply ``key=value`` strings to a raw config mapping.

    Returns ``(raw, problems)``; malformed or unknown keys are reported, not raised.
    """
    raw = copy.deepcopy(raw)
    problems = []
    for item in overrides:
        if "=" not in item:
            problems.append(f"override {item!r}: expected key=value")
            continue
        key, text = (s.strip() for s in item.split("=", 1))
        if key == "runs":
            raw["runs"] = text
            continue
        value = text
        if key.endswith("targets"):
            # YAML would read "-10:10:5" as a base-60 integer, so only the
            # structured field goes through the parser
            try:
                value = yaml.safe_load(text)
            except yaml.YAMLError:
                pass
        if "." in key:
            section, name = key.split(".", 1)
        elif key in _TARGET_KEYS:
            section, name = "sen", key
        else:
            section, name = _BARE.get(key), key
        if section == "sen" and name in _TARGET_KEYS:
            sen = raw.setdefault("sen", {})
            targets = sen.get("targets") or [{}]
            targets = [dict(t) for t in targets]
            targets[0][name] = value
            sen["targets"] = targets
            continue
        if section not in _SCHEMA or name not in _SCHEMA[section]:
            problems.append(f"override {key!r}: unknown key")
            continue
        raw.setdefault(section, {})[name] = value
    return raw, problems


def load_raw(path=None, preset=None):
    """Raw mapping from a preset, a YAML file, or both (file wins)."""
    raw = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError([f"unknown preset {preset!r}; choose from {sorted(PRESETS)}"])
        raw = copy.deepcopy(PRESETS[preset])
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
        except yaml.YAMLError as exc:
            raise ConfigError([f"config {path} is not valid YAML: {exc}"]) from exc
        if not isinstance(loaded, dict):
            raise ConfigError([f"config {path}: top level must be a mapping"])
        raw = merge(raw, loaded)
    return raw


def resolve(raw, kind):
    """Validate ``raw`` and build one :class:`Run` per entry in ``runs``.

    ``kind`` is ``"ber"``, ``"rmse"`` or ``None`` (no channel section required).
    Every problem is collected before a single :class:`ConfigError` is raised.
    """
    problems = []
    known = set(_SCHEMA) | {"runs"}
    for section in sorted(set(raw) - known):
        problems.append(f"{section}: unknown section")

    values = {}
    for section, keys in _SCHEMA.items():
        body = raw.get(section, {}) or {}
        if not isinstance(body, dict):
            problems.append(f"{section}: expected a mapping")
            continue
        for key in sorted(set(body) - set(keys)):
            problems.append(f"{section}.{key}: unknown field")
        for key, kind_ in keys.items():
            if key not in body:
                continue
            where = f"{section}.{key}"
            v = body[key]
            if kind_ in ("int", "float"):
                parsed = _parse_number(v, kind_, problems, where)
            elif kind_ == "bool":
                parsed = _parse_bool(v, problems, where)
            elif kind_ == "targets":
                parsed = _parse_targets(v, problems, where)
            elif kind_ == "ebno":
                try:
                    parsed = parse_ebno(v)
                except (TypeError, ValueError) as exc:
                    problems.append(f"{where}: cannot parse {v!r} ({exc})")
                    parsed = None
            else:
                parsed = str(v)
            if parsed is not None:
                values[(section, key)] = parsed

    def get(section, key, default):
        return values.get((section, key), default)

    try:
        grid = GridConfig(M=get("grid", "M", 64), N=get("grid", "N", 64),
                          delta_f=get("grid", "delta_f", 120e3), f_c=get("grid", "f_c", 40e9))
    except InvalidParameterError as exc:
        problems.extend(f"grid: {p}" for p in str(exc).split("; "))
        grid = None

    comm = sen = None
    if "comm" in raw:
        try:
            comm = CommChannelParams(
                P_com=get("comm", "P_com", 3), L_com=get("comm", "L_com", 3),
                kappa_com=float(db_to_linear(get("comm", "kappa_com_db", 0.0))),
                V_com=get("comm", "V_com", 200.0))
        except InvalidParameterError as exc:
            problems.append(f"comm: {exc}")
    elif kind == "ber":
        problems.append("comm: section required for a BER sweep")
    if "sen" in raw:
        targets = get("sen", "targets", None)
        if targets is None and "targets" not in (raw.get("sen") or {}):
            targets = (Target(500.0, 200.0, 1.0),)
        if targets:
            try:
                sen = SenChannelParams(targets, P_n=get("sen", "P_n", 0),
                                       kappa_sen=float(db_to_linear(get("sen", "kappa_sen_db", 10.0))))
            except InvalidParameterError as exc:
                problems.append(f"sen: {exc}")
            if sen is not None and grid is not None:
                for i, t in enumerate(sen.targets):
                    tau = range_to_delay_index(t.R, grid)
                    if tau >= grid.M:
                        problems.append(f"sen.targets[{i}].R: {t.R} m maps to delay index "
                                        f"{tau:.2f}, outside [0, {grid.M})")
    elif kind == "rmse":
        problems.append("sen: section required for an RMSE sweep")

    rounding = get("sweep", "doppler_rounding", "fractional")
    try:
        rounding = DopplerRounding(rounding)
    except ValueError:
        problems.append(f"sweep.doppler_rounding: expected 'literal' or 'fractional', got {rounding!r}")
        rounding = DopplerRounding.FRACTIONAL

    specs = _parse_runs(raw.get("runs", [{"scheme": "PureOTFS"}]), problems)
    if grid is not None:
        for where, spec, _ in specs:
            if spec.scheme is Scheme.PURE_OTFS:
                continue
            length = full_load(spec.scheme, grid)
            try:
                capacity = family_capacity(spec.family, length)
            except InvalidParameterError as exc:
                problems.append(f"{where}: {exc}")
                continue
            limit = min(capacity, length)
            if spec.n_mult is not None and not 1 <= spec.n_mult <= limit:
                problems.append(f"{where}.n_mult: {spec.n_mult} outside [1, {limit}] for "
                                f"{spec.family.value} at length {length}")

    sweep_kwargs = dict(
        ebno_db=get("sweep", "ebno_db", (0.0,)),
        min_bit_errors=get("sweep", "min_bit_errors", 600),
        max_bits=get("sweep", "max_bits", 10_000_000),
        frames=get("sweep", "frames", 4000),
        N_ML=get("sweep", "N_ML", 8),
        seed=get("sweep", "seed", 0),
        doppler_rounding=rounding,
        redraw_clutter=get("sweep", "redraw_clutter", True),
        exclusion_radius=get("sweep", "exclusion_radius", 0),
    )
    if sweep_kwargs["exclusion_radius"] < 0:
        problems.append("sweep.exclusion_radius: must be non-negative")
    try:
        ExperimentConfig(**sweep_kwargs)
    except InvalidParameterError as exc:
        problems.extend(f"sweep: {p}" for p in str(exc).split("; "))

    if problems:
        raise ConfigError(problems)

    runs = []
    for _, spec, pair in specs:
        name = spec.label(grid)
        if pair is not None:
            name = f"{spec.scheme.value}_{pair.value}-pair_{full_load(spec.scheme, grid)}"
        runs.append(Run(name, ExperimentConfig(grid=grid, plan=spec, comm=comm, sen=sen,
                                               **sweep_kwargs)))
    names = [r.name for r in runs]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError([f"runs: duplicate run(s) {dupes}"])
    return runs


def load_runs(kind, path=None, preset=None, overrides=(), seed=None):
    """Preset/file/overrides to validated runs; raises :class:`ConfigError`."""
    raw = load_raw(path, preset)
    raw, problems = apply_overrides(raw, overrides)
    if seed is not None:
        raw.setdefault("sweep", {})["seed"] = seed
    try:
        runs = resolve(raw, kind)
    except ConfigError as exc:
        raise ConfigError(problems + exc.problems) from None
    if problems:
        raise ConfigError(problems)
    return runs
