"""Experiment configuration: one JSON document per run, schema-checked.

The document has seven optional sections (data, encoder, mae, cl, distill,
augment, eval) plus a global seed and output directory. Unknown keys are
rejected, and every reported problem carries the line of the offending key
so a hand-edited config can be fixed without guesswork.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple, Union, get_args, get_origin, get_type_hints

from .augment import AugmentConfig
from .cl import ClConfig
from .distill import DistillConfig
from .encoder import SIZE_TABLE, EncoderConfig
from .errors import ConfigError
from .mae import MaeConfig

PROBE_TARGETS = ("hr", "sdnn", "rmssd", "trait")

_SECTIONS = ("data", "encoder", "mae", "cl", "distill", "augment", "eval")
_TOP_KEYS = ("seed", "out_dir") + _SECTIONS
_ENCODER_DIMS = ("token_dim", "n_layers", "n_heads", "mlp_hidden")


@dataclass(frozen=True)
class DataConfig:
    # `dir` resolves relative to the config file's directory, so stage
    # commands with different run directories still share one corpus;
    # without a config file it falls back to the run directory.
    dir: str = "data"
    n_participants: int = 20
    segments_per_participant: int = 8
    seed: int = 0

    def __post_init__(self):
        if not self.dir:
            raise ConfigError("dir must be a non-empty path")
        if self.n_participants < 5:
            raise ConfigError(
                f"n_participants must be at least 5 for the 80/20 split, "
                f"got {self.n_participants}"
            )
        if self.segments_per_participant < 4:
            raise ConfigError(
                f"segments_per_participant must be at least 4, "
                f"got {self.segments_per_participant}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class EvalConfig:
    pool_participants: Optional[int] = None  # None: one pool of every test pair
    n_pools: int = 20
    probe_targets: tuple = ("hr",)
    label_fractions: tuple = (0.001, 0.01, 0.1, 1.0)
    granularity: str = "segment"

    def __post_init__(self):
        if self.pool_participants is not None and self.pool_participants < 1:
            raise ConfigError(
                f"pool_participants must be positive, got {self.pool_participants}"
            )
        if self.n_pools < 1:
            raise ConfigError(f"n_pools must be positive, got {self.n_pools}")
        for t in self.probe_targets:
            if t not in PROBE_TARGETS:
                raise ConfigError(
                    f"probe_targets entry {t!r} not in {PROBE_TARGETS}"
                )
        for f in self.label_fractions:
            if not isinstance(f, (int, float)) or not 0.0 < float(f) <= 1.0:
                raise ConfigError(
                    f"label_fractions entries must be in (0, 1], got {f!r}"
                )
        if self.granularity not in ("segment", "participant"):
            raise ConfigError(
                f"granularity must be 'segment' or 'participant', "
                f"got {self.granularity!r}"
            )


def _default_encoder():
    return EncoderConfig.from_size("XS", 4)


def _default_student():
    return EncoderConfig.from_size("XS", 3)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/run"
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=_default_encoder)
    student: EncoderConfig = field(default_factory=_default_student)
    mae: MaeConfig = field(default_factory=MaeConfig)
    cl: ClConfig = field(default_factory=ClConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    teacher_ckpt: Optional[str] = None
    data_base: Optional[str] = None  # directory of the source document, if any

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if not self.out_dir:
            raise ConfigError("out_dir must be a non-empty path")

    def data_dir(self) -> str:
        d = self.data.dir
        if os.path.isabs(d):
            return d
        return os.path.join(self.data_base or self.out_dir, d)

    def resolved(self) -> dict:
        """Full dict echo: every field populated, reparseable by parse_config."""
        cl = dataclasses.asdict(self.cl)
        cl.pop("augment")
        distill = dataclasses.asdict(self.distill)
        distill.pop("augment")
        distill["student"] = dataclasses.asdict(self.student)
        distill["teacher_ckpt"] = self.teacher_ckpt
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "data": dataclasses.asdict(self.data),
            "encoder": dataclasses.asdict(self.encoder),
            "mae": dataclasses.asdict(self.mae),
            "cl": cl,
            "distill": distill,
            "augment": dataclasses.asdict(self.augment),
            "eval": dataclasses.asdict(self.eval),
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _key_lines(text: str) -> Dict[tuple, int]:
    """Map every object key's path, e.g. ('distill', 'lam'), to its 1-based line.

    Only called on documents json.loads already accepted, so the scan can
    assume well-formed input; array elements contribute integer components.
    """
    out: Dict[tuple, int] = {}
    frames: List[list] = []  # ["obj", last_key] | ["arr", index]
    i, line, n = 0, 1, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            i += 1
        elif ch == '"':
            start_line = line
            j = i + 1
            parts = []
            while j < n:
                c = text[j]
                if c == "\\":
                    parts.append(text[j : j + 2])
                    j += 2
                elif c == '"':
                    break
                else:
                    parts.append(c)
                    j += 1
            k = j + 1
            while k < n and text[k] in " \t\r\n":
                k += 1
            if k < n and text[k] == ":" and frames and frames[-1][0] == "obj":
                frames[-1][1] = "".join(parts)
                path = tuple(f[1] for f in frames)
                out.setdefault(path, start_line)
            i = j + 1
        elif ch == "{":
            frames.append(["obj", None])
            i += 1
        elif ch == "[":
            frames.append(["arr", 0])
            i += 1
        elif ch in "}]":
            if frames:
                frames.pop()
            i += 1
        elif ch == ",":
            if frames and frames[-1][0] == "arr":
                frames[-1][1] += 1
            i += 1
        else:
            i += 1
    return out


class _Source:
    def __init__(self, name: str, lines: Dict[tuple, int]):
        self.name = name
        self.lines = lines

    def err(self, msg: str, *path) -> str:
        p = tuple(path)
        while p and p not in self.lines:
            p = p[:-1]
        line = self.lines.get(p)
        loc = f"{self.name}:{line}" if line else self.name
        return f"{loc}: {msg}"


def _type_problem(hint, value) -> Optional[str]:
    if hint is None:
        return None
    origin = get_origin(hint)
    if origin is Union:
        if value is None and type(None) in get_args(hint):
            return None
        rest = [a for a in get_args(hint) if a is not type(None)]
        return _type_problem(rest[0], value) if len(rest) == 1 else None
    if hint is tuple or origin is tuple:
        return None if isinstance(value, tuple) else "must be a list"
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return "must be a number"
        return None
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            return "must be an integer"
        return None
    if hint is bool:
        return None if isinstance(value, bool) else "must be true or false"
    if hint is str:
        return None if isinstance(value, str) else "must be a string"
    return None


def _blame_path(section: str, raw: dict, msg: str) -> tuple:
    """Best line for a __post_init__ rejection: the present key the message names."""
    for key in raw:
        if key in msg:
            return (section, key)
    return (section,)


def _build_section(cls, section: str, raw: dict, src: _Source, errors: List[str],
                   exclude: tuple = (), injected: Optional[dict] = None):
    hints = get_type_hints(cls)
    allowed = {f.name for f in dataclasses.fields(cls)} - set(exclude)
    kwargs = {}
    bad = False
    for key, value in raw.items():
        if key in exclude:
            errors.append(src.err(
                f"{section}.{key} is configured by the top-level 'augment' section",
                section, key,
            ))
            bad = True
        elif key not in allowed:
            errors.append(src.err(
                f"unknown key {key!r} in the {section} section", section, key
            ))
            bad = True
        else:
            if isinstance(value, list):
                value = tuple(value)
            problem = _type_problem(hints.get(key), value)
            if problem:
                errors.append(src.err(
                    f"{section}.{key} {problem}, got {value!r}", section, key
                ))
                bad = True
            else:
                kwargs[key] = value
    if bad:
        return None
    try:
        return cls(**kwargs, **(injected or {}))
    except ConfigError as e:
        errors.append(src.err(str(e), *_blame_path(section, raw, str(e))))
        return None


def _build_encoder(raw: dict, path: tuple, src: _Source, errors: List[str],
                   default_channels: int):
    hints = get_type_hints(EncoderConfig)
    names = {f.name for f in dataclasses.fields(EncoderConfig)}
    section = ".".join(path)
    kwargs = {}
    bad = False
    for key, value in raw.items():
        if key not in names:
            errors.append(src.err(
                f"unknown key {key!r} in the {section} section", *path, key
            ))
            bad = True
            continue
        problem = _type_problem(hints.get(key), value)
        if problem:
            errors.append(src.err(
                f"{section}.{key} {problem}, got {value!r}", *path, key
            ))
            bad = True
            continue
        kwargs[key] = value
    if bad:
        return None
    tag = kwargs.pop("size_tag", None)
    channels = kwargs.pop("input_channels", default_channels)
    if tag is None and not any(d in kwargs for d in _ENCODER_DIMS):
        tag = "XS"
    if tag is not None and tag != "custom":
        table = dict(zip(("token_dim", "n_layers", "mlp_hidden", "n_heads"),
                         SIZE_TABLE.get(tag, ())))
        # a dim equal to the table entry is a harmless echo, not a conflict
        clash = [d for d in _ENCODER_DIMS
                 if d in kwargs and kwargs[d] != table.get(d)]
        if clash and table:
            for d in clash:
                errors.append(src.err(
                    f"{section}.{d} conflicts with size_tag {tag!r}; use one or the other",
                    *path, d,
                ))
            return None
        try:
            return EncoderConfig.from_size(tag, channels, **kwargs)
        except ConfigError as e:
            errors.append(src.err(str(e), *path, "size_tag"))
            return None
    missing = [d for d in _ENCODER_DIMS if d not in kwargs]
    if missing:
        errors.append(src.err(
            f"the {section} section needs {', '.join(missing)} (or a size_tag)",
            *path,
        ))
        return None
    try:
        return EncoderConfig(input_channels=channels, **kwargs)
    except ConfigError as e:
        blame = next((k for k in raw if k in str(e)), None)
        errors.append(src.err(str(e), *(path + (blame,) if blame else path)))
        return None


def parse_config(text: str, name: str = "<config>",
                 command: Optional[str] = None,
                 base_dir: Optional[str] = None) -> Tuple[Optional[ExperimentConfig], List[str]]:
    """Parse and validate a config document; returns (config, errors).

    Exactly one of the pair is meaningful: a config with no errors, or
    None with at least one error string. `command` adds per-subcommand
    requirements (currently: 'distill' demands a teacher checkpoint).
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        return None, [f"{name}:{e.lineno}: invalid JSON: {e.msg}"]
    if not isinstance(doc, dict):
        return None, [f"{name}:1: the config must be a JSON object"]

    src = _Source(name, _key_lines(text))
    errors: List[str] = []
    for key in doc:
        if key not in _TOP_KEYS:
            errors.append(src.err(f"unknown key {key!r} at the top level", key))

    def section(sec: str) -> dict:
        value = doc.get(sec, {})
        if not isinstance(value, dict):
            errors.append(src.err(f"the {sec} section must be an object", sec))
            return {}
        return value

    seed = doc.get("seed", 0)
    if _type_problem(int, seed):
        errors.append(src.err(f"seed must be an integer, got {seed!r}", "seed"))
        seed = 0
    out_dir = doc.get("out_dir", "runs/run")
    if _type_problem(str, out_dir):
        errors.append(src.err(f"out_dir must be a string, got {out_dir!r}", "out_dir"))
        out_dir = "runs/run"

    augment = _build_section(AugmentConfig, "augment", section("augment"), src, errors)
    inject = {"augment": augment if augment is not None else AugmentConfig()}
    data = _build_section(DataConfig, "data", section("data"), src, errors)
    mae = _build_section(MaeConfig, "mae", section("mae"), src, errors)
    cl = _build_section(ClConfig, "cl", section("cl"), src, errors,
                        exclude=("augment",), injected=inject)
    eval_cfg = _build_section(EvalConfig, "eval", section("eval"), src, errors)

    encoder = _build_encoder(section("encoder"), ("encoder",), src, errors, 4)

    distill_raw = dict(section("distill"))
    student_raw = distill_raw.pop("student", None)
    teacher_ckpt = distill_raw.pop("teacher_ckpt", None)
    if teacher_ckpt is not None and not isinstance(teacher_ckpt, str):
        errors.append(src.err(
            f"distill.teacher_ckpt must be a string, got {teacher_ckpt!r}",
            "distill", "teacher_ckpt",
        ))
        teacher_ckpt = None
    distill = _build_section(DistillConfig, "distill", distill_raw, src, errors,
                             exclude=("augment",), injected=inject)
    if student_raw is not None:
        if not isinstance(student_raw, dict):
            errors.append(src.err("distill.student must be an object", "distill", "student"))
            student = None
        else:
            student = _build_encoder(
                student_raw, ("distill", "student"), src, errors, 3
            )
    else:
        student = replace(encoder, input_channels=3) if encoder is not None else None

    if errors:
        return None, errors
    try:
        cfg = ExperimentConfig(
            seed=seed, out_dir=out_dir, data=data, encoder=encoder,
            student=student, mae=mae, cl=cl, distill=distill,
            augment=inject["augment"], eval=eval_cfg, teacher_ckpt=teacher_ckpt,
            data_base=base_dir,
        )
    except ConfigError as e:
        return None, [src.err(str(e))]

    if command == "distill" and cfg.teacher_ckpt is None:
        needs = cfg.distill.freeze_teacher or cfg.distill.teacher_init == "pretrained"
        if needs:
            return None, [src.err(
                "distill.teacher_ckpt is required when the teacher is frozen "
                "or starts from pretrained weights",
                "distill",
            )]
    return cfg, []


def _read(path) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {os.fspath(path)}: {e}") from e


def validate_config(path, command: Optional[str] = None) -> List[str]:
    """All problems found in the document at `path`; empty means ok."""
    try:
        text = _read(path)
    except ConfigError as e:
        return [str(e)]
    _, errors = parse_config(
        text, name=os.fspath(path), command=command,
        base_dir=os.path.dirname(os.path.abspath(os.fspath(path))),
    )
    return errors


def load_config(path, command: Optional[str] = None) -> ExperimentConfig:
    cfg, errors = parse_config(
        _read(path), name=os.fspath(path), command=command,
        base_dir=os.path.dirname(os.path.abspath(os.fspath(path))),
    )
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


def save_resolved(cfg: ExperimentConfig, run_dir) -> str:
    """Write the fully resolved config echo into the run directory."""
    path = os.path.join(os.fspath(run_dir), "config.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.resolved(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
