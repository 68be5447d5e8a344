"""Experiment configuration files and the ``run`` pipeline.

A configuration is a YAML document::

    seed: 42                      # base seed; every other seed derives from it
    jobs: 1                       # worker processes for repeats
    input:
      synth: {seed: 42}           # or  csv: data.csv  plus an optional schema: block
    recipes:
      - name: plain
        spec: id
      - name: under03
        spec: under(0.3)
        K: 20
    protocols: [longitudinal, loocv, split(180)]
    repeats: 15
    outputs: results
    emit: [report_json, sweep_csv, roc_csv, aggregation_curve_csv]

Parse errors carry the byte offset of the offending token in the file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import re
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .data import EncodeOptions, Panel, SchemaConfig, ingest_csv
from .errors import ConfigParse, DataError, RareventError
from .logistic import FitControl
from .resampling import SamplerSpec, SpecOrderWarning, parse_spec
from .synth import SynthConfig, simulate
from .validation import (
    PROTOCOLS,
    Recipe,
    SweepTable,
    aggregation_curve,
    derive_seed,
    failed_row,
    repeat_eval,
    summarize_runs,
)

log = logging.getLogger(__name__)

EMIT_KINDS = ("report_json", "sweep_csv", "roc_csv", "aggregation_curve_csv")
_NAME = re.compile(r"[A-Za-z0-9_.-]+\Z")
_PROTOCOL = re.compile(r"(longitudinal|loocv|split)(?:\((\d+)\))?\Z")
_TOP_KEYS = {"seed", "jobs", "input", "recipes", "protocols", "repeats", "outputs", "emit"}
_RECIPE_KEYS = {"name", "spec", "K", "seed", "control", "encoding", "distance_scaling"}
# salt separating recipe seeds from other derived streams
_RECIPE_STREAM = 10


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    boundary: int | None = None

    def __str__(self) -> str:
        return self.name if self.boundary is None else f"{self.name}({self.boundary})"

    @property
    def slug(self) -> str:
        return self.name if self.boundary is None else f"{self.name}{self.boundary}"

    @classmethod
    def parse(cls, text: str) -> ProtocolSpec:
        m = _PROTOCOL.match(text.strip())
        if not m or (m.group(2) is not None and m.group(1) != "split"):
            raise ValueError(f"unknown protocol {text!r}; expected one of {PROTOCOLS} or split(<time>)")
        return cls(m.group(1), None if m.group(2) is None else int(m.group(2)))


@dataclass(frozen=True)
class RecipeConfig:
    name: str
    spec: SamplerSpec
    K: int = 1
    seed: int | None = None
    control: FitControl = FitControl()
    encoding: EncodeOptions = EncodeOptions()
    distance_scaling: bool = False

    def semantic(self) -> dict:
        return {"name": self.name, "spec": str(self.spec), "K": self.K, "seed": self.seed,
                "control": asdict(self.control), "encoding": asdict(self.encoding),
                "distance_scaling": self.distance_scaling}


@dataclass(frozen=True)
class ExperimentConfig:
    recipes: tuple[RecipeConfig, ...]
    protocols: tuple[ProtocolSpec, ...]
    csv: Path | None = None
    schema: SchemaConfig = SchemaConfig()
    synth: SynthConfig | None = None
    repeats: int = 1
    outputs: str = "out"
    emit: tuple[str, ...] = EMIT_KINDS
    seed: int = 0
    jobs: int = 1
    warnings: tuple[str, ...] = ()

    def recipe(self, i: int) -> Recipe:
        rc = self.recipes[i]
        seed = rc.seed if rc.seed is not None else derive_seed(self.seed, _RECIPE_STREAM, i)
        return Recipe(rc.spec, rc.K, seed, rc.control, rc.encoding, rc.distance_scaling, rc.name)

    def semantic(self) -> dict:
        """Every field that can change an artifact; output location and job
        count are excluded."""
        if self.csv is not None:
            source = {"csv": str(self.csv), "schema": asdict(self.schema)}
        else:
            source = {"synth": _jsonable(asdict(self.synth))}
        return {"input": source, "recipes": [r.semantic() for r in self.recipes],
                "protocols": [str(p) for p in self.protocols], "repeats": self.repeats,
                "emit": sorted(self.emit), "seed": self.seed}

    def config_hash(self) -> str:
        text = json.dumps(self.semantic(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_overrides(self, seed: int | None = None, jobs: int | None = None,
                       outputs: str | None = None) -> ExperimentConfig:
        kw = {}
        if seed is not None:
            kw["seed"] = seed
        if jobs is not None:
            kw["jobs"] = jobs
        if outputs is not None:
            kw["outputs"] = outputs
        return replace(self, **kw)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


# -- parsing -----------------------------------------------------------------

class _Doc:
    """A parsed YAML document that can report byte offsets for any path."""

    def __init__(self, text: str):
        self.text = text
        try:
            loader = yaml.SafeLoader(text)
            try:
                node = loader.get_single_node()
                self.data = loader.construct_document(node) if node is not None else None
            finally:
                loader.dispose()
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark or exc.context_mark
            raise ConfigParse(self._bytes(mark.index if mark else 0),
                              f"YAML syntax: {exc.problem or exc.context}") from None
        except yaml.YAMLError as exc:
            raise ConfigParse(0, f"YAML syntax: {exc}") from None
        self.nodes: dict[tuple, yaml.Node] = {}
        if node is not None:
            self._index(node, ())

    def _bytes(self, char_index: int) -> int:
        return len(self.text[:char_index].encode("utf-8"))

    def _index(self, node, path):
        self.nodes[path] = node
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                self.nodes[path + (k.value, "<key>")] = k
                self._index(v, path + (k.value,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._index(v, path + (i,))

    def offset(self, path) -> int:
        path = tuple(path)
        while path and path not in self.nodes:
            path = path[:-1]
        node = self.nodes.get(path)
        return self._bytes(node.start_mark.index) if node is not None else 0

    def error(self, path, reason: str) -> ConfigParse:
        return ConfigParse(self.offset(path), reason)

    def value_offset(self, path) -> int:
        """Offset of the first character of a scalar's content."""
        node = self.nodes[tuple(path)]
        quote = 1 if getattr(node, "style", None) in ("'", '"') else 0
        return self._bytes(node.start_mark.index) + quote


def _mapping(doc, path, v, allowed=None) -> dict:
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise doc.error(path, "expected a mapping")
    if allowed is not None:
        for k in v:
            if k not in allowed:
                raise doc.error(tuple(path) + (k, "<key>"),
                                f"unknown key {k!r}; expected one of {sorted(allowed)}")
    return v


def _int(doc, path, v, lo: int) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise doc.error(path, f"expected an integer, found {v!r}")
    if v < lo:
        raise doc.error(path, f"must be >= {lo}, found {v}")
    return v


def _str(doc, path, v) -> str:
    if not isinstance(v, str):
        raise doc.error(path, f"expected a string, found {v!r}")
    return v


def _dataclass_from(doc, path, cls, v):
    v = _mapping(doc, path, v, {f.name for f in fields(cls)})
    try:
        if cls is SchemaConfig and v.get("covariates") is not None:
            v = {**v, "covariates": tuple(v["covariates"])}
        if cls is SynthConfig:
            return SynthConfig.from_dict(v)
        return cls(**v)
    except (TypeError, ValueError) as exc:
        raise doc.error(path, f"invalid {cls.__name__}: {exc}") from None


def _recipe(doc, i, v) -> RecipeConfig:
    path = ("recipes", i)
    v = _mapping(doc, path, v, _RECIPE_KEYS)
    if "spec" not in v:
        raise doc.error(path, "recipe needs a 'spec'")
    text = _str(doc, path + ("spec",), v["spec"])
    try:
        spec = parse_spec(text)
    except ConfigParse as exc:
        raise ConfigParse(doc.value_offset(path + ("spec",)) + exc.position, exc.reason) from None
    name = _str(doc, path + ("name",), v.get("name", f"recipe{i + 1}"))
    if not _NAME.match(name):
        raise doc.error(path + ("name",), f"recipe name {name!r} must match [A-Za-z0-9_.-]+")
    K = _int(doc, path + ("K",), v.get("K", 1), 1)
    seed = v.get("seed")
    if seed is not None:
        seed = _int(doc, path + ("seed",), seed, 0)
    scaling = v.get("distance_scaling", False)
    if not isinstance(scaling, bool):
        raise doc.error(path + ("distance_scaling",), "expected true or false")
    return RecipeConfig(name, spec, K, seed,
                        _dataclass_from(doc, path + ("control",), FitControl, v.get("control")),
                        _dataclass_from(doc, path + ("encoding",), EncodeOptions, v.get("encoding")),
                        scaling)


def parse_config(text: str, base_dir: Path | str = ".") -> ExperimentConfig:
    doc = _Doc(text)
    top = _mapping(doc, (), doc.data, _TOP_KEYS)

    inp = _mapping(doc, ("input",), top.get("input"), {"csv", "synth", "schema"})
    if ("csv" in inp) == ("synth" in inp):
        raise doc.error(("input",), "input needs exactly one of 'csv' or 'synth'")
    csv_path = synth = None
    schema = SchemaConfig()
    if "csv" in inp:
        csv_path = Path(base_dir) / _str(doc, ("input", "csv"), inp["csv"])
        schema = _dataclass_from(doc, ("input", "schema"), SchemaConfig, inp.get("schema"))
    else:
        if "schema" in inp:
            raise doc.error(("input", "schema", "<key>"), "schema applies to csv input only")
        synth = _dataclass_from(doc, ("input", "synth"), SynthConfig, inp["synth"])

    raw = top.get("recipes")
    if not isinstance(raw, list) or not raw:
        raise doc.error(("recipes",), "at least one recipe is required")
    recipes = tuple(_recipe(doc, i, r) for i, r in enumerate(raw))
    names = [r.name for r in recipes]
    for i, n in enumerate(names):
        if n in names[:i]:
            raise doc.error(("recipes", i, "name"), f"duplicate recipe name {n!r}")

    raw = top.get("protocols")
    if not isinstance(raw, list) or not raw:
        raise doc.error(("protocols",), "at least one protocol is required")
    protocols = []
    for i, p in enumerate(raw):
        try:
            protocols.append(ProtocolSpec.parse(_str(doc, ("protocols", i), p)))
        except ValueError as exc:
            raise doc.error(("protocols", i), str(exc)) from None

    emit = top.get("emit", list(EMIT_KINDS))
    if not isinstance(emit, list):
        raise doc.error(("emit",), "expected a list")
    for i, e in enumerate(emit):
        if e not in EMIT_KINDS:
            raise doc.error(("emit", i), f"unknown artifact {e!r}; expected one of {EMIT_KINDS}")

    notes = tuple(f"recipe {r.name}: {r.spec} undersamples after oversampling"
                  for r in recipes if not r.spec.order_ok)
    return ExperimentConfig(
        recipes, tuple(protocols), csv_path, schema, synth,
        repeats=_int(doc, ("repeats",), top.get("repeats", 1), 1),
        outputs=_str(doc, ("outputs",), top.get("outputs", "out")),
        emit=tuple(dict.fromkeys(emit)),
        seed=_int(doc, ("seed",), top.get("seed", 0), 0),
        jobs=_int(doc, ("jobs",), top.get("jobs", 1), 1),
        warnings=notes,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParse(0, f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


def load_synth_config(path) -> SynthConfig:
    """Synth settings from either an experiment config or a bare mapping."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParse(0, f"cannot read {path}: {exc.strerror}") from None
    doc = _Doc(text)
    data = doc.data or {}
    if isinstance(data, dict) and "input" in data:
        inp = _mapping(doc, ("input",), data["input"])
        if "synth" not in inp:
            raise doc.error(("input",), "config input is not synthetic")
        return _dataclass_from(doc, ("input", "synth"), SynthConfig, inp["synth"])
    return _dataclass_from(doc, (), SynthConfig, data)


def load_panel(config: ExperimentConfig) -> Panel:
    if config.csv is not None:
        if not config.csv.is_file():
            raise DataError(f"no such data file: {config.csv}")
        return ingest_csv(config.csv, config.schema)
    return simulate(config.synth).panel


# -- running -----------------------------------------------------------------

@dataclass
class RunResult:
    exit_code: int
    out_dir: Path
    artifacts: list[str] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n", encoding="utf-8")


def write_aggregation_curve(path, curve) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "auc", "peirce"])
        for k, a, p in curve:
            w.writerow([k, repr(a), repr(p)])


def versions() -> dict:
    return {"rarevent": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def run(config: ExperimentConfig, panel: Panel | None = None) -> RunResult:
    """Evaluate every recipe under every protocol and write the artifacts.

    A failing recipe is recorded in ``errors.json`` and its sweep row is
    NaN; the other recipes still run.
    """
    started = time.perf_counter()
    out = Path(config.outputs)
    out.mkdir(parents=True, exist_ok=True)
    for note in config.warnings:
        log.warning(note)
    if panel is None:
        panel = load_panel(config)
    emit = set(config.emit)
    written: list[str] = []
    errors: list[dict] = []

    for proto in config.protocols:
        rows = []
        for i, rc in enumerate(config.recipes):
            recipe = config.recipe(i)
            log.info("%s / %s: %d repeat(s)", rc.name, proto, config.repeats)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", SpecOrderWarning)
                    reports = repeat_eval(panel, recipe, config.repeats, proto.name,
                                          proto.boundary, config.jobs)
            except RareventError as exc:
                msg = f"{type(exc).__name__}: {exc}"
                log.error("%s / %s failed: %s", rc.name, proto, msg)
                errors.append({"recipe": rc.name, "protocol": str(proto), "error": type(exc).__name__,
                               "message": str(exc), "exit_code": exc.exit_code})
                rows.append(failed_row(rc.name, msg))
                continue
            rows.append(summarize_runs(rc.name, reports))
            stem = f"{rc.name}.{proto.slug}"
            if "report_json" in emit:
                name = f"{stem}.report.json"
                _write_json(out / name, {
                    "recipe": rc.name, "spec": str(rc.spec), "K": rc.K, "seed": recipe.seed,
                    "protocol": str(proto), "repeats": config.repeats,
                    "runs": [r.to_dict() for r in reports]})
                written.append(name)
            if "roc_csv" in emit:
                name = f"{stem}.roc.csv"
                reports[0].roc().to_csv(out / name)
                written.append(name)
            if "aggregation_curve_csv" in emit:
                name = f"{stem}.aggregation_curve.csv"
                write_aggregation_curve(out / name, aggregation_curve(reports[0]))
                written.append(name)
        if "sweep_csv" in emit:
            name = f"sweep.{proto.slug}.csv"
            SweepTable(rows, str(proto), config.repeats).to_csv(out / name)
            written.append(name)

    _write_json(out / "errors.json", errors)
    written.append("errors.json")
    manifest = {
        "config_hash": config.config_hash(),
        "config": config.semantic(),
        "seeds": {"base": config.seed,
                  "recipes": {rc.name: config.recipe(i).seed for i, rc in enumerate(config.recipes)}},
        "versions": versions(),
        "input_sha256": _sha256(config.csv) if config.csv is not None else None,
        "artifacts": {name: _sha256(out / name) for name in written},
        "errors": len(errors),
        "warnings": list(config.warnings),
        "wall_time_s": time.perf_counter() - started,
    }
    _write_json(out / "manifest.json", manifest)
    code = errors[0]["exit_code"] if errors else 0
    return RunResult(code, out, written + ["manifest.json"], errors)
