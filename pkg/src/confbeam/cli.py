"""Command-line entry point: ``confbeam <command> [options]``.

Commands: ``generate``, ``calibrate``, ``decode``, ``experiment`` and
``trace-record``.  Every option has a config-file key of the same name
(dashes become underscores).  Precedence, lowest first: built-in defaults,
the ``--config`` JSON file, then flags.  The master seed falls back to the
``CONFBEAM_SEED`` environment variable only when neither the flag nor the
config file sets it.  Relative paths are resolved against ``--workdir``.

Task and model specs are JSON objects with a ``kind`` key; on the command
line they may also be written as ``kind:key=value,key=value``, e.g.
``--model noisy_addition:digit_confusion_rate=0.2``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from confbeam import evalsim
from confbeam.conformal import (
    DEFAULT_BEAM_CAP,
    BeamOverflowError,
    CalibrationError,
    DynamicThresholds,
    LengthGroupCalibration,
    SubBeamCalibration,
    calibrate_dynamic,
    calibrate_length_groups,
    calibrate_sub_beam,
    decode_dynamic,
    decode_length_groups,
    filter_beam,
)
from confbeam.decoding import RANKINGS, beam_search_batch
from confbeam.models import (
    ADDITION_ALPHABET,
    DEFAULT_PAIRS,
    DatasetTask,
    LogitChainModel,
    LogitChainTask,
    MissingEntryError,
    ModelTask,
    NoisyOracleAdditionModel,
    TabularTask,
    TraceModel,
    derive_rng,
    generate_additions_dataset,
    random_tabular_model,
    read_dataset,
    record_trace,
    write_dataset,
)
from confbeam.models.base import take
from confbeam.seqcore import SCORE_CONVENTIONS, load_vocab

log = logging.getLogger("confbeam")

ENV_SEED = "CONFBEAM_SEED"
PROCEDURES = ("fixed-beam", "dynamic", "length-groups")
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SYNTHETIC_SIZES = (1000, 2000)


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    task: dict = field(default_factory=lambda: {"kind": "logit_chain"})
    model: dict = field(default_factory=lambda: {"kind": "task_truth"})
    procedure: str = "dynamic"
    alpha: float = 0.05
    alphas: list | None = None
    delta: float = 0.05
    width: int = 5
    max_len: int | None = None
    reps: int = 100
    n_calib: int | None = None
    n_test: int | None = None
    calib_fraction: float = 0.5
    test_fraction: float = 0.5
    seed: int = 0
    outdir: str = "out"
    out: str | None = None
    calibration: str | None = None
    inputs: str | None = None
    cap: int = DEFAULT_BEAM_CAP
    ranking: str = "normalized"
    score_convention: str = "log"
    length_edges: list | None = None
    pairs: list | None = None
    samples_per_pair: int = 5000
    repeats: int = 10
    include_small: bool = True

    def validate(self) -> "RunConfig":
        for a in [self.alpha, *(self.alphas or [])]:
            if not 0.0 < a < 1.0:
                raise UsageError(f"alpha must lie in (0, 1), got {a}")
        if not 0.0 < self.delta < 1.0:
            raise UsageError(f"delta must lie in (0, 1), got {self.delta}")
        if self.width < 1:
            raise UsageError("width must be >= 1")
        if self.max_len is not None and self.max_len < 1:
            raise UsageError("max_len must be >= 1")
        if self.reps < 1:
            raise UsageError("reps must be >= 1")
        if min(self.calib_fraction, self.test_fraction) < 0 or self.calib_fraction + self.test_fraction > 1 + 1e-12:
            raise UsageError("split fractions must be non-negative and sum to at most 1")
        if self.procedure not in PROCEDURES:
            raise UsageError(f"procedure must be one of {PROCEDURES}")
        if self.ranking not in RANKINGS:
            raise UsageError(f"ranking must be one of {RANKINGS}")
        if self.score_convention not in SCORE_CONVENTIONS:
            raise UsageError(f"score_convention must be one of {SCORE_CONVENTIONS}")
        if self.cap < 1:
            raise UsageError("cap must be >= 1")
        for spec in (self.task, self.model):
            if not isinstance(spec, dict) or "kind" not in spec:
                raise UsageError(f"task and model specs need a 'kind' key, got {spec!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# argument parsing


def parse_spec(text: str) -> dict:
    """``'{"kind": ...}'`` or ``kind:key=value,...`` into a spec dict."""
    text = text.strip()
    if text.startswith("{"):
        try:
            spec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise argparse.ArgumentTypeError(f"invalid JSON spec: {exc}") from None
        if "kind" not in spec:
            raise argparse.ArgumentTypeError("spec needs a 'kind' key")
        return spec
    kind, _, rest = text.partition(":")
    if not kind:
        raise argparse.ArgumentTypeError(f"malformed spec {text!r}")
    spec: dict = {"kind": kind}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq or not key:
            raise argparse.ArgumentTypeError(f"malformed spec entry {item!r} (expected key=value)")
        try:
            spec[key] = json.loads(value)
        except json.JSONDecodeError:
            spec[key] = value
    return spec


def parse_pairs(text: str) -> list:
    """``"3,3;2,4"`` into ``[[3, 3], [2, 4]]``."""
    out = []
    for chunk in filter(None, text.replace(" ", "").split(";")):
        parts = chunk.split(",")
        try:
            m, n = (int(p) for p in parts)
        except ValueError:
            raise argparse.ArgumentTypeError(f"malformed digit pair {chunk!r}; expected 'M,N'") from None
        if m < 1 or n < 1:
            raise argparse.ArgumentTypeError(f"digit counts must be positive, got {chunk!r}")
        out.append([m, n])
    if not out:
        raise argparse.ArgumentTypeError("empty pair list")
    return out


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="JSON config file (or a run manifest)")
    p.add_argument("--workdir", default=S, help="base directory for relative paths")
    p.add_argument("--seed", type=int, default=S, help=f"master seed (default: ${ENV_SEED} or 0)")
    p.add_argument("--workers", type=int, default=S, help="worker processes (default: available CPUs)")
    p.add_argument("-v", "--verbose", action="store_true", default=S)


def _model_opts(p, with_task=True):
    S = argparse.SUPPRESS
    if with_task:
        p.add_argument("--task", type=parse_spec, default=S, help="task spec")
    p.add_argument("--model", type=parse_spec, default=S, help="model spec")
    p.add_argument("--max-len", type=int, default=S)
    p.add_argument("--score-convention", choices=SCORE_CONVENTIONS, default=S)


def _calib_opts(p):
    S = argparse.SUPPRESS
    p.add_argument("--procedure", choices=PROCEDURES, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--delta", type=float, default=S)
    p.add_argument("--width", type=int, default=S)
    p.add_argument("--ranking", choices=RANKINGS, default=S)
    p.add_argument("--n-calib", type=int, default=S)
    p.add_argument("--n-test", type=int, default=S)
    p.add_argument("--calib-fraction", type=float, default=S)
    p.add_argument("--test-fraction", type=float, default=S)
    p.add_argument("--length-edges", type=int, nargs="+", default=S)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="confbeam", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write the additions dataset as JSONL")
    _common(p)
    p.add_argument("--out", default=S)
    p.add_argument("--pairs", type=parse_pairs, default=S, help="digit-count pairs, e.g. '3,3;2,4'")
    p.add_argument("--samples-per-pair", type=int, default=S)
    p.add_argument("--repeats", type=int, default=S)
    p.add_argument("--include-small", type=_bool, default=S)

    p = sub.add_parser("calibrate", help="calibrate thresholds and write a JSON artifact")
    _common(p)
    _model_opts(p)
    _calib_opts(p)
    p.add_argument("--out", default=S)

    p = sub.add_parser("decode", help="decode prediction sets with a calibration artifact")
    _common(p)
    _model_opts(p)
    _calib_opts(p)
    p.add_argument("--calibration", default=S, help="artifact written by 'calibrate'")
    p.add_argument("--inputs", default=S, help="JSONL inputs (default: the task's test split)")
    p.add_argument("--cap", type=int, default=S, help="dynamic beam safety cap")
    p.add_argument("--out", default=S)

    p = sub.add_parser("experiment", help="run repeated calibration/evaluation and write CSV reports")
    _common(p)
    _model_opts(p)
    _calib_opts(p)
    p.add_argument("--alphas", type=float, nargs="+", default=S, help="one aggregate row per value")
    p.add_argument("--reps", type=int, default=S)
    p.add_argument("--cap", type=int, default=S)
    p.add_argument("--outdir", default=S)

    p = sub.add_parser("trace-record", help="record a model's next-token distributions")
    _common(p)
    _model_opts(p)
    p.add_argument("--inputs", default=S, help="JSONL inputs (default: the task's test split)")
    p.add_argument("--n-calib", type=int, default=S)
    p.add_argument("--n-test", type=int, default=S)
    p.add_argument("--calib-fraction", type=float, default=S)
    p.add_argument("--test-fraction", type=float, default=S)
    p.add_argument("--out", default=S)
    return parser


def _read_config(path: Path) -> dict:
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if isinstance(d, dict) and "config" in d and isinstance(d["config"], dict):
        d = d["config"]  # a run manifest
    if not isinstance(d, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return d


def resolve_config(ns: argparse.Namespace, environ=None) -> tuple[RunConfig, Path]:
    """Merge defaults, config file, environment seed and flags."""
    environ = os.environ if environ is None else environ
    args = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "workdir", "workers", "verbose")}
    workdir = Path(getattr(ns, "workdir", "."))
    merged: dict = {}
    if hasattr(ns, "config"):
        cpath = Path(ns.config)
        merged.update(_read_config(cpath if cpath.is_absolute() else workdir / cpath))
    if "seed" not in args and "seed" not in merged and environ.get(ENV_SEED):
        try:
            merged["seed"] = int(environ[ENV_SEED])
        except ValueError:
            raise UsageError(f"{ENV_SEED} must be an integer, got {environ[ENV_SEED]!r}") from None
    merged.update(args)
    try:
        cfg = RunConfig.from_dict(merged)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    return cfg.validate(), workdir


def _resolve(workdir: Path, p) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else workdir / p


# ---------------------------------------------------------------------------
# tasks and models

_LOGIT_KEYS = ("seed", "n_base", "max_len", "dim", "bias_scale", "weight_scale", "termination_bias", "min_len",
               "temperature")


def _params(spec: dict, allowed) -> dict:
    extra = set(spec) - {"kind"} - set(allowed)
    if extra:
        raise UsageError(f"unknown parameters for {spec['kind']!r}: {sorted(extra)}")
    return {k: v for k, v in spec.items() if k != "kind"}


def _logit_chain(spec: dict) -> LogitChainModel:
    return LogitChainModel.random(**_params(spec, _LOGIT_KEYS))


def _tabular(spec: dict):
    p = _params(spec, ("seed", "n_base", "max_depth", "n_conditions", "zero_prob", "concentration"))
    n_cond = int(p.pop("n_conditions", 20))
    seed = int(p.pop("seed", 0))
    return random_tabular_model(np.random.default_rng(seed), p.pop("n_base", 3), p.pop("max_depth", 4),
                                conditions=tuple(f"c{i}" for i in range(n_cond)), **p)


def build_task(spec: dict, workdir: Path):
    kind = spec["kind"]
    if kind == "logit_chain":
        return LogitChainTask(_logit_chain(spec))
    if kind == "tabular_random":
        return TabularTask(_tabular(spec))
    if kind == "dataset":
        p = _params(spec, ("path", "max_len", "vocab"))
        if "path" not in p:
            raise UsageError("dataset task needs a 'path'")
        alphabet = load_vocab(_resolve(workdir, p["vocab"])) if "vocab" in p else ADDITION_ALPHABET
        items = read_dataset(_resolve(workdir, p["path"]), alphabet)
        if not items:
            raise CalibrationError(f"dataset {p['path']} is empty")
        max_len = p.get("max_len") or max(len(s.content()) for _, _, s in items)
        return DatasetTask(alphabet, [q for _, q, _ in items], [s for _, _, s in items], max_len,
                           ids=[i for i, _, _ in items])
    raise UsageError(f"unknown task kind {kind!r} (expected logit_chain, tabular_random or dataset)")


def build_model(spec: dict, task, workdir: Path):
    kind = spec["kind"]
    if kind == "task_truth":
        p = _params(spec, ("temperature",))
        if not isinstance(task, ModelTask):
            raise UsageError("model 'task_truth' needs a synthetic task")
        model = task.truth
        if "temperature" in p:
            if not isinstance(model, LogitChainModel):
                raise UsageError("temperature is only supported for logit_chain truths")
            model = model.tempered(float(p["temperature"]))
        return model
    if kind == "logit_chain":
        return _logit_chain(spec)
    if kind == "tabular_random":
        return _tabular(spec)
    if kind == "noisy_addition":
        return NoisyOracleAdditionModel(**_params(spec, ("digit_confusion_rate", "noise_temperature", "rng_seed",
                                                         "error_rate", "confusion_jitter")))
    if kind == "trace":
        p = _params(spec, ("path",))
        if "path" not in p:
            raise UsageError("trace model needs a 'path'")
        return TraceModel(_resolve(workdir, p["path"]))
    raise UsageError(f"unknown model kind {kind!r}")


def split_sizes(cfg: RunConfig, task) -> tuple[int, int]:
    if isinstance(task, DatasetTask):
        n = len(task)
        n_calib = cfg.n_calib if cfg.n_calib is not None else int(math.floor(cfg.calib_fraction * n))
        n_test = cfg.n_test if cfg.n_test is not None else int(math.floor(cfg.test_fraction * n))
        return n_calib, n_test
    return (cfg.n_calib if cfg.n_calib is not None else SYNTHETIC_SIZES[0],
            cfg.n_test if cfg.n_test is not None else SYNTHETIC_SIZES[1])


def draw_splits(cfg: RunConfig, task):
    """The calibration and test splits shared by ``calibrate`` and ``decode``."""
    n_calib, n_test = split_sizes(cfg, task)
    return task.draw_split(derive_rng(cfg.seed, 0), n_calib, n_test)


def _ids(task, conditions, n: int) -> list[str]:
    if isinstance(task, DatasetTask):
        index = dict(zip(task.conditions, task.ids))
        return [index.get(c, str(c)) for c in conditions]
    return [f"item-{i:06d}" for i in range(n)]


# ---------------------------------------------------------------------------
# commands


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _clean(obj):
    """Replace non-finite floats by ``None`` so the output is strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def cmd_generate(cfg: RunConfig, workdir: Path, workers: int) -> int:
    pairs = [tuple(p) for p in cfg.pairs] if cfg.pairs is not None else DEFAULT_PAIRS
    items = generate_additions_dataset(cfg.seed, pairs, cfg.samples_per_pair, cfg.repeats, cfg.include_small)
    out = _resolve(workdir, cfg.out or "additions.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(items, out)
    log.info("wrote %d problems to %s", len(items), out)
    return EXIT_OK


def _calibrate(cfg: RunConfig, model, calib, max_len: int):
    if cfg.procedure == "fixed-beam":
        return calibrate_sub_beam(model, calib, cfg.width, max_len, cfg.alpha, cfg.delta, cfg.ranking,
                                  cfg.score_convention)
    if cfg.procedure == "dynamic":
        return calibrate_dynamic(model, calib, cfg.alpha, max_len, cfg.score_convention)
    edges = cfg.length_edges or [max_len]
    return calibrate_length_groups(model, calib, cfg.alpha, edges, cfg.score_convention)


def cmd_calibrate(cfg: RunConfig, workdir: Path, workers: int) -> int:
    task = build_task(cfg.task, workdir)
    model = build_model(cfg.model, task, workdir)
    max_len = cfg.max_len or task.max_len
    (cc, ct), _ = draw_splits(cfg, task)
    pad = model.alphabet.padding
    calib = [(take(cc, [i])[0], tuple(int(t) for t in row if t != pad)) for i, row in enumerate(ct)]
    cal = _calibrate(cfg, model, calib, max_len)
    d = cal.to_dict()
    d["n_calib"] = len(calib)
    d["seed"] = cfg.seed
    out = _resolve(workdir, cfg.out or "calibration.json")
    _write_json(out, d)
    log.info("wrote %s calibration to %s", d["procedure"], out)
    return EXIT_OK


def load_calibration(path: Path):
    d = json.loads(path.read_text(encoding="utf-8"))
    proc = d.get("procedure")
    if proc == "fixed-beam":
        return SubBeamCalibration.from_dict(d)
    if proc == "dynamic":
        return DynamicThresholds.from_dict(d)
    if proc == "length-groups":
        return LengthGroupCalibration.from_dict(d)
    raise UsageError(f"{path}: unknown calibration procedure {proc!r}")


def _read_inputs(path: Path):
    ids, conditions = [], []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "id" not in rec:
                raise UsageError(f"{path}:{lineno}: input line needs an 'id'")
            ids.append(str(rec["id"]))
            if "question" in rec:
                conditions.append(rec["question"])
            elif "condition" in rec:
                c = rec["condition"]
                conditions.append(np.asarray(c, dtype=float) if isinstance(c, list) else c)
            else:
                conditions.append(str(rec["id"]))
    if conditions and isinstance(conditions[0], np.ndarray):
        conditions = np.stack(conditions)
    return ids, conditions


def _set_json(alphabet, items) -> list[dict]:
    return [{"tokens": alphabet.decode(s.sequence.content()), "logp": s.log_prob, "norm_score": s.normalized_score}
            for s in items]


def cmd_decode(cfg: RunConfig, workdir: Path, workers: int) -> int:
    if cfg.calibration is None:
        raise UsageError("decode needs --calibration")
    cal = load_calibration(_resolve(workdir, cfg.calibration))
    if cfg.inputs is not None:
        task = None
        if cfg.model["kind"] == "task_truth":
            task = build_task(cfg.task, workdir)
        model = build_model(cfg.model, task, workdir)
        ids, conditions = _read_inputs(_resolve(workdir, cfg.inputs))
    else:
        task = build_task(cfg.task, workdir)
        model = build_model(cfg.model, task, workdir)
        _, (conditions, _) = draw_splits(cfg, task)
        ids = _ids(task, conditions, len(conditions))
    alphabet = model.alphabet
    out = _resolve(workdir, cfg.out or "predictions.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    overflows = 0
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        if isinstance(cal, SubBeamCalibration):
            results = beam_search_batch(model, conditions, cal.width, cfg.max_len or cal.max_len, cal.ranking,
                                        cal.convention, condition_ids=ids)
            for cid, res in zip(ids, results):
                s = filter_beam(res, cal)
                f.write(json.dumps({"id": cid, "set": _set_json(alphabet, s), "set_size": len(s)}) + "\n")
            return EXIT_OK
        for i, cid in enumerate(ids):
            cond = take(conditions, [i])[0]
            try:
                if isinstance(cal, LengthGroupCalibration):
                    s = decode_length_groups(model, cond, cal, cfg.cap, cid)
                else:
                    s = decode_dynamic(model, cond, cal, cfg.cap, cid)
                rec = {"id": cid, "set": _set_json(alphabet, s), "set_size": len(s)}
            except BeamOverflowError as exc:
                overflows += 1
                rec = {"id": cid, "set": _set_json(alphabet, exc.partial), "set_size": len(exc.partial),
                       "error": "beam_overflow", "step": exc.step}
            f.write(json.dumps(rec) + "\n")
    if overflows:
        print(f"warning: {overflows} of {len(ids)} inputs hit the beam cap ({cfg.cap})", file=sys.stderr)
    return EXIT_OK


def cmd_experiment(cfg: RunConfig, workdir: Path, workers: int) -> int:
    if cfg.procedure == "length-groups":
        raise UsageError("experiment supports the fixed-beam and dynamic procedures")
    task = build_task(cfg.task, workdir)
    model = build_model(cfg.model, task, workdir)
    max_len = cfg.max_len or task.max_len
    n_calib, n_test = split_sizes(cfg, task)
    reports = []
    for alpha in cfg.alphas or [cfg.alpha]:
        if cfg.procedure == "fixed-beam":
            r = evalsim.run_fixed_beam_experiment(task, model, cfg.width, alpha, cfg.delta, cfg.reps, n_calib, n_test,
                                                  cfg.seed, max_len, cfg.ranking, cfg.score_convention, workers)
        else:
            r = evalsim.run_dynamic_experiment(task, model, alpha, max_len, cfg.reps, n_calib, n_test, cfg.seed,
                                               cfg.cap, cfg.score_convention, workers)
        reports.append(r)
    outdir = _resolve(workdir, cfg.outdir)
    evalsim.emit_report(reports, outdir)
    _write_json(outdir / "report.json", [evalsim.report_to_dict(r) for r in reports])
    manifest = cfg.to_dict()
    manifest["outdir"] = str(outdir)
    for spec in (manifest["task"], manifest["model"]):
        if "path" in spec:
            spec["path"] = str(_resolve(workdir, spec["path"]))
    _write_json(outdir / "run_manifest.json", {"command": "experiment", "config": manifest})
    aborted = sum(len(r.aborted) for r in reports)
    for r in reports:
        for rep, msg in r.aborted:
            print(f"repetition {rep} (alpha={r.config['alpha']}) aborted: {msg}", file=sys.stderr)
    if aborted:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_trace_record(cfg: RunConfig, workdir: Path, workers: int) -> int:
    if cfg.inputs is not None:
        ids, conditions = _read_inputs(_resolve(workdir, cfg.inputs))
        task = build_task(cfg.task, workdir) if cfg.model["kind"] == "task_truth" else None
        model = build_model(cfg.model, task, workdir)
    else:
        task = build_task(cfg.task, workdir)
        model = build_model(cfg.model, task, workdir)
        _, (conditions, _) = draw_splits(cfg, task)
        ids = _ids(task, conditions, len(conditions))
    max_len = cfg.max_len or (task.max_len if task is not None else None)
    if max_len is None:
        raise UsageError("trace-record needs --max-len")
    items = []
    for i, cid in enumerate(ids):
        cond = take(conditions, [i])[0]
        # string conditions (questions) key the trace directly so tasks can replay it
        items.append((cond if isinstance(cond, str) else cid, cond))
    out = _resolve(workdir, cfg.out or "trace.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    n = record_trace(model, items, max_len, out)
    log.info("wrote %d trace entries to %s", n, out)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "calibrate": cmd_calibrate, "decode": cmd_decode,
            "experiment": cmd_experiment, "trace-record": cmd_trace_record}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, workdir = resolve_config(ns)
        workers = getattr(ns, "workers", None) or evalsim.default_workers()
        return COMMANDS[ns.command](cfg, workdir, workers)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"confbeam: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CalibrationError, MissingEntryError, OSError, ValueError) as exc:
        print(f"confbeam: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
