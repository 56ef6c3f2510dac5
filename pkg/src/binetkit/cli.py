"""Command-line front end for the binetkit pipeline.

Subcommands mirror the pipeline stages: generate, inject, train, detect,
classify, evaluate, rank.  Every subcommand accepts --config/--save-config so
a run can be replayed exactly from its saved parameter file; precedence is
command-line flags, then config file, then built-in defaults.

numpy is imported lazily inside the handlers so that --threads can pin the
BLAS thread-pool environment variables before the first numeric import.
"""

import argparse
import json
import os
import sys

LOG_FORMAT_VERSION = 1
GRAPH_FORMAT_VERSION = 1

PAPER_GRAPH = "paper"

HEURISTIC_FLAGS = {
    "lp-left": "lp_left",
    "lp-center": "lp_center",
    "lp-right": "lp_right",
    "elbow-down": "elbow_down",
    "elbow-up": "elbow_up",
    "best": "best",
}

STRATEGY_FLAGS = {
    "global": "global",
    "attr": "per_attribute",
    "event": "per_event",
    "event-attr": "per_event_attribute",
}

METHODS = ("tstide", "naive", "naive+", "likelihood", "likelihood+")

RESULT_HEADER = "dataset,method,level,heuristic,strategy,seed,precision,recall,f1"

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


class CliError(ValueError):
    """Invalid invocation or input detected before any output is written."""


# ------------------------------------------------------------ configuration
#
# Each subcommand declares its full parameter record below.  A value of
# REQUIRED means the parameter must come from either the command line or the
# config file.  The resolved record is what --save-config writes.

REQUIRED = object()

DEFAULTS = {
    "generate": {
        "graph": None,
        "random": None,
        "cases": REQUIRED,
        "seed": 0,
        "max_length": 64,
        "name": None,
        "output": REQUIRED,
        "save_graph": None,
    },
    "inject": {
        "log": REQUIRED,
        "fraction": 0.30,
        "seed": 0,
        "types": None,
        "graph": None,
        "max_skip": 3,
        "max_insert": 3,
        "max_rework": 3,
        "max_shift": 2,
        "max_attribute": 3,
        "output": REQUIRED,
    },
    "train": {
        "log": REQUIRED,
        "model": "v1",
        "epochs": 20,
        "batch": 500,
        "hidden": None,
        "seed": 0,
        "output": REQUIRED,
    },
    "detect": {
        "log": REQUIRED,
        "model": None,
        "method": None,
        "heuristic": "lp-center",
        "strategy": "attr",
        "seed": 0,
        "output": REQUIRED,
    },
    "classify": {
        "log": REQUIRED,
        "model": REQUIRED,
        "flags": None,
        "heuristic": "lp-right",
        "strategy": "attr",
        "output": REQUIRED,
        "report": None,
    },
    "evaluate": {
        "log": REQUIRED,
        "flags": REQUIRED,
        "level": "attribute",
        "output": REQUIRED,
    },
    "rank": {
        "results": REQUIRED,
        "level": "attribute",
        "output": REQUIRED,
    },
}


def _load_config(path: str, command: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            obj = json.load(handle)
    except OSError as err:
        raise CliError(f"cannot read config {path}: {err.strerror}")
    except json.JSONDecodeError as err:
        raise CliError(f"config {path} is not valid JSON (line {err.lineno})")
    if not isinstance(obj, dict):
        raise CliError(f"config {path} must hold a JSON object")
    saved_for = obj.pop("command", command)
    if saved_for != command:
        raise CliError(f"config {path} was saved for {saved_for!r}, not {command!r}")
    unknown = set(obj) - set(DEFAULTS[command])
    if unknown:
        raise CliError(f"config {path} has unknown keys: {sorted(unknown)}")
    return obj


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge flags over config file over defaults into one parameter record."""
    command = args.command
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        cfg.update(_load_config(args.config, command))
    for key in DEFAULTS[command]:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    missing = [k for k, v in cfg.items() if v is REQUIRED]
    if missing:
        raise CliError(f"missing required parameter(s): {', '.join(sorted(missing))}")
    return cfg


def _save_config(path: str, command: str, cfg: dict) -> None:
    from binetkit.event_log import atomic_write_text

    record = {"command": command}
    record.update(cfg)
    atomic_write_text(path, json.dumps(record, indent=2, sort_keys=True) + "\n")


def _parse_kv(tokens, what: str, cast) -> dict:
    if isinstance(tokens, dict):
        return {str(k): cast(v) for k, v in tokens.items()}
    out = {}
    for token in tokens:
        if "=" not in token:
            raise CliError(f"{what} expects key=value tokens, got {token!r}")
        key, _, raw = token.partition("=")
        try:
            out[key] = cast(raw)
        except ValueError:
            raise CliError(f"{what}: cannot parse value in {token!r}")
    return out


def _heuristic(cfg: dict) -> str:
    name = cfg["heuristic"]
    if name not in HEURISTIC_FLAGS:
        raise CliError(f"unknown heuristic {name!r}; choose from "
                       f"{', '.join(HEURISTIC_FLAGS)}")
    return HEURISTIC_FLAGS[name]


def _strategy(cfg: dict) -> str:
    name = cfg["strategy"]
    if name not in STRATEGY_FLAGS:
        raise CliError(f"unknown strategy {name!r}; choose from "
                       f"{', '.join(STRATEGY_FLAGS)}")
    return STRATEGY_FLAGS[name]


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _load_graph_arg(spec: str):
    from binetkit.process_generator import load_graph

    if spec == PAPER_GRAPH:
        from binetkit.fixtures import paper_process_graph

        return paper_process_graph()
    return load_graph(spec)


def _labels_or_none(log):
    from binetkit.event_log import SchemaError, label_tensor

    try:
        return label_tensor(log)
    except SchemaError:
        return None


# ------------------------------------------------------------- tensor files
#
# Scores and flags travel as CSV with one row per real (non-padding) slot:
# case id, zero-based event index within the case, attribute name, value.


def _write_tensor_csv(path: str, log, tensor, column: str, fmt) -> None:
    import csv
    import io

    from binetkit.event_log import atomic_write_text

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["case_id", "event_index", "attribute", column])
    for i, case in enumerate(log.cases):
        for j in range(len(case)):
            for k, attr in enumerate(log.schema):
                writer.writerow([case.case_id, j, attr, fmt(tensor[i, j, k])])
    atomic_write_text(path, buffer.getvalue())


def _read_tensor_csv(path: str, log, column: str, dtype):
    import csv

    import numpy as np

    case_index = {case.case_id: i for i, case in enumerate(log.cases)}
    lengths = [len(case) for case in log.cases]
    attr_index = {name: k for k, name in enumerate(log.schema)}
    tensor = np.zeros((log.num_cases, log.max_case_length, len(log.schema)),
                      dtype=dtype)
    try:
        handle = open(path, "r", encoding="utf-8", newline="")
    except OSError as err:
        raise CliError(f"cannot read {path}: {err.strerror}")
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["case_id", "event_index", "attribute", column]:
            raise CliError(f"{path}: expected a {column} CSV header, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise CliError(f"{path}:{lineno}: expected 4 columns")
            case_id, raw_index, attr, raw_value = row
            if case_id not in case_index:
                raise CliError(f"{path}:{lineno}: unknown case id {case_id!r}")
            if attr not in attr_index:
                raise CliError(f"{path}:{lineno}: unknown attribute {attr!r}")
            i = case_index[case_id]
            j = int(raw_index)
            if not 0 <= j < lengths[i]:
                raise CliError(f"{path}:{lineno}: event index {j} outside case")
            tensor[i, j, attr_index[attr]] = float(raw_value)
    return tensor


def _sidecar_meta(flags_path: str) -> dict:
    base = flags_path
    if base.endswith(".flags.csv"):
        base = base[: -len(".flags.csv")]
    meta_path = base + ".meta.json"
    if not os.path.exists(meta_path):
        return {}
    with open(meta_path, "r", encoding="utf-8") as handle:
        return json.load(handle)


# ----------------------------------------------------------------- handlers


def cmd_generate(cfg: dict) -> int:
    from binetkit.event_log import save_log
    from binetkit.process_generator import (GeneratorConfig, generate_log,
                                            save_graph)

    if (cfg["graph"] is None) == (cfg["random"] is None):
        raise CliError("choose exactly one source: a graph file or --random")
    if cfg["random"] is not None:
        params = _parse_kv(cfg["random"], "--random", int)
        known = {"activities", "attrs", "values", "branching"}
        unknown = set(params) - known
        if unknown:
            raise CliError(f"--random: unknown keys {sorted(unknown)}")
        if "activities" not in params:
            raise CliError("--random needs at least activities=N")
        from binetkit.process_generator import random_graph

        graph = random_graph(
            num_activities=params["activities"],
            num_attributes=params.get("attrs", 1),
            values_per_attribute=params.get("values", 4),
            branching=params.get("branching", 3),
            seed=cfg["seed"],
        )
        cfg["random"] = params
    else:
        graph = _load_graph_arg(cfg["graph"])

    name = cfg["name"] or os.path.splitext(os.path.basename(cfg["output"]))[0]
    log = generate_log(
        graph,
        GeneratorConfig(num_cases=int(cfg["cases"]), seed=cfg["seed"],
                        max_case_length=cfg["max_length"]),
        name=name,
    )
    _ensure_parent(cfg["output"])
    save_log(log, cfg["output"])
    if cfg["save_graph"]:
        _ensure_parent(cfg["save_graph"])
        save_graph(graph, cfg["save_graph"])
    print(f"wrote {cfg['output']}: {log.num_cases} cases, "
          f"{len(log.schema)} attributes")
    return 0


def cmd_inject(cfg: dict) -> int:
    from binetkit.anomaly_injector import InjectionConfig, inject
    from binetkit.event_log import case_level_labels, load_log, save_log

    log = load_log(cfg["log"])
    weights = None
    if cfg["types"] is not None:
        weights = _parse_kv(cfg["types"], "--types", float)
        cfg["types"] = weights
    graph = _load_graph_arg(cfg["graph"]) if cfg["graph"] else None
    injected = inject(
        log,
        InjectionConfig(
            anomaly_fraction=float(cfg["fraction"]),
            type_weights=weights,
            seed=cfg["seed"],
            max_skip=cfg["max_skip"],
            max_insert=cfg["max_insert"],
            max_rework=cfg["max_rework"],
            max_shift=cfg["max_shift"],
            max_attribute=cfg["max_attribute"],
        ),
        graph=graph,
    )
    _ensure_parent(cfg["output"])
    save_log(injected, cfg["output"])
    anomalous = int(case_level_labels(injected).sum())
    print(f"wrote {cfg['output']}: {anomalous}/{injected.num_cases} cases anomalous")
    return 0


def cmd_train(cfg: dict) -> int:
    from binetkit.binet_model import BinetConfig, build_for_log, save_model, train
    from binetkit.event_log import encode, load_log

    version = {"v1": 1, "v2": 2, "v3": 3}.get(cfg["model"])
    if version is None:
        raise CliError(f"unknown model {cfg['model']!r}; choose v1, v2 or v3")
    enc = encode(load_log(cfg["log"]))
    model = build_for_log(enc, BinetConfig(
        version=version,
        hidden_dim=cfg["hidden"],
        batch_size=cfg["batch"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
    ))
    losses = train(model, enc)
    _ensure_parent(cfg["output"])
    save_model(model, cfg["output"])
    print(f"wrote {cfg['output']}: {cfg['model']}, {len(losses)} updates, "
          f"final loss {losses[-1]:.4f}")
    return 0


def _detect_scores(cfg: dict, log, enc):
    """Score tensor plus, for the fixed-threshold detectors, ready-made flags."""
    import numpy as np

    from binetkit import baselines
    from binetkit.event_log import valid_mask

    if (cfg["model"] is None) == (cfg["method"] is None):
        raise CliError("choose exactly one detector: --model or --method")
    if cfg["model"] is not None:
        from binetkit.binet_model import load_model, score_log

        model = load_model(cfg["model"])
        return f"binet-{model.config.version}", score_log(model, enc), None

    method = cfg["method"]
    if method not in METHODS:
        raise CliError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method == "tstide":
        return method, baselines.tstide_scores(enc), None
    if method == "naive+":
        return method, baselines.naive_score_tensor(enc), None
    if method == "likelihood+":
        graph = baselines.mine_likelihood_graph(log)
        return method, baselines.likelihood_scores(graph, enc), None

    scores = baselines.naive_score_tensor(enc)
    C, Ep, A = scores.shape
    mask = valid_mask(enc.case_lengths, Ep)
    flags = np.zeros((C, Ep, A), dtype=np.uint8)
    if method == "naive":
        per_case = baselines.naive_case_flags(enc)
        flags[:, :, 0] = mask & per_case[:, None]
        return method, scores, flags
    graph = baselines.mine_likelihood_graph(log)
    scores = baselines.likelihood_scores(graph, enc)
    flags = baselines.likelihood_flags(graph, enc)
    return method, scores, flags


def cmd_detect(cfg: dict) -> int:
    from binetkit.event_log import atomic_write_text, encode, load_log
    from binetkit.thresholding import apply_strategy, apply_thresholds

    log = load_log(cfg["log"])
    enc = encode(log)
    method, scores, fixed_flags = _detect_scores(cfg, log, enc)

    if fixed_flags is not None:
        flags = fixed_flags
        heuristic = strategy = "fixed"
        thresholds = None
    else:
        heuristic = _heuristic(cfg)
        strategy = _strategy(cfg)
        labels = None
        if heuristic == "best":
            truth = _labels_or_none(log)
            if truth is None:
                raise CliError("the best heuristic needs a labelled log")
            labels = truth > 0
        assignment = apply_strategy(scores, enc.case_lengths, heuristic,
                                    strategy, labels)
        flags = apply_thresholds(scores, assignment, enc.case_lengths)
        import numpy as np

        thresholds = np.asarray(assignment.values).tolist()

    prefix = cfg["output"]
    _ensure_parent(prefix + ".meta.json")
    _write_tensor_csv(prefix + ".scores.csv", log, scores, "score",
                      lambda x: repr(float(x)))
    _write_tensor_csv(prefix + ".flags.csv", log, flags, "flag",
                      lambda x: int(x))
    meta = {
        "dataset": log.name,
        "method": method,
        "level": "attribute",
        "heuristic": heuristic,
        "strategy": strategy,
        "seed": cfg["seed"],
        "thresholds": thresholds,
    }
    atomic_write_text(prefix + ".meta.json",
                      json.dumps(meta, indent=2, sort_keys=True) + "\n")
    flagged = int(flags.sum())
    print(f"wrote {prefix}.scores.csv / .flags.csv / .meta.json "
          f"({flagged} slots flagged)")
    return 0


def cmd_classify(cfg: dict) -> int:
    import numpy as np

    from binetkit.binet_model import load_model, predict_log, score_log
    from binetkit.classifier import (classification_report, classify,
                                     confusion_csv, export_classified,
                                     prediction_sets)
    from binetkit.event_log import atomic_write_text, encode, load_log
    from binetkit.thresholding import apply_strategy, apply_thresholds

    log = load_log(cfg["log"])
    enc = encode(log)
    model = load_model(cfg["model"])
    probs = predict_log(model, enc)
    scores = score_log(model, enc)

    heuristic = _heuristic(cfg)
    strategy = _strategy(cfg)
    labels = None
    truth = _labels_or_none(log)
    if heuristic == "best":
        if truth is None:
            raise CliError("the best heuristic needs a labelled log")
        labels = truth > 0
    assignment = apply_strategy(scores, enc.case_lengths, heuristic,
                                strategy, labels)
    if cfg["flags"] is not None:
        flags = _read_tensor_csv(cfg["flags"], log, "flag", np.uint8)
    else:
        flags = apply_thresholds(scores, assignment, enc.case_lengths)

    predictions = prediction_sets(probs, enc, flags, assignment)
    predicted = classify(enc, flags, predictions)
    _ensure_parent(cfg["output"])
    export_classified(log, predicted, cfg["output"])
    print(f"wrote {cfg['output']}: {int((predicted > 0).sum())} slots classified")

    if truth is not None:
        report = classification_report(predicted, truth, enc.case_lengths)
        report_path = cfg["report"] or (
            os.path.splitext(cfg["output"])[0] + ".confusion.csv")
        _ensure_parent(report_path)
        atomic_write_text(report_path, confusion_csv(report))
        print(f"wrote {report_path}: macro F1 {report.macro_f1:.4f}, "
              f"joint macro F1 {report.joint_macro_f1:.4f}")
    return 0


def cmd_evaluate(cfg: dict) -> int:
    import numpy as np

    from binetkit.event_log import atomic_write_text, load_log
    from binetkit.evaluation import DetectionResult, detection_metrics

    if cfg["level"] not in ("attribute", "case"):
        raise CliError("--level must be attribute or case")
    log = load_log(cfg["log"])
    truth = _labels_or_none(log)
    if truth is None:
        raise CliError("evaluate needs a labelled log")
    lengths = np.array([len(case) for case in log.cases])

    flags_paths = cfg["flags"]
    if isinstance(flags_paths, str):
        flags_paths = [flags_paths]
    rows = []
    for path in flags_paths:
        flags = _read_tensor_csv(path, log, "flag", np.uint8)
        meta = _sidecar_meta(path)
        p, r, f1 = detection_metrics(flags, truth, lengths, cfg["level"])
        stem = os.path.basename(path)
        if stem.endswith(".flags.csv"):
            stem = stem[: -len(".flags.csv")]
        result = DetectionResult(
            dataset=meta.get("dataset", log.name),
            method=meta.get("method", stem),
            level=cfg["level"],
            heuristic=meta.get("heuristic", "unknown"),
            strategy=meta.get("strategy", "unknown"),
            seed=int(meta.get("seed", 0)),
            precision=p,
            recall=r,
            f1=f1,
        )
        rows.append(result)
        print(f"{result.method}: precision {p:.4f}, recall {r:.4f}, f1 {f1:.4f}")

    _ensure_parent(cfg["output"])
    atomic_write_text(cfg["output"],
                      "\n".join([RESULT_HEADER] + [r.row() for r in rows]) + "\n")
    print(f"wrote {cfg['output']}: {len(rows)} result rows")
    return 0


def cmd_rank(cfg: dict) -> int:
    import csv

    from binetkit.evaluation import DetectionResult, emit_report

    paths = cfg["results"]
    if isinstance(paths, str):
        paths = [paths]
    results = []
    for path in paths:
        try:
            handle = open(path, "r", encoding="utf-8", newline="")
        except OSError as err:
            raise CliError(f"cannot read {path}: {err.strerror}")
        with handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header != RESULT_HEADER.split(","):
                raise CliError(f"{path}: not a results CSV (bad header)")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 9:
                    raise CliError(f"{path}:{lineno}: expected 9 columns")
                results.append(DetectionResult(
                    dataset=row[0], method=row[1], level=row[2],
                    heuristic=row[3], strategy=row[4], seed=int(row[5]),
                    precision=float(row[6]), recall=float(row[7]),
                    f1=float(row[8]),
                ))
    paths_out = emit_report(results, cfg["output"], level=cfg["level"])
    with open(paths_out["json"], "r", encoding="utf-8") as handle:
        summary = json.load(handle)
    friedman = summary.get("friedman")
    if friedman:
        print(f"Friedman chi2 {friedman['statistic']:.4f}, "
              f"p {friedman['p_value']:.6f}, CD {summary['nemenyi_cd']:.4f}")
    for key in sorted(paths_out):
        print(f"wrote {paths_out[key]}")
    return 0


HANDLERS = {
    "generate": cmd_generate,
    "inject": cmd_inject,
    "train": cmd_train,
    "detect": cmd_detect,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
    "rank": cmd_rank,
}


# ------------------------------------------------------------------- parser


def _version_string() -> str:
    from binetkit import __version__
    from binetkit.binet_model import FORMAT_VERSION

    return (f"binetkit {__version__} "
            f"(log format {LOG_FORMAT_VERSION}, "
            f"graph format {GRAPH_FORMAT_VERSION}, "
            f"model format {FORMAT_VERSION})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binetkit",
        description="Generate, corrupt, score, and rank business-process event logs.",
    )
    parser.add_argument("--version", action="store_true",
                        help="print package and file-format versions")
    parser.add_argument("--threads", type=int, default=1, metavar="N",
                        help="BLAS/OpenMP thread cap (default 1, reproducible)")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--config", metavar="FILE",
                       help="JSON parameter file (flags take precedence)")
        p.add_argument("--save-config", dest="save_config", metavar="FILE",
                       help="write the fully resolved parameters before running")
        p.add_argument("--seed", type=int, help="random seed (default 0)")

    p = sub.add_parser("generate", help="sample a log from a likelihood graph")
    p.add_argument("graph", nargs="?",
                   help=f"graph file, or '{PAPER_GRAPH}' for the bundled process")
    p.add_argument("--random", nargs="+", metavar="KEY=N",
                   help="random graph instead: activities=N [attrs= values= branching=]")
    p.add_argument("--cases", type=int, help="number of cases to sample")
    p.add_argument("--max-length", dest="max_length", type=int,
                   help="abort a walk beyond this many events (default 64)")
    p.add_argument("--name", help="log name (default: output file stem)")
    p.add_argument("--save-graph", dest="save_graph", metavar="FILE",
                   help="also write the graph that produced the log")
    p.add_argument("-o", "--output", help="log file to write")
    common(p)

    p = sub.add_parser("inject", help="inject labelled anomalies into a log")
    p.add_argument("log", nargs="?", help="input log file")
    p.add_argument("--fraction", type=float, help="share of anomalous cases (default 0.30)")
    p.add_argument("--types", nargs="+", metavar="NAME=W",
                   help="anomaly type weights, e.g. Skip=1 Insert=2")
    p.add_argument("--graph", help="likelihood graph for out-of-process inserts")
    for knob in ("skip", "insert", "rework", "shift", "attribute"):
        p.add_argument(f"--max-{knob}", dest=f"max_{knob}", type=int,
                       help=f"size cap for {knob} edits")
    p.add_argument("-o", "--output", help="labelled log file to write")
    common(p)

    p = sub.add_parser("train", help="train a sequence model on a log")
    p.add_argument("log", nargs="?", help="training log file")
    p.add_argument("--model", choices=("v1", "v2", "v3"), help="architecture (default v1)")
    p.add_argument("--epochs", type=int, help="training epochs (default 20)")
    p.add_argument("--batch", type=int, help="mini-batch size (default 500)")
    p.add_argument("--hidden", type=int, help="hidden size (default: 2x max case length)")
    p.add_argument("-o", "--output", help="model file to write")
    common(p)

    p = sub.add_parser("detect", help="score a log and flag anomalies")
    p.add_argument("log", nargs="?", help="log file to score")
    p.add_argument("--model", help="trained model file")
    p.add_argument("--method", help="baseline instead of a model: "
                                    + "|".join(METHODS))
    p.add_argument("--heuristic", choices=sorted(HEURISTIC_FLAGS),
                   help="threshold heuristic (default lp-center)")
    p.add_argument("--strategy", choices=sorted(STRATEGY_FLAGS),
                   help="threshold granularity (default attr)")
    p.add_argument("-o", "--output",
                   help="output prefix for .scores.csv/.flags.csv/.meta.json")
    common(p)

    p = sub.add_parser("classify", help="name the anomaly type of flagged slots")
    p.add_argument("log", nargs="?", help="log file")
    p.add_argument("--model", help="trained model file")
    p.add_argument("--flags", help="flags CSV from detect (default: recompute)")
    p.add_argument("--heuristic", choices=sorted(HEURISTIC_FLAGS),
                   help="threshold heuristic (default lp-right)")
    p.add_argument("--strategy", choices=sorted(STRATEGY_FLAGS),
                   help="threshold granularity (default attr)")
    p.add_argument("--report", metavar="FILE",
                   help="confusion matrix CSV (labelled logs; default: <output>.confusion.csv)")
    p.add_argument("-o", "--output", help="classified log file to write")
    common(p)

    p = sub.add_parser("evaluate", help="measure flags against a labelled log")
    p.add_argument("log", nargs="?", help="labelled log file")
    p.add_argument("--flags", nargs="+", metavar="FILE", help="flags CSV file(s)")
    p.add_argument("--level", choices=("attribute", "case"),
                   help="granularity of the comparison (default attribute)")
    p.add_argument("-o", "--output", help="metrics CSV to write")
    common(p)

    p = sub.add_parser("rank", help="Friedman/Nemenyi comparison of results CSVs")
    p.add_argument("results", nargs="*", help="metrics CSV file(s) from evaluate")
    p.add_argument("--level", choices=("attribute", "case"),
                   help="which result rows to rank (default attribute)")
    p.add_argument("-o", "--output", help="report directory")
    common(p)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = max(1, args.threads)
    for var in _THREAD_VARS:
        os.environ[var] = str(threads)

    if args.version:
        print(_version_string())
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2

    if args.command == "rank" and not getattr(args, "results", None):
        args.results = None  # empty list means "not given on the command line"

    try:
        cfg = resolve_config(args)
        if getattr(args, "save_config", None):
            _ensure_parent(args.save_config)
            _save_config(args.save_config, args.command, cfg)
        return HANDLERS[args.command](cfg)
    except (ValueError, KeyError, RuntimeError, OSError) as err:
        message = err.strerror if isinstance(err, OSError) and err.strerror else err
        print(f"binetkit {args.command}: error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
