"""Command-line entry point: one subcommand per pipeline stage, artifacts on disk.

Every run writes a manifest under ``<out-dir>/manifests/``.  Its id is a digest of
the command, the content-relevant arguments, and the input file digests, so the
id embedded in artifacts is stable across reruns; wall-clock fields live only
in the manifest itself.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .digest import sha256_file, sha256_json
from .errors import HdrTrackError, InvalidArgument, UnlabeledDataset, VocabularyDigestMismatch
from .features.matrix import binarize, load_matrix, save_matrix
from .features.split import SPLIT_NAMES, SplitSpec, split_dataset, split_manifest
from .features.vocab import VocabParams, build_vocabulary
from .filterlist import label_dataset, parse_filter_list
from .ingest import (
    Direction,
    Dataset,
    filter_hosts,
    ingest_capture,
    load_dataset,
    merge_datasets,
    persist_dataset,
    profile_dataset,
)
from .models import (
    PRESETS,
    KINDS,
    calibrate_isotonic,
    compute_feature_importance,
    load_model,
    predict_proba,
    save_model,
    train_classifier,
)
from .evaluation.metrics import MetricsReport, compute_metrics
from .evaluation.protocol import cross_evaluate, repeated_stratified_cv
from .evaluation.report import format_table, jsonable, write_plot_data

SUBDIRS = ("datasets", "vocab", "matrices", "models", "reports", "manifests")
THREADS_ENV = "HDRTRACK_THREADS"
# arguments that never influence artifact bytes
_VOLATILE_ARGS = {"threads", "out_dir", "func"}


class Run:
    """Collects inputs and outputs of one invocation and writes its manifest."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self.started = time.time()
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.out_dir = Path(args.out_dir)
        for sub in SUBDIRS:
            (self.out_dir / sub).mkdir(parents=True, exist_ok=True)
        self._id: str | None = None

    def add_input(self, path) -> str:
        digest = sha256_file(path)
        self.inputs[str(path)] = digest
        self._id = None
        return digest

    @property
    def manifest_id(self) -> str:
        if self._id is None:
            stable = {k: _stable_arg(v) for k, v in vars(self.args).items()
                      if k not in _VOLATILE_ARGS}
            body = {"command": self.command, "args": _strip_paths(stable),
                    "inputs": sorted(self.inputs.values()), "version": __version__}
            self._id = sha256_json(body)[:20]
        return self._id

    def path(self, sub: str, name: str) -> Path:
        return self.out_dir / sub / name

    def wrote(self, path) -> None:
        self.outputs[str(path)] = sha256_file(path)

    def finish(self) -> Path:
        manifest = {
            "manifest_id": self.manifest_id,
            "command": self.command,
            "args": {k: _stable_arg(v) for k, v in vars(self.args).items() if k != "func"},
            "inputs": self.inputs,
            "outputs": self.outputs,
            "version": __version__,
            "seed": getattr(self.args, "seed", None),
            "started_at": datetime.fromtimestamp(self.started, timezone.utc).isoformat(),
            "duration_s": round(time.time() - self.started, 6),
        }
        path = self.out_dir / "manifests" / f"{self.command}-{self.manifest_id}.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _stable_arg(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_stable_arg(x) for x in v]
    return v


def _strip_paths(args: dict) -> dict:
    # input files enter the id through their content digests, not their names
    return {k: v for k, v in args.items() if k not in {"inputs", "matrix", "model", "test",
                                                       "filter_list", "compare", "reports"}}


def verify_manifest(path) -> dict:
    """Load a manifest and check every listed output still has its recorded digest."""
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    for out, digest in manifest["outputs"].items():
        if sha256_file(out) != digest:
            raise VocabularyDigestMismatch(f"{out} no longer matches manifest {manifest['manifest_id']}")
    return manifest


# --- shared helpers ------------------------------------------------------------

def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _parse_split(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad split {text!r}") from exc
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("split needs three comma-separated fractions")
    return parts


def _parse_param(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _tagged_path(text: str) -> tuple[str, Path]:
    if "=" in text and not Path(text).exists():
        tag, p = text.split("=", 1)
        return tag, Path(p)
    p = Path(text)
    return _stem(p), p


def _stem(p: Path) -> str:
    name = p.name
    for suffix in (".jsonl", ".json", ".bfm", ".txt"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return name


def _load_filters(run: Run, paths) -> "object":
    texts = []
    for p in paths:
        run.add_input(p)
        texts.append(Path(p).read_text(encoding="utf-8"))
    fs = parse_filter_list("\n".join(texts))
    if not fs.rules:
        raise InvalidArgument("filter lists contain no applicable network rules")
    return fs


def _shape_dataset(ds: Dataset, args) -> Dataset:
    """Apply --header-source and --exclude-host-substring."""
    if getattr(args, "header_source", None):
        ds = ds.select_direction(Direction.parse(args.header_source))
    if getattr(args, "exclude_host_substring", None):
        ds = filter_hosts(ds, args.exclude_host_substring)
    return ds


def _load_input_dataset(run: Run, path) -> Dataset:
    run.add_input(path)
    return load_dataset(path)


def _vocab_params(args) -> VocabParams:
    return VocabParams(min_presence_rate=args.min_presence_rate, w_dl=args.w_dl,
                       w_h=round(1.0 - args.w_dl, 12), name_threshold=args.name_threshold,
                       value_threshold=args.value_threshold)


def _model_params(args) -> tuple[str, dict]:
    kind = args.kind
    params: dict = {}
    if args.preset:
        preset_kind, preset_params = PRESETS[args.preset]
        if kind and kind != preset_kind:
            raise InvalidArgument(f"preset {args.preset} is a {preset_kind} profile, not {kind}")
        kind = preset_kind
        params.update(preset_params)
    if not kind:
        raise InvalidArgument("either --kind or --preset is required")
    params.update(dict(args.param or []))
    return kind, params


def _write_json(run: Run, path: Path, body: dict) -> None:
    body = dict(body)
    body["manifest"] = run.manifest_id
    path.write_text(json.dumps(jsonable(body), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    run.wrote(path)


def _model_summary(model) -> dict:
    base = getattr(model, "base", model)
    return {"kind": base.kind, "params": base.params, "seed": base.seed,
            "calibrated": base is not model, "vocabulary_digest": model.vocabulary_digest}


# --- subcommands ---------------------------------------------------------------

def cmd_ingest(args, run: Run) -> int:
    parts = []
    for p in args.inputs:
        run.add_input(p)
        parts.append(ingest_capture(p, format=args.format, browser_tag=args.browser_tag,
                                    crawl_date=args.crawl_date))
    ds = _shape_dataset(merge_datasets(parts) if len(parts) > 1 else parts[0], args)
    if args.filter_list:
        ds = label_dataset(ds, _load_filters(run, args.filter_list), args.honor_exceptions,
                           force=True)
    ds = _stamp(ds, run)
    out = run.path("datasets", f"{args.name or _stem(Path(args.inputs[0]))}.jsonl")
    persist_dataset(ds, out)
    run.wrote(out)
    print(f"{out}: {len(ds)} records")
    return 0


def _stamp(ds: Dataset, run: Run) -> Dataset:
    return Dataset(ds.records, ds.provenance.with_extra(manifest=run.manifest_id), ds.label_map)


def cmd_label(args, run: Run) -> int:
    ds = _load_input_dataset(run, args.inputs)
    fs = _load_filters(run, args.filter_list)
    ds = _stamp(label_dataset(ds, fs, args.honor_exceptions, force=args.force), run)
    out = run.path("datasets", f"{args.name or _stem(Path(args.inputs))}.labeled.jsonl")
    persist_dataset(ds, out)
    run.wrote(out)
    y = ds.label_vector()
    print(f"{out}: T={int(y.sum())} NT={int(len(y) - y.sum())} "
          f"(rules={len(fs.rules)}, skipped={fs.diagnostics.total_skipped})")
    return 0


def cmd_profile(args, run: Run) -> int:
    ds = _shape_dataset(_load_input_dataset(run, args.inputs), args)
    others = {}
    if args.compare:
        others[_stem(Path(args.inputs))] = ds
    for text in args.compare or []:
        tag, p = _tagged_path(text)
        others[tag] = _shape_dataset(_load_input_dataset(run, p), args)
    rep = profile_dataset(ds, args.value_summary or (), others or None)
    out = run.path("reports", f"{args.name or _stem(Path(args.inputs))}.profile.json")
    _write_json(run, out, {"kind": "profile", "dataset_digest": ds.digest(),
                           "profile": rep.to_json()})
    print(json.dumps(jsonable(rep.responses_per_label), sort_keys=True))
    return 0


def cmd_prepare(args, run: Run) -> int:
    ds = _shape_dataset(_load_input_dataset(run, args.inputs), args)
    if args.filter_list:
        ds = label_dataset(ds, _load_filters(run, args.filter_list), args.honor_exceptions,
                           force=True)
    if ds.label_map is None:
        raise UnlabeledDataset("prepare needs a labeled dataset or --filter-list")
    spec = SplitSpec(args.split, args.seed)
    parts = split_dataset(ds, spec)
    vocab = build_vocabulary(parts[0], _vocab_params(args))
    name = args.name or _stem(Path(args.inputs))
    vpath = run.path("vocab", f"{name}.vocab.json")
    _write_json(run, vpath, {"kind": "vocabulary", "digest": vocab.digest,
                             "vocabulary": vocab.to_json()})
    for split_name, part in zip(SPLIT_NAMES, parts):
        dpath = run.path("datasets", f"{name}.{split_name}.jsonl")
        persist_dataset(_stamp(part, run), dpath)
        run.wrote(dpath)
        if len(part) == 0:
            continue
        mat = binarize(part, vocab)
        mpath = run.path("matrices", f"{name}.{split_name}.bfm")
        save_matrix(mat, mpath, {"manifest": run.manifest_id, "split": split_name,
                                 "dataset_digest": part.digest()})
        run.wrote(mpath)
    spath = run.path("manifests", f"{name}.splits.json")
    _write_json(run, spath, {"kind": "splits", "spec": spec.to_json(),
                             "record_ids": split_manifest(ds, parts)})
    print(f"{vpath}: d={vocab.dim} digest={vocab.digest[:12]}")
    return 0


def cmd_train(args, run: Run) -> int:
    run.add_input(args.matrix)
    mat = load_matrix(args.matrix)
    kind, params = _model_params(args)
    model = train_classifier(kind, mat, params, seed=args.seed, threads=args.threads)
    out = run.path("models", f"{args.name or args.preset or kind}.model.json")
    save_model(model, out, {"manifest": run.manifest_id})
    run.wrote(out)
    print(f"{out}: kind={model.kind} vocab={model.vocabulary_digest[:12]}")
    return 0


def cmd_calibrate(args, run: Run) -> int:
    run.add_input(args.model)
    run.add_input(args.matrix)
    model = load_model(args.model)
    cal = calibrate_isotonic(model, load_matrix(args.matrix))
    out = run.path("models", f"{args.name or _stem(Path(args.model)).removesuffix('.model')}"
                             f".calibrated.model.json")
    save_model(cal, out, {"manifest": run.manifest_id})
    run.wrote(out)
    print(f"{out}: {len(cal.mapping.thresholds)} steps")
    return 0


def _report_name(args, default: str) -> str:
    return args.name or default


def cmd_evaluate(args, run: Run) -> int:
    run.add_input(args.model)
    model = load_model(args.model)
    reports = {}
    for text in args.matrix:
        tag, p = _tagged_path(text)
        run.add_input(p)
        mat = load_matrix(p)
        mat.expect_vocabulary(model.vocabulary_digest)
        probs = predict_proba(model, mat)
        rep = compute_metrics(mat.labels, probs, args.threshold, with_ci=args.ci,
                              seed=args.seed, threads=args.threads)
        rep.tag = tag
        rep.extra = {"vocabulary_digest": mat.vocabulary_digest}
        reports[tag] = rep
        if args.plot_data:
            for f in write_plot_data(mat.labels, probs, run.path("reports", "plots"),
                                     prefix=f"{_report_name(args, 'evaluate')}.{tag}."):
                run.wrote(f)
    return _emit_reports(args, run, "evaluate", model, reports)


def cmd_cross_eval(args, run: Run) -> int:
    run.add_input(args.model)
    model = load_model(args.model)
    tests = {}
    for text in args.test:
        tag, p = _tagged_path(text)
        tests[tag] = _shape_dataset(_load_input_dataset(run, p), args)
    reports = cross_evaluate(model, tests, args.threshold, with_ci=args.ci, seed=args.seed,
                             threads=args.threads)
    return _emit_reports(args, run, "cross-eval", model, reports)


def _emit_reports(args, run: Run, kind: str, model, reports: dict[str, MetricsReport]) -> int:
    out = run.path("reports", f"{_report_name(args, kind)}.{kind}.json")
    _write_json(run, out, {"kind": kind, "model": _model_summary(model),
                           "vocabulary_digest": model.vocabulary_digest,
                           "reports": {t: r.to_json() for t, r in reports.items()}})
    table = run.path("reports", f"{_report_name(args, kind)}.{kind}.txt")
    text = format_table(reports)
    table.write_text(text, encoding="utf-8")
    run.wrote(table)
    sys.stdout.write(text)
    return 0


def cmd_cv(args, run: Run) -> int:
    ds = _shape_dataset(_load_input_dataset(run, args.inputs), args)
    kind, params = _model_params(args)
    res = repeated_stratified_cv(kind, ds, params, _vocab_params(args), repeats=args.repeats,
                                 k=args.k, seed=args.seed, threshold=args.threshold,
                                 threads=args.threads)
    out = run.path("reports", f"{args.name or kind}.cv.json")
    _write_json(run, out, {"kind": "cv", "model_kind": kind, "params": params,
                           "dataset_digest": ds.digest(), "cv": res.to_json()})
    agg = res.aggregate()
    for m, v in agg.items():
        print(f"{m:18s} {v['mean']:.4f} +/- {v['std']:.4f}")
    return 0


def cmd_importance(args, run: Run) -> int:
    run.add_input(args.model)
    run.add_input(args.matrix)
    model = load_model(args.model)
    rep = compute_feature_importance(model, load_matrix(args.matrix), metric=args.metric,
                                     method=args.method, seed=args.seed, repeats=args.repeats)
    out = run.path("reports", f"{args.name or 'importance'}.{args.method}.json")
    _write_json(run, out, {"kind": "importance", "model": _model_summary(model),
                           "importance": rep.to_json()})
    for name, score in rep.top(args.top):
        print(f"{score:8.4f}  {name}")
    return 0


def cmd_report(args, run: Run) -> int:
    reports = {}
    for p in args.reports:
        run.add_input(p)
        body = json.loads(Path(p).read_text(encoding="utf-8"))
        if "reports" not in body:
            raise InvalidArgument(f"{p} holds no metric reports")
        label = body.get("model", {}).get("kind", _stem(Path(p)))
        for tag, rep in body["reports"].items():
            reports[f"{label}/{tag}"] = MetricsReport.from_json(rep)
    text = format_table(reports)
    out = run.path("reports", f"{args.name or 'summary'}.table.txt")
    out.write_text(text, encoding="utf-8")
    run.wrote(out)
    sys.stdout.write(text)
    return 0


# --- parser ----------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, seed=True) -> None:
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.add_argument("--name", help="base name for written artifacts")
    p.add_argument("--threads", type=int, default=_default_threads())
    if seed:
        p.add_argument("--seed", type=int, default=42)


def _shaping(p: argparse.ArgumentParser) -> None:
    p.add_argument("--header-source", choices=("response", "request"), default="response")
    p.add_argument("--exclude-host-substring", action="append", metavar="SUB")


def _filters(p: argparse.ArgumentParser, required=False) -> None:
    p.add_argument("--filter-list", action="append", type=Path, required=required)
    p.add_argument("--honor-exceptions", action="store_true")


def _vocab_flags(p: argparse.ArgumentParser) -> None:
    d = VocabParams()
    p.add_argument("--min-presence-rate", type=float, default=d.min_presence_rate)
    p.add_argument("--w-dl", type=float, default=d.w_dl,
                   help="weight of the edit-distance term; the Hamming weight is 1 - w")
    p.add_argument("--name-threshold", type=float, default=d.name_threshold)
    p.add_argument("--value-threshold", type=float, default=d.value_threshold)


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kind", choices=sorted(KINDS))
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--param", action="append", type=_parse_param, metavar="KEY=VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdrtrack",
                                     description="Header-based tracker classification pipeline")
    parser.add_argument("--version", action="version", version=f"hdrtrack {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse capture exports into a canonical dataset")
    p.add_argument("--in", dest="inputs", action="append", type=Path, required=True)
    p.add_argument("--format", choices=("tex_json", "canonical_jsonl"), default="tex_json")
    p.add_argument("--browser-tag", default="")
    p.add_argument("--crawl-date")
    _shaping(p)
    _filters(p)
    _common(p, seed=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("label", help="label records by filter-list hostname matching")
    p.add_argument("--in", dest="inputs", type=Path, required=True)
    _filters(p, required=True)
    p.add_argument("--force", action="store_true", help="relabel an already labeled dataset")
    _common(p, seed=False)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("profile", help="descriptive statistics of a labeled dataset")
    p.add_argument("--in", dest="inputs", type=Path, required=True)
    p.add_argument("--value-summary", action="append", metavar="HEADER")
    p.add_argument("--compare", action="append", metavar="TAG=PATH",
                   help="other datasets for header-set overlap counts")
    _shaping(p)
    _common(p, seed=False)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("prepare", help="split, build vocabulary, binarize")
    p.add_argument("--in", dest="inputs", type=Path, required=True)
    p.add_argument("--split", type=_parse_split, default=(0.7, 0.1, 0.2))
    _shaping(p)
    _filters(p)
    _vocab_flags(p)
    _common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="fit a classifier on a binary matrix")
    p.add_argument("--matrix", type=Path, required=True)
    _model_flags(p)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="fit isotonic calibration on a held-out matrix")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--matrix", type=Path, required=True)
    _common(p, seed=False)
    p.set_defaults(func=cmd_calibrate)

    for name, func, help_ in (("evaluate", cmd_evaluate, "score a model on prepared matrices"),
                              ("cross-eval", cmd_cross_eval,
                               "score a model on raw datasets using its frozen vocabulary")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--model", type=Path, required=True)
        if name == "evaluate":
            p.add_argument("--matrix", action="append", required=True, metavar="[TAG=]PATH")
            p.add_argument("--plot-data", action="store_true",
                           help="also write PR, ROC and reliability CSVs")
        else:
            p.add_argument("--test", action="append", required=True, metavar="[TAG=]PATH")
            _shaping(p)
        p.add_argument("--threshold", type=float, default=0.5)
        p.add_argument("--ci", action="store_true", help="bootstrap 95%% intervals")
        _common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("cv", help="repeated stratified cross-validation")
    p.add_argument("--in", dest="inputs", type=Path, required=True)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--threshold", type=float, default=0.5)
    _model_flags(p)
    _shaping(p)
    _vocab_flags(p)
    _common(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("importance", help="impurity or permutation feature importance")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--matrix", type=Path, required=True)
    p.add_argument("--method", choices=("impurity", "permutation"), default="permutation")
    p.add_argument("--metric", default="f1")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--top", type=int, default=10)
    _common(p)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("report", help="tabulate saved metric reports")
    p.add_argument("reports", nargs="+", type=Path)
    _common(p, seed=False)
    p.set_defaults(func=cmd_report)
    return parser


def _one_line_warning(message, category, filename, lineno, file=None, line=None):
    sys.stderr.write(f"warning: {category.__name__}: {str(message).splitlines()[0]}\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    old = warnings.showwarning
    warnings.showwarning = _one_line_warning
    try:
        run = Run(args.command, args)
        code = args.func(args, run)
        run.finish()
        return code
    except (HdrTrackError, ValueError, OSError, KeyError) as exc:
        msg = " ".join(str(exc).split()) or "failed"
        sys.stderr.write(f"error: {type(exc).__name__}: {msg}\n")
        return 1
    finally:
        warnings.showwarning = old


if __name__ == "__main__":
    sys.exit(main())
