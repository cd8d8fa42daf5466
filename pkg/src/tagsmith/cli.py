"""Command-line client for the tagging engine.

The CLI holds no logic of its own: every subcommand parses arguments,
builds a pipeline from the config file and state directory, and delegates.
State (tag repository + graph snapshot) lives in ``state_dir`` so separate
invocations compose: ingest-tags, then tag, then serve.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .calibrate import export_confidence_dataset, write_confidence_records
from .config import load_config
from .core import Provenance, content_from_dict
from .errors import InvalidRecord, TagsmithError
from .evalkit import evaluate, load_judged_results, load_recall_judgments, relative_improvement
from .genkit import export_sft, write_sft_records
from .pipeline import Pipeline, read_content_records
from .taggraph import CandidateEntry, CandidateSet, TagGraph


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagsmith", description="Graph-assisted content tagging engine"
    )
    parser.add_argument("--config", help="path to the key = value config file")
    parser.add_argument("--state", help="state directory (overrides config state_dir)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-tags", help="load the tag vocabulary into the state")
    p.add_argument("file", help="tags as line-delimited JSON")

    p = sub.add_parser("ingest-contents", help="insert contents as graph context")
    p.add_argument("file", help="contents as line-delimited JSON")

    p = sub.add_parser("tag", help="tag a batch of contents")
    p.add_argument("file", help="contents as line-delimited JSON")
    p.add_argument("--out", required=True, help="report output path")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings")

    p = sub.add_parser("eval", help="compute metrics over a judged-results file")
    p.add_argument("file", help="judged results as line-delimited JSON")
    p.add_argument("--metrics", required=True, help="comma-separated metric names")
    p.add_argument("--ri", help="metric pairing file for relative improvement")
    p.add_argument("--out", help="write the report here instead of stdout")

    p = sub.add_parser("export-sft", help="export fine-tuning records")
    p.add_argument("file", help='examples: {"content", "candidates", "gold"} JSONL')
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-confidence", help="export confidence training records")
    p.add_argument("file", help='examples: {"content", "tag", "label"} JSONL')
    p.add_argument("--out", required=True)

    p = sub.add_parser("snapshot", help="save or load the graph snapshot")
    p.add_argument("action", choices=("save", "load"))
    p.add_argument("file")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")

    return parser


def _load_pipeline(args: argparse.Namespace) -> Pipeline:
    config = load_config(args.config)
    if args.state:
        config.state_dir = args.state
    return Pipeline.from_state(config)


def cmd_ingest_tags(args: argparse.Namespace) -> int:
    pipeline = _load_pipeline(args)
    count = pipeline.ingest_repository(args.file)
    pipeline.save_state()
    print(f"ingested {count} tags into {pipeline.config.state_dir}")
    return 0


def cmd_ingest_contents(args: argparse.Namespace) -> int:
    pipeline = _load_pipeline(args)
    count = pipeline.ingest_contents(args.file)
    pipeline.save_state()
    print(f"ingested {count} contents into {pipeline.config.state_dir}")
    return 0


def cmd_tag(args: argparse.Namespace) -> int:
    pipeline = _load_pipeline(args)
    contents = read_content_records(args.file)
    snapshot = Path(pipeline.config.state_dir) / "graph.jsonl"
    snapshot.parent.mkdir(parents=True, exist_ok=True)
    report = pipeline.run_batch(
        contents,
        report_path=args.out,
        snapshot_path=snapshot,
        include_timings=args.timings,
    )
    counters = report.counters()
    print(
        f"tagged {counters['tagged']}/{counters['contents']} contents "
        f"({counters['failed']} failed, {counters['no_candidates']} without candidates)"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    metrics = [m for m in args.metrics.split(",") if m.strip()]
    recall_metrics = [m for m in metrics if m.startswith("hr@") or m == "num_right"]
    result_metrics = [m for m in metrics if m not in recall_metrics]
    results = load_judged_results(args.file) if result_metrics else None
    judgments = load_recall_judgments(args.file) if recall_metrics else None
    report = evaluate(results, metrics, judgments)
    if args.ri:
        pairs = json.loads(Path(args.ri).read_text(encoding="utf-8"))
        ours = [float(v["ours"]) for v in pairs.values()]
        baseline = [float(v["baseline"]) for v in pairs.values()]
        report["metrics"]["ri"] = relative_improvement(ours, baseline)
    text = json.dumps(report, ensure_ascii=False, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _read_sft_examples(pipeline: Pipeline, path: str):
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidRecord(f"examples line {lineno}: invalid JSON ({exc.msg})") from None
        content = content_from_dict(obj.get("content", {}), label="examples", lineno=lineno)
        candidate_ids = obj.get("candidates", ())
        entries = tuple(
            CandidateEntry(tag=t, score=0.0, provenance=Provenance.C2T)
            for t in sorted(candidate_ids)
        )
        for entry in entries:
            pipeline.repo.get(entry.tag)
        yield content, CandidateSet(content=content.id, entries=entries), tuple(obj.get("gold", ()))


def cmd_export_sft(args: argparse.Namespace) -> int:
    pipeline = _load_pipeline(args)
    records = export_sft(_read_sft_examples(pipeline, args.file), pipeline.repo)
    count = write_sft_records(records, args.out)
    print(f"wrote {count} fine-tuning records to {args.out}")
    return 0


def _read_confidence_examples(pipeline: Pipeline, path: str):
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidRecord(f"examples line {lineno}: invalid JSON ({exc.msg})") from None
        content = content_from_dict(obj.get("content", {}), label="examples", lineno=lineno)
        tag = pipeline.repo.get(obj.get("tag", ""))
        yield content, tag, obj.get("label", "")


def cmd_export_confidence(args: argparse.Namespace) -> int:
    pipeline = _load_pipeline(args)
    records = export_confidence_dataset(_read_confidence_examples(pipeline, args.file))
    count = write_confidence_records(records, args.out)
    print(f"wrote {count} confidence records to {args.out}")
    return 0


def cmd_snapshot(args: argparse.Namespace) -> int:
    pipeline = _load_pipeline(args)
    if args.action == "save":
        pipeline.graph.save_snapshot(args.file)
        print(f"saved snapshot to {args.file}")
    else:
        pipeline.graph = TagGraph.load_snapshot(
            args.file, pipeline.encoder, pipeline.config.graph
        )
        pipeline.save_state()
        print(f"loaded snapshot from {args.file} into {pipeline.config.state_dir}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    pipeline = _load_pipeline(args)
    uvicorn.run(create_app(pipeline), host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "ingest-tags": cmd_ingest_tags,
    "ingest-contents": cmd_ingest_contents,
    "tag": cmd_tag,
    "eval": cmd_eval,
    "export-sft": cmd_export_sft,
    "export-confidence": cmd_export_confidence,
    "snapshot": cmd_snapshot,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except TagsmithError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
