import logging
from pathlib import Path
from typing import Dict

from sleepevents.models.configs import RunConfig
from sleepevents.models.models import Annotation
from sleepevents.services.evaluation import evaluate
from sleepevents.services.record_io import read_annotations, read_detections

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("evaluate", help="By-event metrics of detections against annotations")
    parser.add_argument("--detections", required=True, help="Detections file (JSON lines)")
    parser.add_argument("--annotations", required=True, nargs="+", help="Annotation files or directories")
    parser.add_argument("--out", required=True, help="Report directory")
    parser.set_defaults(func=run)


def _collect_annotations(paths) -> Dict[str, Annotation]:
    annotations: Dict[str, Annotation] = {}
    for path in map(Path, paths):
        files = sorted(path.glob("*.jsonl")) if path.is_dir() else [path]
        for file in files:
            found = read_annotations(file)
            if not found:
                found = {file.stem: Annotation(record_id=file.stem)}
            annotations.update(found)
    return annotations


def run(args, run_cfg: RunConfig) -> None:
    annotations = _collect_annotations(args.annotations)
    detections = read_detections(args.detections)
    report = evaluate(detections, annotations, run_cfg.evaluation, threads=run_cfg.threads)
    out = Path(args.out)
    for path in (
        report.write_csv(out / "metrics.csv"),
        report.write_summary(out / "summary.json"),
        report.write_f1_table(out / "f1_vs_delta.csv"),
    ):
        print(path)
