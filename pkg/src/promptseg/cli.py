"""Command-line entry point: infer, train, distill, eval, profile, synth."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ModelConfig, full_config, toy_config
from .dataio import list_cases, load_checkpoint, read_case_npz, read_npz, write_case_npz, write_npz
from .errors import ContractError, DataError, NumericError, PromptSegError, ValidationError
from .evaluation import evaluate_dataset, score_case
from .inference import MODES, predict_case
from .metrics import DEFAULT_NSD_TOL
from .model import SegModel
from .profile import profile_model
from .synthetic import synthetic_dataset
from .train import TrainConfig, distill_stage, finetune_stage, teacher_embeddings

logger = logging.getLogger("promptseg")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _model_config(spec) -> ModelConfig:
    """``toy``, ``full``, a dict, or a path to a JSON document."""
    if spec is None or spec == "full":
        return full_config()
    if spec == "toy":
        return toy_config()
    if isinstance(spec, dict):
        return ModelConfig.from_dict(spec)
    return ModelConfig.from_json(Path(spec).read_text())


def _load_cases(data: str):
    if data.startswith("synthetic:"):
        rest = data.split(":", 1)[1]
        count, _, seed = rest.partition(":")
        return synthetic_dataset(int(count), int(seed or 0))
    paths = list_cases(data)
    if not paths:
        raise ContractError(f"no .npz cases in {data}")
    return [read_case_npz(p) for p in paths]


def _read_train_config(path, stage):
    """Split a JSON document into TrainConfig fields plus optional model/val/init entries."""
    doc = json.loads(Path(path).read_text()) if path else {}
    extra = {k: doc.pop(k) for k in ("model", "val", "init") if k in doc}
    doc.setdefault("stage", stage)
    try:
        return TrainConfig(**doc), extra
    except TypeError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def cmd_infer(args):
    model = load_checkpoint(args.model)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for i, path in enumerate(list_cases(args.input)):
        case = read_case_npz(path)
        segs = predict_case(model, case, mode=args.mode, seed=args.seed + i)
        write_npz(out / path.name, {"segs": segs})
        line = f"{path.name}: {int((segs > 0).sum())} foreground pixels"
        if case.gts is not None and len(case.boxes):
            d, n = score_case(case, segs, args.nsd_tol)
            line += f"  DSC {d:.4f}  NSD {n:.4f}"
        print(line)
    return EXIT_OK


def cmd_train(args):
    cfg, extra = _read_train_config(args.config, "finetune")
    if extra.get("init"):
        model = load_checkpoint(extra["init"])
    else:
        model = SegModel(_model_config(extra.get("model")), seed=cfg.seed)
    cases = _load_cases(args.data)
    val = _load_cases(extra["val"]) if extra.get("val") else None
    res = finetune_stage(model, cases, cfg, val_set=val, checkpoint_path=args.out)
    print(f"final loss {res.losses[-1]:.4f}" if res.losses else "no steps run")
    for row in res.val_history:
        print(f"step {row['step']}: val dsc {row['dsc']:.4f} lr {row['lr']:.2e}")
    return EXIT_OK


def cmd_distill(args):
    cfg, extra = _read_train_config(args.config, "distill")
    model = SegModel(_model_config(extra.get("model")), seed=cfg.seed)
    cases = _load_cases(args.data)
    if args.teacher.startswith("random:"):
        teacher = SegModel(model.cfg, seed=int(args.teacher.split(":", 1)[1]))
        store = teacher_embeddings(teacher, cases)
    else:
        store = {}
        for path in sorted(Path(args.teacher).glob("*.npz")):
            arrays, _ = read_npz(path)
            if "embedding" not in arrays:
                raise DataError(f"{path}: missing 'embedding' entry")
            store[path.stem] = arrays["embedding"]
    res = distill_stage(model, store, cases, cfg, checkpoint_path=args.out)
    if res.losses:
        print(f"L1 {res.losses[0]:.4f} -> {res.losses[-1]:.4f} over {len(res.losses)} steps")
    return EXIT_OK


def cmd_eval(args):
    model = load_checkpoint(args.model)
    cases = _load_cases(args.data)
    report = evaluate_dataset(model, cases, tol=args.nsd_tol, mode=args.mode, seed=args.seed)
    report.write_csv(args.report)
    report.write_json(Path(args.report).with_suffix(".json"))
    s = report.summary()
    print(f"{s['cases']} cases  DSC {s['mean_dsc']:.4f}  NSD {s['mean_nsd']:.4f}  "
          f"{s['mean_seconds']:.2f} s/case")
    return EXIT_OK


def cmd_profile(args):
    print(profile_model(_model_config(args.config)).report())
    return EXIT_OK


def cmd_synth(args):
    out = Path(args.out)
    for case in synthetic_dataset(args.count, args.seed):
        write_case_npz(out / f"{case.case_id}.npz", case)
    print(f"wrote {args.count} cases to {out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="promptseg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("infer", help="segment every case in a directory")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--mode", choices=MODES, default=MODES[-1])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--nsd-tol", type=float, default=DEFAULT_NSD_TOL,
                   help="NSD tolerance in pixels, used when cases carry gts")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("train", help="fine-tune the full model")
    s.add_argument("--config")
    s.add_argument("--data", required=True, help="directory of .npz cases or synthetic:COUNT[:SEED]")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("distill", help="distil the image encoder from stored embeddings")
    s.add_argument("--teacher", required=True, help="directory of <case_id>.npz embeddings or random:SEED")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_distill)

    s = sub.add_parser("eval", help="DSC/NSD report for a checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--mode", choices=MODES, default=MODES[-1])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--nsd-tol", type=float, default=DEFAULT_NSD_TOL)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("profile", help="parameter and FLOP counts against the reported budgets")
    s.add_argument("--config", default="full", help="toy, full or a model JSON file")
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("synth", help="write synthetic cases")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PromptSegError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
