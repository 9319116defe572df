"""Command-line entry point: gen-data, train, eval, infer, gradcheck, report."""

import argparse
import json
import logging
import sys

log = logging.getLogger("impeval")


def _mix(text):
    try:
        parts = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--mix expects four comma-separated fractions, got {text!r}")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("--mix expects exactly four fractions: clean,local,global,mixed")
    return parts


def cmd_gen_data(args):
    from .corpus import GenConfig, generate_corpus, write_dataset
    cfg = GenConfig(mix=args.mix) if args.mix else GenConfig()
    samples = generate_corpus(args.n, args.seed, cfg)
    write_dataset(samples, args.out)
    clean = sum(1 for s in samples if not s.defects)
    print(f"wrote {len(samples)} samples ({clean} defect-free) to {args.out}")
    return 0


def cmd_train(args):
    from .checkpoint import save_checkpoint
    from .config import TrainConfig, load_config
    from .corpus import read_dataset
    from .train import JsonlLog, train

    cfg = load_config(args.config) if args.config else TrainConfig()
    samples = read_dataset(args.data)
    sink = JsonlLog(args.log or args.out + ".log.jsonl")

    def record(rec):
        sink(rec)
        log.info("step %d loss %.6f", rec["step"], rec["loss"])
    try:
        model, losses = train(cfg, samples, log=record)
    finally:
        sink.close()
    save_checkpoint(args.out, model)
    print(f"trained {cfg.steps} steps on {len(samples)} samples; final loss "
          f"{losses[-1] if losses else float('nan'):.6f}; checkpoint {args.out}")
    return 0


def cmd_eval(args):
    from .harness import evaluate_checkpoint
    doc = evaluate_checkpoint(args.ckpt, args.data, args.report, args.heat, args.score, args.oracle)
    m = doc["metrics"]
    print(f"evaluated {m['count_all']} samples (GT=0: {m['count_gt0']}, GT>0: {m['count_gt_pos']}); "
          f"report {args.report}")
    return 0


def cmd_infer(args):
    from .harness import infer_file
    result = infer_file(args.ckpt, args.image, args.out_dir)
    sys.stdout.write(result["report_text"])
    return 0


def cmd_gradcheck(args):
    from .config import load_config
    from .harness import GRADCHECK_TOL, gradcheck
    cfg = load_config(args.config) if args.config else None
    worst, errors, seconds = gradcheck(cfg)
    name = max(errors, key=errors.get)
    ok = worst <= GRADCHECK_TOL
    print(f"gradcheck: worst relative error {worst:.3e} ({name}) over {len(errors)} tensors "
          f"in {seconds:.1f}s -> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[prefix + k] = v
    return out


def cmd_report(args):
    a_path, b_path = args.compare
    with open(a_path) as f:
        a = _flatten(json.load(f))
    with open(b_path) as f:
        b = _flatten(json.load(f))
    width = max(len(k) for k in set(a) | set(b))
    print(f"{'key':<{width}}  {'A':>14}  {'B':>14}  {'B - A':>12}")
    for k in sorted(set(a) | set(b)):
        va, vb = a.get(k), b.get(k)
        num = all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (va, vb))
        delta = f"{vb - va:+12.6f}" if num else ""
        fa = f"{va:14.6f}" if isinstance(va, float) else f"{str(va)[:14]:>14}"
        fb = f"{vb:14.6f}" if isinstance(vb, float) else f"{str(vb)[:14]:>14}"
        print(f"{k:<{width}}  {fa}  {fb}  {delta}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="impeval", description="Implausibility heatmap/score evaluator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic defect corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--mix", type=_mix, help="clean,local,global,mixed fractions")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="key = value config file (defaults if omitted)")
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="JSONL loss log (default: <out>.log.jsonl)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--heat", default="fused", choices=("fused", "fixed", "local", "global"),
                   help="heatmap to score: fused output, fixed 0.5 fusion, or one branch")
    e.add_argument("--score", default="S", choices=("S", "S_token", "S_map"))
    e.add_argument("--oracle", action="store_true", help="replace predictions with ground truth")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="heatmap, overlay, scores and report for one PGM image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--out-dir", required=True)
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    c.add_argument("--config")
    c.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("report", help="compare two eval reports")
    r.add_argument("--compare", nargs=2, required=True, metavar="FILE")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
