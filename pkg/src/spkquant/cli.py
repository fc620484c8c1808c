"""Command line: gen-data, init-model, calibrate, sweep, select, eval, report.

File formats:

* features: ``<dir>/spk<k>/utt<j>.feat`` (FEAT, see ``spkquant.data``)
* trials: text lines ``<0|1> <enroll_id> <test_id>``
* model: QSVM (see ``spkquant.modelfile``)
* calibration stats: JSON object, layer or tensor name ->
  {min, max, mean, std, m2, count[, hist]}
* reports and quant configs: JSON; ``report`` renders them as CSV or Markdown
"""
import argparse
import os
import sys
import time
from dataclasses import replace

from . import data as D
from .calibration import Observer, run_calibration
from .model import LAYER_NAMES, ModelConfig, init_model
from .modelfile import load_model, save_model
from .report import render
from .sensitivity import (SelectionPolicy, SensitivityReport, comparison_report, dump_json,
                          evaluate_config, load_json, quant_config_dict, read_quant_config,
                          select, sweep)

DATASET_META = "dataset.json"


class UsageError(Exception):
    pass


def _need_file(path, flag):
    if path is None or not os.path.isfile(path):
        raise UsageError(f"{flag}: file not found: {path}")
    return path


def _need_dir(path, flag):
    if path is None or not os.path.isdir(path):
        raise UsageError(f"{flag}: directory not found: {path}")
    return path


def _observer(text):
    try:
        return Observer.parse(text)
    except ValueError as e:
        raise UsageError(f"--observer: {e}")


def _float_model(path):
    config, tensors = load_model(path)
    if any(not hasattr(v, "dtype") for v in tensors.values()):
        raise UsageError(f"--model: {path} is already quantized; pass the float model")
    return config, tensors


def _dataset_meta(features_dir):
    path = os.path.join(os.path.dirname(os.path.abspath(features_dir)), DATASET_META)
    return load_json(path) if os.path.isfile(path) else None


def _run_metadata(config, args):
    meta = {"model_seed": config.seed}
    spec = _dataset_meta(args.features)
    if spec is not None:
        meta["dataset"] = spec
    # wall-clock time would break byte-identical reruns; opt in via SOURCE_DATE_EPOCH
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        meta["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(int(epoch)))
    return meta


def _calib_set(path, limit):
    fs = D.load_features(path, split="calibration")
    if limit is not None:
        if limit < 1:
            raise UsageError("--utterances must be >= 1")
        fs = fs.subset(limit)
    return fs


def cmd_gen_data(args):
    spec = D.SpeakerDatasetSpec(args.n_speakers, args.utts, args.frames, args.feat_dim,
                                args.spread, args.noise, args.smoothing, args.seed)
    eval_fs = D.generate(spec, "evaluation")
    trials = D.build_trials(eval_fs, args.n_target, args.n_nontarget, args.trial_seed)
    calib_fs = D.generate(spec, "calibration")
    os.makedirs(args.out, exist_ok=True)
    D.save_features(eval_fs, os.path.join(args.out, "evaluation"))
    D.save_features(calib_fs, os.path.join(args.out, "calibration"))
    D.write_trials(trials, os.path.join(args.out, "trials.txt"))
    dump_json(spec.to_dict(), os.path.join(args.out, DATASET_META))
    print(f"wrote {len(eval_fs)} evaluation + {len(calib_fs)} calibration utterances, "
          f"{len(trials)} trials to {args.out}")


def cmd_init_model(args):
    overrides = {k: getattr(args, k) for k in ("feat_dim", "channels", "res2_scale", "kernel_size",
                                               "se_bottleneck", "attn_bottleneck", "emb_dim")
                 if getattr(args, k) is not None}
    if args.dilations:
        overrides["dilations"] = tuple(int(d) for d in args.dilations.split(","))
    config = replace(ModelConfig(seed=args.seed), **overrides)
    n = save_model(args.out, config, init_model(config))
    print(f"wrote {args.out} ({n} bytes)")


def cmd_calibrate(args):
    _need_file(args.model, "--model")
    _need_dir(args.features, "--features")
    observer = _observer(args.observer)
    config, weights = _float_model(args.model)
    stats = run_calibration(weights, config, _calib_set(args.features, args.utterances),
                            LAYER_NAMES, observer)
    dump_json({name: s.to_dict() for name, s in stats.items()}, args.out)
    print(f"wrote {len(stats)} stats entries to {args.out}")


def _eval_inputs(args):
    _need_file(args.model, "--model")
    _need_dir(args.calib_features, "--calib-features")
    _need_dir(args.features, "--features")
    _need_file(args.trials, "--trials")
    observer = _observer(args.observer)
    config, weights = _float_model(args.model)
    calib = _calib_set(args.calib_features, args.utterances)
    eval_fs = D.load_features(args.features, split="evaluation")
    trials = D.read_trials(args.trials)
    return observer, config, weights, calib, eval_fs, trials


def cmd_sweep(args):
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    observer, config, weights, calib, eval_fs, trials = _eval_inputs(args)
    rep = sweep(weights, config, calib, eval_fs, trials, observer, jobs=args.jobs,
                metadata=_run_metadata(config, args))
    dump_json(rep.to_dict(), args.out)
    sys.stdout.write(render(rep.to_dict(), "md"))


def cmd_select(args):
    _need_file(args.report, "--report")
    try:
        policy = SelectionPolicy.parse(args.policy)
    except ValueError as e:
        raise UsageError(f"--policy: {e}")
    rep = SensitivityReport.from_dict(load_json(args.report))
    chosen = select(rep, policy)
    cfg = quant_config_dict(chosen)
    cfg["policy"] = str(policy)
    cfg["excluded"] = [l for l in LAYER_NAMES if l not in chosen]
    if args.out:
        dump_json(cfg, args.out)
    print("quantize: " + (", ".join(chosen) or "(none)"))
    print("keep float: " + (", ".join(cfg["excluded"]) or "(none)"))


def cmd_eval(args):
    _need_file(args.config, "--config")
    quantized = read_quant_config(args.config)
    observer, config, weights, calib, eval_fs, trials = _eval_inputs(args)
    baseline = evaluate_config(weights, config, (), calib, eval_fs, trials, observer)
    proposed = evaluate_config(weights, config, quantized, calib, eval_fs, trials, observer)
    meta = _run_metadata(config, args)
    meta["observer"] = str(observer)
    rep = comparison_report(baseline, proposed, quantized, meta)
    if args.out:
        dump_json(rep, args.out)
    if args.save_model:
        save_model(args.save_model, config, weights, quantized)
    sys.stdout.write(render(rep, "md"))


def cmd_report(args):
    _need_file(args.report, "--report")
    text = render(load_json(args.report), args.format)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def build_parser():
    p = argparse.ArgumentParser(prog="spkquant", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate synthetic calibration/evaluation features and trials")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--n-speakers", type=int, default=20)
    g.add_argument("--utts", type=int, default=10)
    g.add_argument("--frames", type=int, default=100)
    g.add_argument("--feat-dim", type=int, default=16)
    g.add_argument("--spread", type=float, default=1.0)
    g.add_argument("--noise", type=float, default=0.3)
    g.add_argument("--smoothing", type=int, default=5)
    g.add_argument("--n-target", type=int, default=400)
    g.add_argument("--n-nontarget", type=int, default=400)
    g.add_argument("--trial-seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    m = sub.add_parser("init-model", help="write a seeded float model")
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=0)
    for name in ("feat-dim", "channels", "res2-scale", "kernel-size", "se-bottleneck",
                 "attn-bottleneck", "emb-dim"):
        m.add_argument(f"--{name}", type=int)
    m.add_argument("--dilations", help="comma separated, e.g. 2,3,4")
    m.set_defaults(func=cmd_init_model)

    def observer_flags(sp):
        sp.add_argument("--observer", default="minmax", help="minmax or percentile:<p>")
        sp.add_argument("--utterances", type=int, help="number of calibration utterances to use")

    c = sub.add_parser("calibrate", help="collect per-layer calibration stats")
    c.add_argument("--model", required=True)
    c.add_argument("--features", required=True, help="calibration feature directory")
    c.add_argument("--out", required=True)
    observer_flags(c)
    c.set_defaults(func=cmd_calibrate)

    def eval_flags(sp):
        sp.add_argument("--model", required=True)
        sp.add_argument("--calib-features", required=True)
        sp.add_argument("--features", required=True, help="evaluation feature directory")
        sp.add_argument("--trials", required=True)
        observer_flags(sp)

    s = sub.add_parser("sweep", help="quantize each layer alone and report EER and size")
    eval_flags(s)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    sel = sub.add_parser("select", help="choose layers to quantize from a sweep report")
    sel.add_argument("--report", required=True)
    sel.add_argument("--policy", default="threshold:0.05",
                     help="threshold:t | topk:k | budget:e (t, e in EER percentage points)")
    sel.add_argument("--out")
    sel.set_defaults(func=cmd_select)

    e = sub.add_parser("eval", help="evaluate a quant config against the float baseline")
    eval_flags(e)
    e.add_argument("--config", required=True, help="quant config from `select`")
    e.add_argument("--out")
    e.add_argument("--save-model", help="also write the mixed-precision QSVM model here")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="render a stored report")
    r.add_argument("--report", required=True)
    r.add_argument("--format", choices=("csv", "md", "json-like", "json"), default="md")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (UsageError, ValueError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"spkquant {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
