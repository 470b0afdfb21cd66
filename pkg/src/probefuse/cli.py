"""Command-line entry points.

Subcommands cover the full workflow: ``synth`` and ``inject-noise`` build
benchmark banks, ``warmup`` trains supervised probes, ``pipeline`` runs the
iterative refinement loop, ``infer`` aggregates test predictions, and
``eval`` scores a posteriors file. Every artifact is deterministic (sorted
JSON keys, no timestamps) so identical invocations are byte-identical.

Exit codes: 0 success, 2 validation failure (bad inputs, files, configs),
3 numerical failure.
"""

import argparse
import dataclasses
import json
import os
import struct
import sys

from .aggregate import DSConfig
from .bank import BankError, FeatureBank, read_bank, write_bank
from .mixmatch import MixMatchConfig
from .pipeline import (PipelineConfig, PipelineState, evaluate, infer,
                       read_posteriors, run_pipeline, write_posteriors)
from .probes import (TrainConfig, ensemble_from_json, ensemble_to_json,
                     save_ensemble)
from .split import SplitConfig
from .synth import NoiseConfig, SynthConfig, gen_domains, inject_noise
from .util import NumericalError

_SECTIONS = {"split": ("split_cfg", SplitConfig),
             "mixmatch": ("mixmatch_cfg", MixMatchConfig),
             "train": ("train_cfg", TrainConfig),
             "ds": ("ds_cfg", DSConfig)}


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _build_cfg(cls, d, section):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ValueError(f"unknown key(s) in {section} config: {', '.join(unknown)}")
    return cls(**d)


def pipeline_config_from_dict(d):
    """PipelineConfig from a nested dict with split/mixmatch/train/ds sections."""
    d = dict(d)
    kwargs = {}
    for key, (attr, cls) in _SECTIONS.items():
        sub = d.pop(key, None)
        if sub is not None:
            kwargs[attr] = _build_cfg(cls, sub, key)
    allowed = ({f.name for f in dataclasses.fields(PipelineConfig)}
               - {attr for attr, _ in _SECTIONS.values()})
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ValueError(f"unknown key(s) in pipeline config: {', '.join(unknown)}")
    kwargs.update(d)
    return PipelineConfig(**kwargs)


def pipeline_config_to_dict(cfg):
    out = {"agg_train": cfg.agg_train, "agg_infer": cfg.agg_infer,
           "max_rounds": cfg.max_rounds, "stop_delta": cfg.stop_delta,
           "tap_selection": cfg.tap_selection,
           "include_original": cfg.include_original}
    for key, (attr, _) in _SECTIONS.items():
        out[key] = dataclasses.asdict(getattr(cfg, attr))
    return out


def _flag(args, name):
    return getattr(args, name, None)


def _apply_flags(cfg, args):
    if _flag(args, "agg") is not None:
        cfg.agg_infer = args.agg
    if _flag(args, "agg_train") is not None:
        cfg.agg_train = args.agg_train
    if _flag(args, "ds_maxiter") is not None:
        cfg.ds_cfg.maxiter = args.ds_maxiter
    if _flag(args, "ds_tol") is not None:
        cfg.ds_cfg.pi_tol = args.ds_tol
    if _flag(args, "gamma") is not None:
        cfg.split_cfg.gamma = args.gamma
    if _flag(args, "max_rounds") is not None:
        cfg.max_rounds = args.max_rounds
    if _flag(args, "stop_delta") is not None:
        cfg.stop_delta = args.stop_delta
    mm = [("sharpen_temp", "sharpen_temp"), ("n_augment", "n_augment"),
          ("aug_sigma_scale", "aug_sigma_scale"), ("mixup_alpha", "mixup_alpha"),
          ("lambda_u", "lambda_u"), ("rampup_fraction", "rampup_fraction"),
          ("mm_epochs", "epochs"), ("mm_batch_size", "batch_size"),
          ("mm_learning_rate", "learning_rate")]
    for arg_name, field_name in mm:
        if _flag(args, arg_name) is not None:
            setattr(cfg.mixmatch_cfg, field_name, getattr(args, arg_name))
    if _flag(args, "no_mixup"):
        cfg.mixmatch_cfg.use_mixup = False
    if _flag(args, "tap_selection") is not None:
        cfg.tap_selection = [int(tok) for tok in args.tap_selection.split(",") if tok]
    if _flag(args, "include_original"):
        cfg.include_original = True
    if _flag(args, "seed") is not None:
        cfg.train_cfg.seed = args.seed
        cfg.mixmatch_cfg.seed = args.seed
        cfg.split_cfg.seed = args.seed
    return cfg


def _pipeline_cfg(args, base_dict=None):
    if args.config is not None:
        base_dict = _load_json(args.config)
    cfg = pipeline_config_from_dict(base_dict or {})
    return _apply_flags(cfg, args)


def _write_state(state, cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "ensemble.json"), "w", encoding="utf-8") as fh:
        fh.write(ensemble_to_json(state.ensemble))
    save_ensemble(state.ensemble, os.path.join(out_dir, "ensemble.bin"))
    split_file = None
    if state.split is not None:
        split_file = "split.json"
        _dump_json(state.split.to_json_dict(), os.path.join(out_dir, split_file))
    _dump_json({"config": pipeline_config_to_dict(cfg),
                "ensemble_file": "ensemble.json",
                "ensemble_binary": "ensemble.bin",
                "history": state.history,
                "rounds": state.round,
                "split_file": split_file},
               os.path.join(out_dir, "state.json"))


def cmd_synth(args):
    cfg = _build_cfg(SynthConfig, _load_json(args.config) if args.config else {},
                     "synth")
    if args.seed is not None:
        cfg.seed = args.seed
    train_bank, test_bank, (train_true, test_true) = gen_domains(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_bank(train_bank, os.path.join(args.out, "train.fbnk"))
    write_bank(test_bank, os.path.join(args.out, "test.fbnk"))
    _dump_json({"train_true_labels": [int(v) for v in train_true],
                "test_true_labels": [int(v) for v in test_true]},
               os.path.join(args.out, "truth.json"))
    return 0


def cmd_inject_noise(args):
    bank = read_bank(args.bank)
    if bank.labels is None:
        raise BankError("bank has no labels to corrupt")
    cfg = _build_cfg(NoiseConfig, _load_json(args.config) if args.config else {},
                     "noise")
    if args.rate is not None:
        cfg.rate = args.rate
    if args.seed is not None:
        cfg.seed = args.seed
    noisy, mask = inject_noise(bank.labels, bank.n_classes, cfg)
    out_bank = FeatureBank(bank.features, bank.tap_names, noisy,
                           bank.original_preds, bank.domain_ids, bank.n_classes)
    os.makedirs(args.out, exist_ok=True)
    write_bank(out_bank, os.path.join(args.out, "noisy.fbnk"))
    _dump_json({"true_labels": [int(v) for v in bank.labels],
                "noisy_labels": [int(v) for v in noisy],
                "flip_mask": [bool(v) for v in mask]},
               os.path.join(args.out, "truth.json"))
    return 0


def cmd_warmup(args):
    cfg = _pipeline_cfg(args)
    cfg.max_rounds = 0
    state = run_pipeline(read_bank(args.bank), cfg)
    _write_state(state, cfg, args.out)
    return 0


def cmd_pipeline(args):
    cfg = _pipeline_cfg(args)
    curves = []
    state = run_pipeline(read_bank(args.bank), cfg, curve_sink=curves)
    _write_state(state, cfg, args.out)
    with open(os.path.join(args.out, "curves.jsonl"), "w", encoding="utf-8") as fh:
        for rec in curves:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return 0


def cmd_infer(args):
    sd = _load_json(args.state)
    state_dir = os.path.dirname(os.path.abspath(args.state))
    with open(os.path.join(state_dir, sd["ensemble_file"]), encoding="utf-8") as fh:
        ensemble = ensemble_from_json(fh.read())
    cfg = _pipeline_cfg(args, base_dict=sd.get("config", {}))
    state = PipelineState(sd.get("rounds", 0), ensemble, None, None,
                          sd.get("history", []))
    post, _hard = infer(state, read_bank(args.bank), cfg)
    os.makedirs(args.out, exist_ok=True)
    write_posteriors(post, os.path.join(args.out, "posteriors.fbnk-post"))
    return 0


def cmd_eval(args):
    post = read_posteriors(args.posteriors)
    truth = _load_json(args.truth) if args.truth else {}
    bank = read_bank(args.bank) if args.bank else None
    true_labels = truth.get("true_labels", truth.get("test_true_labels"))
    if true_labels is None and bank is not None and bank.labels is not None:
        true_labels = bank.labels
    if true_labels is None:
        raise ValueError("no true labels: pass --truth or a labeled --bank")
    noisy = truth.get("noisy_labels")
    mask = truth.get("flip_mask")
    if mask is not None and noisy is None:
        raise ValueError("truth file has flip_mask but no noisy_labels")
    report = evaluate(post, true_labels, noisy, mask,
                      bank.domain_ids if bank is not None else None)
    os.makedirs(args.out, exist_ok=True)
    _dump_json(report.to_json_dict(), os.path.join(args.out, "metrics.json"))
    print(json.dumps(report.to_json_dict(), sort_keys=True))
    return 0


def _add_io(sp, bank=True):
    if bank:
        sp.add_argument("--bank", required=True, help="input feature bank (FBNK1)")
    sp.add_argument("--config", help="JSON config file")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int, help="override every seed in the config")


def _add_agg(sp):
    sp.add_argument("--agg", choices=["avg", "softds", "hardds"],
                    help="inference aggregation mode")
    sp.add_argument("--ds-maxiter", type=int, dest="ds_maxiter")
    sp.add_argument("--ds-tol", type=float, dest="ds_tol")


def _add_probe_opts(sp):
    sp.add_argument("--tap-selection", dest="tap_selection",
                    help="comma-separated tap indices (default: all)")
    sp.add_argument("--include-original", action="store_true", dest="include_original",
                    help="add backbone predictions as an extra annotator")


def build_parser():
    p = argparse.ArgumentParser(
        prog="probefuse",
        description="Probe ensembles over feature banks with entropy splitting "
                    "and Dawid-Skene fusion.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a multi-domain benchmark bank pair")
    _add_io(sp, bank=False)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("inject-noise", help="flip a fraction of a bank's labels")
    _add_io(sp)
    sp.add_argument("--rate", type=float, help="fraction of labels to flip")
    sp.set_defaults(func=cmd_inject_noise)

    sp = sub.add_parser("warmup", help="train supervised probes only")
    _add_io(sp)
    _add_agg(sp)
    _add_probe_opts(sp)
    sp.set_defaults(func=cmd_warmup)

    sp = sub.add_parser("pipeline", help="warm-up plus iterative refinement")
    _add_io(sp)
    _add_agg(sp)
    _add_probe_opts(sp)
    sp.add_argument("--agg-train", choices=["avg", "softds"], dest="agg_train",
                    help="training-side aggregation mode")
    sp.add_argument("--gamma", type=float, help="unlabeled fraction for the split")
    sp.add_argument("--max-rounds", type=int, dest="max_rounds")
    sp.add_argument("--stop-delta", type=float, dest="stop_delta")
    sp.add_argument("--sharpen-temp", type=float, dest="sharpen_temp")
    sp.add_argument("--n-augment", type=int, dest="n_augment")
    sp.add_argument("--aug-sigma-scale", type=float, dest="aug_sigma_scale")
    sp.add_argument("--mixup-alpha", type=float, dest="mixup_alpha")
    sp.add_argument("--lambda-u", type=float, dest="lambda_u")
    sp.add_argument("--rampup-fraction", type=float, dest="rampup_fraction")
    sp.add_argument("--mm-epochs", type=int, dest="mm_epochs")
    sp.add_argument("--mm-batch-size", type=int, dest="mm_batch_size")
    sp.add_argument("--mm-learning-rate", type=float, dest="mm_learning_rate")
    sp.add_argument("--no-mixup", action="store_true", dest="no_mixup")
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("infer", help="aggregate ensemble predictions on a bank")
    _add_io(sp)
    _add_agg(sp)
    sp.add_argument("--state", required=True, help="state.json from warmup/pipeline")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="score a posteriors file")
    sp.add_argument("--posteriors", required=True, help="posteriors.fbnk-post file")
    sp.add_argument("--truth", help="truth.json with true/noisy labels")
    sp.add_argument("--bank", help="bank supplying labels and domain ids")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"probefuse: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, KeyError, struct.error) as exc:
        print(f"probefuse: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
