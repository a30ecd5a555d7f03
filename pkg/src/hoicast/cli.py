"""Command-line pipeline: data generation, training, sampling, evaluation,
ablation, and plot emission.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every command is
deterministic given (config, seed), and each one calls the same library
functions the tests exercise directly.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import RunConfig, load_config, toy_config
from .errors import ConfigError, HoicastError
from .hoi_data import (ContactSet, HoiSequence, HumanPose, ObjectPose,
                       generate_synthetic, load_dataset, save_dataset,
                       serialize_sequence)
from .metrics import evaluate, evaluate_model
from .model import InteractionModel, PredictionResult, sample_interaction
from .training import train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_run_config(path):
    if path is None:
        return RunConfig()
    return load_config(path)


def cmd_gen_data(args):
    config = _load_run_config(args.config)
    if args.count is not None and args.count <= 0:
        raise ConfigError("empty dataset requested (count must be >= 1)")
    count = args.count if args.count is not None else 8
    sequences = [generate_synthetic(config.data, args.seed + i) for i in range(count)]
    save_dataset(sequences, args.out)
    masks = np.concatenate([seq.contact_mask().reshape(-1) for seq in sequences])
    frames = sum(seq.total_len for seq in sequences)
    contact_frames = sum(int(seq.contact_mask().any(axis=1).sum()) for seq in sequences)
    print(f"wrote {count} sequences to {args.out}")
    print(f"contact stats: {contact_frames}/{frames} frames in contact, "
          f"mean active groups {masks.mean() * sequences[0].n_groups:.2f}")
    return 0


def cmd_train(args):
    config = _load_run_config(args.config)
    dataset = load_dataset(args.data)
    result = train(dataset, config, args.seed, args.out, resume=args.resume)
    for stage, path in sorted(result.checkpoints.items()):
        print(f"stage {stage} checkpoint: {path}")
    print(f"loss log: {result.log_path}")
    return 0


def prediction_record(gt_seq: HoiSequence, pred: PredictionResult) -> str:
    """Serialize a prediction in the dataset schema, with the two predicted
    contact trajectories attached as extra fields."""
    t_total = gt_seq.total_len
    mask = gt_seq.contact_mask()
    contacts = []
    for f in range(t_total):
        subsets = np.where(mask[f][:, None, None].astype(bool),
                           pred.contact_pred_object[f], 0.0)
        contacts.append(ContactSet(gt_seq.contacts[f].groups, subsets, mask[f]))
    pred_seq = HoiSequence(
        past_len=gt_seq.past_len,
        future_len=gt_seq.future_len,
        frame_rate=gt_seq.frame_rate,
        human_poses=[HumanPose(pred.human_positions[f], pred.human_rot6d[f])
                     for f in range(t_total)],
        object_poses=[ObjectPose(pred.object_centroid[f], pred.object_rot6d[f])
                      for f in range(t_total)],
        contacts=contacts,
        rest_cloud=gt_seq.rest_cloud,
        contact_group_indices=gt_seq.contact_group_indices,
        contact_group_sizes=gt_seq.contact_group_sizes,
        subset_indices=gt_seq.subset_indices,
    )
    record = json.loads(serialize_sequence(pred_seq))
    record["pred_contact_human"] = pred.contact_pred_human.tolist()
    record["pred_contact_object"] = pred.contact_pred_object.tolist()
    return json.dumps(record, separators=(",", ":"))


def cmd_sample(args):
    model, _ = InteractionModel.load(args.checkpoint)
    sched = model.schedule()
    dataset = load_dataset(args.data)
    with open(args.out, "w", encoding="utf-8") as fh:
        for i, seq in enumerate(dataset):
            pred = sample_interaction(model, seq, sched, args.seed * 100003 + i)
            fh.write(prediction_record(seq, pred) + "\n")
    print(f"wrote {len(dataset)} predictions to {args.out}")
    return 0


def cmd_eval(args):
    dataset = load_dataset(args.data)
    report = evaluate(args.checkpoint, dataset, args.seed,
                      samples_per_sequence=args.samples)
    print(report.to_table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
        print(f"report written to {args.out}")
    return 0


ABLATION_VARIANTS = ("joint", "contact", "consistency", "full")


def _variant_config(base: RunConfig, variant: str) -> RunConfig:
    model = base.model
    training = base.training
    if variant == "joint":
        model = dataclasses.replace(model, decoupled=False, use_contacts=False,
                                    use_him=False)
        training = dataclasses.replace(training, lambda_consistency=0.0)
    elif variant == "contact":
        model = dataclasses.replace(model, decoupled=True, use_contacts=True,
                                    use_him=False)
        training = dataclasses.replace(training, lambda_consistency=0.0)
    elif variant == "consistency":
        model = dataclasses.replace(model, decoupled=True, use_contacts=True,
                                    use_him=False)
    elif variant == "full":
        model = dataclasses.replace(model, decoupled=True, use_contacts=True,
                                    use_him=True)
    else:
        raise ConfigError(f"unknown ablation variant '{variant}'")
    return dataclasses.replace(base, model=model, training=training)


def run_ablation(config: RunConfig, train_set, eval_set, seeds, out_dir,
                 samples_per_sequence=3):
    """Train and evaluate the four architecture variants per seed.

    Returns {variant: {seed: EvalReport}}; all variants share the data and
    per-seed initialization/sampling seeds, differing only in architecture
    and loss weights.
    """
    results = {}
    for variant in ABLATION_VARIANTS:
        vcfg = _variant_config(config, variant)
        results[variant] = {}
        for seed in seeds:
            run_dir = os.path.join(out_dir, f"{variant}_seed{seed}")
            trained = train(train_set, vcfg, seed, run_dir)
            results[variant][seed] = evaluate_model(
                trained.model, eval_set, seed,
                samples_per_sequence=samples_per_sequence)
    return results


def ablation_table(results) -> str:
    cols = ("mpjpe_h", "trans_err", "rot_err", "pene", "contact_gap")
    lines = ["variant seed " + " ".join(f"{c:>12}" for c in cols)]
    for variant, by_seed in results.items():
        for seed, report in by_seed.items():
            vals = " ".join(f"{getattr(report, c):12.3f}" for c in cols)
            lines.append(f"{variant:>11} {seed:>4} {vals}")
    return "\n".join(lines)


def cmd_ablate(args):
    config = _load_run_config(args.config) if args.config else toy_config()
    dataset = load_dataset(args.data)
    holdout = args.holdout
    if holdout <= 0 or holdout >= len(dataset):
        raise ConfigError(
            f"holdout {holdout} must leave at least one training sequence")
    train_set, eval_set = dataset[:-holdout], dataset[-holdout:]
    seeds = [int(s) for s in args.seeds.split(",")]
    results = run_ablation(config, train_set, eval_set, seeds, args.out)
    table = ablation_table(results)
    print(table)
    with open(os.path.join(args.out, "ablation_table.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    summary = {variant: {str(seed): report.to_dict()
                         for seed, report in by_seed.items()}
               for variant, by_seed in results.items()}
    with open(os.path.join(args.out, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return 0


def cmd_plot(args):
    from .plotting import save_sequence_plot

    gt = load_dataset(args.gt)
    preds = load_dataset(args.predictions)
    if len(gt) != len(preds):
        raise ConfigError(
            f"prediction count {len(preds)} does not match ground truth {len(gt)}")
    os.makedirs(args.out, exist_ok=True)
    for i, (g, p) in enumerate(zip(gt, preds)):
        pred_like = PredictionResult(
            human_positions=p.human_positions(),
            human_rot6d=p.human_rot6d(),
            object_centroid=p.object_centroids(),
            object_rot6d=p.object_rot6d(),
            contact_pred_human=p.contact_subsets(),
            contact_pred_object=p.contact_subsets(),
        )
        save_sequence_plot(g, pred_like,
                           os.path.join(args.out, f"sequence_{i:03d}.png"),
                           title=f"sequence {i}")
    print(f"wrote {len(gt)} plots to {args.out}")
    return 0


def make_parser():
    parser = _Parser(prog="hoicast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    p.add_argument("--config", help="run-config JSON (data section is used)")
    p.add_argument("--count", type=int, help="number of sequences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run the staged training")
    p.add_argument("--config", help="run-config JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample predictions for a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--out", help="also write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare architecture variants")
    p.add_argument("--config", help="run-config JSON (toy preset if omitted)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--holdout", type=int, default=4)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="emit trajectory plots")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HoicastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
