"""Command-line pipeline: generate data, pretrain, train, evaluate, export.

One TOML config file drives the pipeline with [corpus], [train], and [eval]
sections; command-line flags override config values. Every command writes a
manifest.json into its output directory before doing work (command, resolved
config, seed, input hashes, planned outputs, timestamp). Data artifacts are
byte-identical across reruns with identical inputs and seeds; the manifest is
the one timestamped exception.

Exit codes: 0 success, 1 I/O failure, 2 configuration or validation error,
3 numeric failure during training.
"""

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

try:
    import tomllib
except ImportError:
    import tomli as tomllib

import numpy as np

from . import corpus as cp
from . import evaluation as ev
from . import rollout as ro
from . import trainer as tr
from .errors import ConfigError, DomainError, InputError, NumericError, SchemaError


def _load_toml(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc


def _section(config: dict, name: str) -> dict:
    if name not in config:
        raise ConfigError(f"config is missing the [{name}] section")
    return dict(config[name])


def _corpus_spec(section: dict):
    section = dict(section)
    test_count = section.pop("test_count", None)
    for key in ("segments_range", "segment_length_range"):
        if key in section:
            section[key] = tuple(section[key])
    fields = set(cp.CorpusSpec.__dataclass_fields__)
    unknown = sorted(set(section) - fields)
    if unknown:
        raise ConfigError(f"unknown corpus config keys: {unknown}")
    spec = cp.CorpusSpec(**section).validate()
    if test_count is None:
        test_count = max(1, spec.demo_count // 5)
    return spec, int(test_count)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, seed, inputs, outputs):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "created": datetime.now(timezone.utc).isoformat(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_split(data_dir, split: str):
    """Load one raw split plus the train-split stats, normalized in memory."""
    data_dir = Path(data_dir)
    dataset = cp.load_jsonl(data_dir / f"{split}.jsonl")
    stats = cp.load_stats(data_dir / "stats.json")
    return cp.normalize(dataset, stats), stats


def _data_dims(dataset) -> tuple:
    first = dataset.trajectories[0]
    return first.states.shape[1], first.actions.shape[1]


def _check_dims(loaded: tr.LoadedCheckpoint, d_s: int, d_a: int):
    if (loaded.dims.d_s, loaded.dims.d_a) != (d_s, d_a):
        raise ConfigError(
            f"checkpoint expects d_s={loaded.dims.d_s}, d_a={loaded.dims.d_a}; "
            f"data has d_s={d_s}, d_a={d_a}"
        )


def _train_config(args) -> tr.TrainConfig:
    cfg = tr.TrainConfig.from_dict(_section(_load_toml(args.config), "train"))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg.validate()


def cmd_gen_data(args) -> int:
    spec, test_count = _corpus_spec(_section(_load_toml(args.config), "corpus"))
    if args.seed is not None:
        spec.seed = args.seed
    out = Path(args.out)
    outputs = [out / "train.jsonl", out / "test.jsonl", out / "stats.json"]
    _write_manifest(out, "gen-data", asdict(spec) | {"test_count": test_count},
                    spec.seed, [args.config], outputs)
    dataset = cp.generate_corpus(spec)
    train, test = cp.split_dataset(dataset, test_count, spec.seed)
    stats = cp.compute_norm_stats(train)
    cp.save_jsonl(train, outputs[0])
    cp.save_jsonl(test, outputs[1])
    cp.save_stats(stats, outputs[2])
    print(f"wrote {len(train)} train / {len(test)} test demos to {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _train_config(args)
    dataset, _ = _load_split(args.data, "train")
    d_s, d_a = _data_dims(dataset)
    out = Path(args.out)
    _write_manifest(
        out, "pretrain", asdict(cfg), cfg.seed,
        [args.config, Path(args.data) / "train.jsonl", Path(args.data) / "stats.json"],
        [out / "pretrained.ckpt", out / "pretrain_metrics.csv"],
    )
    triple = tr.build_triple(cfg, d_s, d_a)
    print("parameters:", triple.param_count())
    _, _, history = tr.run_pretraining_stage(
        dataset.trajectories, cfg, d_s, d_a, out_dir=out,
        log_fn=lambda row: print(
            f"pretrain epoch {row['epoch']}: loss={row['loss']:.4f} kl={row['kl']:.4f}"
        ),
    )
    print(f"pretraining finished after {len(history)} epochs -> {out / 'pretrained.ckpt'}")
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args)
    dataset, _ = _load_split(args.data, "train")
    d_s, d_a = _data_dims(dataset)
    out = Path(args.out)
    inputs = [args.config, Path(args.data) / "train.jsonl", Path(args.data) / "stats.json"]

    if args.init is not None:
        loaded = tr.load_checkpoint(args.init)
        _check_dims(loaded, d_s, d_a)
        for field in ("d_z", "layers", "hidden", "seed"):
            if getattr(cfg, field) != getattr(loaded.config, field):
                raise ConfigError(
                    f"config {field}={getattr(cfg, field)} disagrees with checkpoint "
                    f"{field}={getattr(loaded.config, field)}"
                )
        triple, encoder, state = loaded.triple, loaded.encoder, loaded.state
        inputs.append(args.init)
    elif args.cold_start:
        triple, encoder, state = tr.build_triple(cfg, d_s, d_a), None, tr.TrainerState()
    else:
        raise ConfigError(
            "no --init checkpoint given; training from scratch tends to diverge, "
            "pass --cold-start to proceed anyway"
        )

    _write_manifest(out, "train", asdict(cfg), cfg.seed, inputs, [out / "metrics.csv"])
    print("parameters:", triple.param_count())
    history = tr.run_training(
        dataset.trajectories, triple, cfg, out_dir=out, state=state, encoder=encoder,
        log_fn=lambda row: print(
            f"epoch {row['epoch']}: J={row['mean_j']:.4f} "
            f"log_pi={row['mean_log_pi']:.4f} eps={row['epsilon']:.3f}"
        ),
    )
    print(f"training finished after {len(history)} epochs -> {out}")
    return 0


def cmd_eval(args) -> int:
    dataset, stats = _load_split(args.data, args.split)
    loaded = tr.load_checkpoint(args.ckpt)
    _check_dims(loaded, *_data_dims(dataset))
    eval_cfg = _load_toml(args.config).get("eval", {}) if args.config else {}
    tol = int(eval_cfg.get("tol", 2))
    k = int(eval_cfg.get("k", 4))
    out = Path(args.out)
    _write_manifest(
        out, "eval", {"tol": tol, "k": k, "split": args.split}, loaded.config.seed,
        [args.ckpt, Path(args.data) / f"{args.split}.jsonl"],
        [out / "eval_report.json"],
    )
    report = ev.eval_report(
        dataset.trajectories, loaded.triple, ro.normalized_integrator(stats), tol=tol, k=k
    )
    report["train_config"] = asdict(loaded.config)
    report["split"] = args.split
    ev.save_report(report, out / "eval_report.json")
    print(
        f"recon MSE (teacher forced) {report['recon_mse_teacher_forced']:.5f}, "
        f"boundary F1 {report['boundary_f1']}, purity {report['cluster_purity']}"
    )
    return 0


def cmd_rollout(args) -> int:
    loaded = tr.load_checkpoint(args.ckpt)
    out = Path(args.out)
    _write_manifest(
        out, "rollout",
        {"steps": args.steps, "mode": args.mode, "count": args.count},
        args.seed, [args.ckpt], [out / "rollouts.jsonl"],
    )
    s1 = np.zeros(loaded.dims.d_s)
    pairs = []
    for i in range(args.count):
        rng = np.random.default_rng([args.seed, i]) if args.mode == "stochastic" else None
        pairs.append(
            ro.generate(loaded.triple, ro.IntegratorDynamics(), s1, args.steps, args.mode, rng)
        )
    ro.save_rollouts(out / "rollouts.jsonl", pairs)
    print(f"wrote {args.count} rollouts of {args.steps} steps to {out / 'rollouts.jsonl'}")
    return 0


def cmd_export_latents(args) -> int:
    dataset, _ = _load_split(args.data, args.split)
    loaded = tr.load_checkpoint(args.ckpt)
    _check_dims(loaded, *_data_dims(dataset))
    out = Path(args.out)
    _write_manifest(
        out, "export-latents", {"split": args.split}, loaded.config.seed,
        [args.ckpt, Path(args.data) / f"{args.split}.jsonl"],
        [out / "latents.csv"],
    )
    n = ev.export_latents(dataset.trajectories, loaded.triple, out / "latents.csv")
    print(f"wrote {n} switch-step latents to {out / 'latents.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optionvi",
        description="Discover temporally extended options from demonstrations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic demonstration corpus")
    p.add_argument("--config", required=True, help="TOML file with a [corpus] section")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the corpus seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="pretrain the low-level policy as a segment VAE")
    p.add_argument("--data", required=True, help="directory from gen-data")
    p.add_argument("--config", required=True, help="TOML file with a [train] section")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the training seed")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train all three networks jointly")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--init", default=None, help="checkpoint to start or resume from")
    p.add_argument("--cold-start", action="store_true",
                   help="allow training without a pretrained checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a data split")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--config", default=None, help="TOML file with an [eval] section")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="generate trajectories from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--mode", default="greedy", choices=ro.MODES_GENERATE)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("export-latents", help="dump switch-step codes with 2-D projections")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.set_defaults(func=cmd_export_latents)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, DomainError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
