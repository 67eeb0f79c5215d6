"""Command-line orchestration of the pipeline with file-based stages.

Every command is deterministic given config + seed. Exit codes: 0 success,
2 configuration error, 3 data error, 4 runtime error.
"""

import argparse
import copy
import json
import logging
import sys

from . import ctok, diffcodec, encoding, inference, jsonl, metrics, micronet, mining, training

log = logging.getLogger("tokrepair")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


DEFAULT_CONFIG = {
    "seed": 0,
    "tokenizer": {},
    "codec": {"context_size": 3},
    "mining": {
        "keywords": {"action": list(mining.ACTION_WORDS), "topic": list(mining.TOPIC_WORDS)},
        "limits": {"max_input": 1000, "max_output": 100},
    },
    "encoding": {
        "vocab_size": 5000,
        "cwe_coverage": 0.8,
        "localization_mode": "first_line",
        "noise": {"mask_ratio": 0.15, "delete_ratio": 0.10, "infill_lambda": 3.0},
    },
    "model": {
        "num_layers": 2,
        "num_heads": 4,
        "model_dim": 64,
        "ff_dim": 128,
        "dropout": 0.1,
        "label_smoothing": 0.1,
        "max_positions": 1100,
    },
    "train": {
        "base_lr": 5e-4,
        "batch_size": 32,
        "eval_interval": 500,
        "patience": 2,
        "max_steps": 10000,
        "target_lr_factor": 0.1,
        "eval_beam": 1,
        "max_decode_len": 100,
        "decay_factor": 0.9,
        "decay_start": 50000,
        "decay_interval": 10000,
    },
    "infer": {"beam_width": 50, "max_len": 100},
}


def load_config(path=None, seed=None) -> dict:
    """Defaults overlaid with the config file; unknown keys are rejected."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {path}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
        _merge(config, user, trail="")
    if seed is not None:
        config["seed"] = seed
    return config


def _merge(base: dict, user, trail: str) -> None:
    if not isinstance(user, dict):
        raise ConfigError(f"config section {trail or '<root>'} must be an object")
    for key, value in user.items():
        if key not in base:
            raise ConfigError(f"unknown config key: {trail}{key}")
        if isinstance(base[key], dict):
            _merge(base[key], value, trail=f"{trail}{key}.")
        else:
            base[key] = value


def _model_config(config) -> micronet.ModelConfig:
    try:
        return micronet.ModelConfig(**config["model"])
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad model config: {err}") from err


def _train_config(config) -> training.TrainConfig:
    try:
        return training.TrainConfig(seed=config["seed"], **config["train"])
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad train config: {err}") from err


def _strip_markers(input_lexemes) -> list[str]:
    drop = {encoding.START_LOC, encoding.END_LOC}
    return [lex for lex in input_lexemes[1:] if lex not in drop]


# ---------------------------------------------------------------------------
# commands


def cmd_mine(args) -> int:
    config = load_config(args.config, args.seed)
    limits = config["mining"]["limits"]
    n_commits = 0
    n_bugfix = 0
    pairs = []
    for obj in jsonl.read_jsonl(args.commits):
        n_commits += 1
        record = jsonl.commit_from_dict(obj)
        if not mining.is_bugfix_message(record.message):
            continue
        n_bugfix += 1
        pairs.extend(mining.extract_from_commit(record))
    n_extracted = len(pairs)
    pairs = mining.dedup(pairs, config["codec"]["context_size"])
    n_deduped = len(pairs)
    pairs = mining.filter_lengths(
        pairs, limits["max_input"], limits["max_output"], config["codec"]["context_size"]
    )
    jsonl.write_jsonl(args.out, (jsonl.pair_to_dict(p) for p in pairs))
    print(f"commits: {n_commits}")
    print(f"bugfix commits: {n_bugfix}")
    print(f"function pairs: {n_extracted}")
    print(f"after dedup: {n_deduped}")
    print(f"after length filter: {len(pairs)}")
    return 0


def cmd_encode(args) -> int:
    config = load_config(args.config, args.seed)
    enc_cfg = config["encoding"]
    mode = args.mode or enc_cfg["localization_mode"]
    context_size = config["codec"]["context_size"]
    pairs = [jsonl.pair_from_dict(obj) for obj in jsonl.read_jsonl(args.pairs)]
    kept = encoding.build_cwe_kept_set(pairs, enc_cfg["cwe_coverage"])
    samples = []
    if args.noise:
        noise_cfg = encoding.NoiseConfig(**enc_cfg["noise"])
        for i, pair in enumerate(pairs):
            sample = encoding.noise_sample(
                ctok.lexemes(pair.before), noise_cfg, config["seed"] + i, context_size, pair.meta
            )
            if sample is not None:
                samples.append(sample)
    else:
        for pair in pairs:
            try:
                sample = encoding.encode_pair(pair, kept, mode, context_size)
            except encoding.LocalizationError as err:
                log.warning("skipping pair: %s", err)
                continue
            if sample is None:
                continue
            meta = dict(sample.meta)
            meta["fixed"] = ctok.lexemes(pair.after)
            samples.append(
                encoding.Sample(sample.cwe_token, sample.input, sample.target, meta)
            )
    corpus = [s.input for s in samples] + [s.target for s in samples]
    cwe_tokens = sorted({s.cwe_token for s in samples})
    vocab = encoding.build_vocab(corpus, enc_cfg["vocab_size"], cwe_tokens)
    jsonl.write_jsonl(args.out, (jsonl.sample_to_dict(s) for s in samples))
    if args.vocab_out:
        vocab.save(args.vocab_out)
    print(f"pairs: {len(pairs)}")
    print(f"samples: {len(samples)}")
    print(f"vocabulary: {len(vocab)}")
    return 0


def cmd_split(args) -> int:
    config = load_config(args.config, args.seed)
    fracs = [float(x) for x in args.fractions.split("/")]
    if len(fracs) != 3:
        raise ConfigError("--fractions must look like 0.7/0.1/0.2")
    spec = training.SplitSpec(
        strategy=args.strategy,
        train_frac=fracs[0],
        val_frac=fracs[1],
        test_frac=fracs[2],
        seed=config["seed"],
        val_start=args.val_start,
        test_start=args.test_start,
    )
    samples = [jsonl.sample_from_dict(obj) for obj in jsonl.read_jsonl(args.samples)]
    train, val, test = training.split(samples, spec)
    for name, part in (("train", train), ("val", val), ("test", test)):
        path = f"{args.out_prefix}.{name}.jsonl"
        jsonl.write_jsonl(path, (jsonl.sample_to_dict(s) for s in part))
        print(f"{name}: {len(part)} -> {path}")
    return 0


def _load_samples(path):
    return [jsonl.sample_from_dict(obj) for obj in jsonl.read_jsonl(path)]


def cmd_train(args, denoise=False) -> int:
    config = load_config(args.config, args.seed)
    vocab = encoding.Vocabulary.load(args.vocab)
    train_samples = _load_samples(args.samples)
    val_samples = _load_samples(args.val)
    train_cfg = _train_config(config)
    model_cfg = _model_config(config)
    runner = training.pretrain_denoise if denoise else training.train_source
    result = runner(train_cfg, model_cfg, train_samples, val_samples, vocab, log_path=args.log)
    micronet.save_checkpoint(result.state, args.checkpoint_out)
    metric = "n/a" if result.best_metric is None else f"{result.best_metric:.4f}"
    print(f"steps: {result.steps_run}")
    print(f"best val metric: {metric}")
    print(f"checkpoint: {args.checkpoint_out}")
    return 0


def cmd_tune(args) -> int:
    config = load_config(args.config, args.seed)
    source = micronet.load_checkpoint(args.checkpoint_in)
    vocab = encoding.Vocabulary.load(args.vocab) if args.vocab else None
    train_samples = _load_samples(args.samples)
    val_samples = _load_samples(args.val)
    try:
        result = training.tune_target(
            source, _train_config(config), train_samples, val_samples, vocab, log_path=args.log
        )
    except ValueError as err:
        raise DataError(str(err)) from err
    micronet.save_checkpoint(result.state, args.checkpoint_out)
    metric = "n/a" if result.best_metric is None else f"{result.best_metric:.4f}"
    print(f"steps: {result.steps_run}")
    print(f"best val metric: {metric}")
    print(f"checkpoint: {args.checkpoint_out}")
    return 0


def cmd_predict(args) -> int:
    config = load_config(args.config, args.seed)
    width = args.beam or config["infer"]["beam_width"]
    max_len = config["infer"]["max_len"]
    context_size = config["codec"]["context_size"]
    state = micronet.load_checkpoint(args.checkpoint)
    samples = _load_samples(args.samples)
    records = []
    for i, sample in enumerate(samples):
        hyps = inference.neural_beam(
            inference.ModelStepper(state, sample.input), width, max_len
        )
        function = _strip_markers(sample.input)
        candidates = inference.apply_hypotheses(function, hyps, width, context_size)
        records.append(
            {
                "input_id": sample.meta.get("id", i),
                "hypotheses": [{"tokens": list(h.tokens), "log_prob": h.log_prob} for h in hyps],
                "candidates": [
                    {
                        "function_lexemes": list(c.function),
                        "rank": rank,
                        "hypothesis_rank": c.hypothesis_rank,
                        "interpretation_rank": c.interpretation_rank,
                        "score": c.score,
                    }
                    for rank, c in enumerate(candidates)
                ],
            }
        )
    jsonl.write_jsonl(args.out, records)
    print(f"predictions: {len(records)} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    preds = list(jsonl.read_jsonl(args.preds))
    golds = _load_samples(args.golds)
    if len(preds) != len(golds):
        raise DataError(f"{len(preds)} predictions vs {len(golds)} gold samples")
    beams = [[h["tokens"] for h in p["hypotheses"]] for p in preds]
    hits = metrics.sequence_hits(beams, [list(s.target) for s in golds])
    patch_acc = None
    if all("fixed" in s.meta for s in golds):
        candidate_lists = [[c["function_lexemes"] for c in p["candidates"]] for p in preds]
        patch_acc = metrics.patch_accuracy(candidate_lists, [s.meta["fixed"] for s in golds])
    widths = [len(b) for b in beams]
    report = metrics.per_cwe_report(
        hits,
        [s.cwe_token for s in golds],
        patch_acc=patch_acc,
        beam_width=max(widths) if widths else None,
        split=args.split_name,
    )
    report.save_json(args.out)
    if args.csv:
        report.save_csv(args.csv)
    print(report.to_table())
    return 0


def cmd_apply(args) -> int:
    config = load_config(args.config, args.seed)
    context_size = args.context or config["codec"]["context_size"]
    with open(args.function, encoding="utf-8") as fh:
        source = fh.read()
    try:
        tokens = ctok.tokenize(source)
    except ctok.LexError as err:
        raise DataError(f"cannot tokenize {args.function}: {err}") from err
    with open(args.diff, encoding="utf-8") as fh:
        diff_tokens = fh.read().split()
    try:
        diff = diffcodec.parse_diff(diff_tokens, context_size)
    except diffcodec.MalformedDiff as err:
        raise DataError(f"MalformedDiff: {err}") from err
    try:
        interpretations = diffcodec.enumerate_applications(tokens, diff, cap=args.cap)
    except diffcodec.NoInterpretation as err:
        raise DataError(f"NoInterpretation: {err}") from err
    print(f"interpretations: {len(interpretations)}")
    for i, patched in enumerate(interpretations, 1):
        print(f"--- interpretation {i} ---")
        print(ctok.detokenize(patched))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokrepair", description="token-level C repair pipeline"
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--seed", type=int, help="root seed override")

    p = sub.add_parser("mine", help="extract bug-fix function pairs from commits")
    common(p)
    p.add_argument("--commits", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("encode", help="turn function pairs into model samples")
    common(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-out")
    p.add_argument("--mode", choices=encoding.LOCALIZATION_MODES)
    p.add_argument("--noise", action="store_true", help="emit denoising pretraining samples")

    p = sub.add_parser("split", help="partition samples into train/val/test")
    common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--strategy", choices=("random", "time"), default="random")
    p.add_argument("--fractions", default="0.7/0.1/0.2")
    p.add_argument("--val-start")
    p.add_argument("--test-start")

    for name, help_text in (
        ("train", "source-domain training from scratch"),
        ("pretrain-denoise", "denoising pretraining from scratch"),
    ):
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.add_argument("--samples", required=True)
        p.add_argument("--val", required=True)
        p.add_argument("--vocab", required=True)
        p.add_argument("--checkpoint-out", required=True)
        p.add_argument("--log")

    p = sub.add_parser("tune", help="target-domain tuning from a checkpoint")
    common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--checkpoint-in", required=True)
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--vocab", help="optional vocabulary to check against the checkpoint")
    p.add_argument("--log")

    p = sub.add_parser("predict", help="beam-search patch synthesis")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=int)

    p = sub.add_parser("eval", help="score predictions against gold diffs")
    common(p)
    p.add_argument("--preds", required=True)
    p.add_argument("--golds", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--split-name")

    p = sub.add_parser("apply", help="apply a diff to a function, all interpretations")
    common(p)
    p.add_argument("--function", required=True)
    p.add_argument("--diff", required=True)
    p.add_argument("--context", type=int)
    p.add_argument("--cap", type=int, default=diffcodec.DEFAULT_ENUM_CAP)

    return parser


COMMANDS = {
    "mine": cmd_mine,
    "encode": cmd_encode,
    "split": cmd_split,
    "train": cmd_train,
    "pretrain-denoise": lambda args: cmd_train(args, denoise=True),
    "tune": cmd_tune,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "apply": cmd_apply,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, ValueError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except micronet.NonFiniteLossError as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
