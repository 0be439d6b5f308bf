"""Command line interface: datagen | train | decode | eval | inspect.

Exit codes: 0 success, 2 configuration error (bad file, bad flag, unknown
key), 3 data error (missing or corrupt files, id or dimension mismatches,
output directory conflicts), 4 numeric divergence during training.

Output files are deterministic functions of their inputs and seeds; wall
clock statistics go to stderr only.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, load_config
from .corpus import (
    build_longform_set,
    default_domains,
    load_corpus,
    save_corpus,
    synthesize_utterance,
    table_style_domains,
)
from .decoder import decode_utterance
from .metrics import bucket_label, corpus_wer
from .model import TransducerModel
from .nn import global_norm
from .states import StateStrategy
from .trainer import DivergenceError, TrainData, run_training

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

EVAL_HEADER = "test_set,bucket,n_utts,ref_tokens,wer,del_rate,ins_rate,sub_rate"


class DataError(Exception):
    """Problem with input/output data files (exit code 3)."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rnntlab",
        description="Streaming transducer lab: synthetic corpora, training, "
        "decoding, and WER evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate train/test/long-form corpora")
    p.add_argument("--config", help="INI experiment config (defaults if omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="corpus seed (overrides config)")
    p.add_argument(
        "--force", action="store_true", help="overwrite a non-empty output directory"
    )

    p = sub.add_parser("train", help="train a model on generated corpora")
    p.add_argument("--config", help="INI experiment config")
    p.add_argument("--data", required=True, help="directory written by datagen")
    p.add_argument("--out", required=True, help="output directory for checkpoint and metrics")
    p.add_argument("--steps", type=int, help="override train.steps")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument(
        "--state-strategy",
        choices=["zero", "rss", "rss-encoder-only", "rsp"],
        help="override the initial-state strategy",
    )
    p.add_argument(
        "--sampling",
        choices=["uniform-domain", "uniform-subdomain", "count-weighted"],
        help="override the domain sampling strategy",
    )
    p.add_argument(
        "--train-domains",
        help="comma-separated domain names to train on (default: all in the data dir)",
    )
    p.add_argument("--resume", help="checkpoint to continue from (keeps step numbering)")

    p = sub.add_parser("decode", help="decode a manifest with a checkpoint")
    p.add_argument("--config", help="INI experiment config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="corpus manifest (or its directory)")
    p.add_argument("--out", required=True, help="output JSON-lines hypotheses file")
    p.add_argument("--beam", type=int, help="beam width (1 decodes greedily)")
    p.add_argument(
        "--margin",
        help="adaptive beam margin in nats, or 'none' to disable pruning",
    )

    p = sub.add_parser("eval", help="score hypotheses against a manifest")
    p.add_argument("--hypotheses", required=True, help="JSON-lines file from decode")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="write the WER report CSV here")
    p.add_argument("--name", help="test-set label for the report (default: manifest dir)")

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("--checkpoint", required=True)
    return parser


# -- datagen -------------------------------------------------------------------


def cmd_datagen(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    data_cfg = cfg.data
    seed = args.seed if args.seed is not None else data_cfg.corpus_seed
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise DataError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    if data_cfg.domain_set == "pair":
        domains = default_domains(seed, data_cfg.vocab_size, data_cfg.raw_dim)
    else:
        domains = table_style_domains(seed, data_cfg.vocab_size, data_cfg.raw_dim)
    index: dict = {
        "seed": seed,
        "vocab_size": data_cfg.vocab_size,
        "feature_dim": domains[0].feature_dim,
        "domains": [d.name for d in domains],
        "train": {},
        "test": {},
        "longform": {},
    }
    for di, domain in enumerate(domains):
        train_rng = np.random.default_rng([seed, di, 0])
        test_rng = np.random.default_rng([seed, di, 1])
        train_utts = [
            synthesize_utterance(domain, train_rng)
            for _ in range(data_cfg.train_per_domain)
        ]
        test_utts = [
            synthesize_utterance(domain, test_rng)
            for _ in range(data_cfg.test_per_domain)
        ]
        train_dir = f"train_{domain.name}"
        test_dir = f"test_{domain.name}"
        save_corpus(out / train_dir, train_utts)
        save_corpus(out / test_dir, test_utts)
        index["train"][domain.name] = train_dir
        index["test"][domain.name] = test_dir
        index["longform"][domain.name] = {}
        for factor in data_cfg.longform_factors:
            longform = build_longform_set(
                test_utts, factor, data_cfg.longform_silence_frames
            )
            name = f"longform_{domain.name}_{factor}x"
            save_corpus(out / name, longform)
            index["longform"][domain.name][str(factor)] = name
    (out / "datasets.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        f"wrote {len(domains)} domains x ({data_cfg.train_per_domain} train, "
        f"{data_cfg.test_per_domain} test, long-form {list(data_cfg.longform_factors)}) "
        f"to {out}"
    )
    return EXIT_OK


# -- train ---------------------------------------------------------------------


def _load_index(data_dir: Path) -> dict:
    index_path = data_dir / "datasets.json"
    if not index_path.is_file():
        raise DataError(f"no datasets.json in {data_dir} (run datagen first)")
    return json.loads(index_path.read_text(encoding="utf-8"))


def _check_compatible(model: TransducerModel, utts, source: str) -> None:
    cfg = model.config
    for utt in utts:
        if utt.features.shape[1] != cfg.feature_dim:
            raise DataError(
                f"{source}: feature dim {utt.features.shape[1]} does not match "
                f"model feature_dim {cfg.feature_dim}"
            )
        if utt.tokens and max(utt.tokens) >= cfg.vocab_size:
            raise DataError(
                f"{source}: token id {max(utt.tokens)} outside model vocabulary "
                f"of size {cfg.vocab_size}"
            )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    train_cfg = cfg.train
    if args.steps is not None:
        train_cfg.steps = args.steps
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.state_strategy is not None:
        train_cfg.state_strategy = StateStrategy(
            kind=args.state_strategy.replace("-", "_"),
            rss_scope=train_cfg.state_strategy.rss_scope,
            pass_probability=train_cfg.state_strategy.pass_probability,
        )
    if args.sampling is not None:
        train_cfg.sampling_strategy = args.sampling.replace("-", "_")
    data_dir = Path(args.data)
    index = _load_index(data_dir)
    wanted = (
        [name.strip() for name in args.train_domains.split(",") if name.strip()]
        if args.train_domains
        else list(index["train"])
    )
    for name in wanted:
        if name not in index["train"]:
            raise DataError(
                f"domain {name!r} not in data dir (has {sorted(index['train'])})"
            )
    train_utts = []
    for name in wanted:
        train_utts.extend(load_corpus(data_dir / index["train"][name]))
    if not train_utts:
        raise DataError("no training utterances in the selected domains")
    eval_sets = {
        f"test_{name}": load_corpus(data_dir / rel)
        for name, rel in sorted(index["test"].items())
    }
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        model, opt, start_step, rng = ckpt.model, ckpt.opt, ckpt.step, ckpt.rng
        if rng is None:
            rng = np.random.default_rng(train_cfg.seed)
    else:
        model = TransducerModel.init(cfg.model, seed=train_cfg.seed)
        opt, start_step, rng = None, 0, None
    _check_compatible(model, train_utts, "training corpus")
    for name, utts in eval_sets.items():
        _check_compatible(model, utts, name)
    data = TrainData(utterances=train_utts, eval_sets=eval_sets)
    out = Path(args.out)
    result = run_training(
        model,
        train_cfg,
        data,
        out_dir=out,
        start_step=start_step,
        opt=opt,
        rng=rng,
    )
    ckpt_path = save_checkpoint(
        out / "checkpoint.ckpt",
        result.model,
        opt=result.opt,
        step=result.final_step,
        rng=result.rng,
    )
    print(
        f"trained to step {result.final_step}; wrote {ckpt_path} and "
        f"{result.metrics_path}"
    )
    return EXIT_OK


# -- decode --------------------------------------------------------------------


def _parse_margin(raw: str | None, default: float | None) -> float | None:
    if raw is None:
        return default
    if raw.strip().lower() in ("none", "off"):
        return None
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"--margin {raw!r}: {exc}") from exc


def cmd_decode(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    decode_cfg = cfg.decode
    beam_width = args.beam if args.beam is not None else decode_cfg.beam_width
    margin = _parse_margin(args.margin, decode_cfg.adaptive_margin)
    if args.beam == 1 and args.margin is None:
        # Width 1 is documented as greedy decoding, which needs margin 0.
        margin = 0.0
    model = load_checkpoint(args.checkpoint).model
    try:
        utts = load_corpus(args.manifest)
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    _check_compatible(model, utts, str(args.manifest))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    total_frames = 0
    peak_hyps = 0
    started = time.monotonic()
    with out_path.open("w", encoding="utf-8") as fh:
        for utt in utts:
            result = decode_utterance(
                model,
                utt.features,
                beam_width=beam_width,
                adaptive_margin=margin,
                expansion_cap=decode_cfg.expansion_cap,
                final_expansion=decode_cfg.final_expansion,
            )
            total_frames += result.frames
            peak_hyps = max(peak_hyps, result.peak_hypotheses)
            record = {
                "utterance_id": utt.id,
                "tokens": result.tokens,
                "text": " ".join(str(t) for t in result.tokens),
                "log_prob": result.log_prob,
                "frames": result.frames,
            }
            fh.write(json.dumps(record) + "\n")
    elapsed = max(time.monotonic() - started, 1e-9)
    print(
        f"decoded {len(utts)} utterances, {total_frames} frames in {elapsed:.2f}s "
        f"({total_frames / elapsed:.0f} frames/s), peak hypotheses {peak_hyps}",
        file=sys.stderr,
    )
    return EXIT_OK


# -- eval ----------------------------------------------------------------------


def _read_manifest_refs(path: str | Path) -> dict[str, list[int]]:
    manifest = Path(path)
    if manifest.is_dir():
        manifest = manifest / "manifest.jsonl"
    if not manifest.is_file():
        raise DataError(f"manifest not found: {manifest}")
    refs: dict[str, list[int]] = {}
    for line_no, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            refs[record["id"]] = [int(t) for t in record["token_ids"]]
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{manifest}:{line_no}: bad manifest record: {exc}") from exc
    return refs


def _read_hypotheses(path: str | Path) -> dict[str, list[int]]:
    hyp_path = Path(path)
    if not hyp_path.is_file():
        raise DataError(f"hypotheses file not found: {hyp_path}")
    hyps: dict[str, list[int]] = {}
    for line_no, line in enumerate(hyp_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            hyps[record["utterance_id"]] = [int(t) for t in record["tokens"]]
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{hyp_path}:{line_no}: bad hypothesis record: {exc}") from exc
    return hyps


def cmd_eval(args: argparse.Namespace) -> int:
    refs = _read_manifest_refs(args.manifest)
    hyps = _read_hypotheses(args.hypotheses)
    missing = sorted(set(refs) - set(hyps))
    if missing:
        for utt_id in missing:
            print(f"missing hypothesis for {utt_id}", file=sys.stderr)
        raise DataError(f"{len(missing)} utterances have no hypothesis")
    extra = sorted(set(hyps) - set(refs))
    if extra:
        logger.warning("ignoring %d hypotheses with no reference", len(extra))
    name = args.name
    if name is None:
        manifest = Path(args.manifest)
        name = manifest.name if manifest.is_dir() else manifest.parent.name
    pairs = [(refs[utt_id], hyps[utt_id]) for utt_id in refs]
    total, buckets = corpus_wer(pairs)
    counts: dict[str, int] = {}
    for ref, _ in pairs:
        label = bucket_label(len(ref))
        counts[label] = counts.get(label, 0) + 1
    lines = [EVAL_HEADER]
    rows = [("all", len(pairs), total)] + [
        (label, counts[label], buckets[label])
        for label in sorted(buckets, key=lambda b: int(b.lstrip(">").split("-")[0]))
    ]
    for bucket, n_utts, b in rows:
        lines.append(
            f"{name},{bucket},{n_utts},{b.ref_len},{b.wer:.6f},"
            f"{b.deletion_rate:.6f},{b.insertion_rate:.6f},{b.substitution_rate:.6f}"
        )
    report = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
    print(
        f"{name}: WER {100 * total.wer:.2f}% "
        f"(D {total.deletions} / I {total.insertions} / S {total.substitutions}) "
        f"over {total.ref_len} reference tokens"
    )
    if args.out:
        print(f"wrote {args.out}")
    else:
        print(report, end="")
    return EXIT_OK


# -- inspect -------------------------------------------------------------------


def cmd_inspect(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model
    cfg = model.config
    print(f"checkpoint: {args.checkpoint}")
    print(f"training step: {ckpt.step}")
    print(f"optimizer state: {'yes (adam step %d)' % ckpt.opt.step if ckpt.opt else 'no'}")
    print(f"rng state: {'yes' if ckpt.rng is not None else 'no'}")
    print(f"parameters: {model.param_count()}")
    print(
        f"model: feature_dim={cfg.feature_dim} encoder={cfg.encoder_layers}x"
        f"(h{cfg.encoder_hidden},p{cfg.encoder_proj}) reduction=x{cfg.time_reduction_factor}"
        f"@{cfg.time_reduction_after} prediction={cfg.prediction_layers}x"
        f"(h{cfg.prediction_hidden},p{cfg.prediction_proj}) joint={cfg.joint_dim}"
        f"({cfg.joint_mode}) vocab={cfg.vocab_size} embedding={cfg.embedding_dim}"
    )
    print(f"global param norm: {global_norm(model.params):.6f}")
    for name in sorted(model.params):
        arr = model.params[name]
        print(f"  {name:<24} {str(arr.shape):<12} |x|={np.linalg.norm(arr):.4f}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


_COMMANDS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
