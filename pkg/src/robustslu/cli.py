"""Command-line orchestration of the full workflow.

Subcommands: ingest, synth, train, paraphrase, augment, advset build,
advset export, annotate serve / seed-demo, eval, report. Pipeline stages
communicate only via files (datasets, paraphrase caches, augmented
JSONL, candidate event logs, checkpoints, reports) so stages can run on
different machines and be replayed hermetically.

Utterance ids are derived from the dataset file's stem plus line number;
paraphrase caches and augmented files link back to originals by id, so
the stages of one flow must all reference the same dataset file.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import pipeline
from .advset import CandidateStore, build_candidates
from .corpus import DataError, LabelSpace, load_dataset, parse_column_format, write_dataset
from .paraphraser import (AutoencoderConfig, Seq2SeqModel, SubprocessAdapter, backtranslate,
                          perturb_decode, read_paraphrase_cache, rule_paraphrase,
                          train_autoencoder, write_paraphrase_cache)
from .pairing import PairingConfig
from .synthetic import default_grammar, generate_synthetic, load_grammar, save_grammar
from .tagger import TaggerConfig, TaggerModel, train
from .tensor import TrainingError


class UsageError(Exception):
    pass


def _freeze_config(out_dir: Path, args: argparse.Namespace, extra=None):
    """Every artifact directory records the resolved config that produced it."""
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    if extra:
        resolved.update(extra)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, default=str)
        fh.write("\n")


def _require_new(path: Path, resume: bool) -> bool:
    """Returns True when the artifact already exists and --resume was given."""
    if path.exists():
        if not resume:
            raise UsageError(f"{path} already exists; pass --resume to continue or "
                             "choose a fresh output path")
        return True
    return False


# --- ingest ---------------------------------------------------------------


def cmd_ingest(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "columns":
        with open(args.train, encoding="utf-8") as fh:
            train_examples = parse_column_format(fh, id_prefix="train")
        space = LabelSpace([ex.annotation.intent for ex in train_examples],
                           [s.label for ex in train_examples for s in ex.annotation.slots])
    else:
        train_examples, space = load_dataset(args.train, id_prefix="train")
    write_dataset(out / "train.tsv", train_examples)
    counts = {"train": len(train_examples)}
    for split in ("dev", "test"):
        path = getattr(args, split)
        if path:
            if args.format == "columns":
                with open(path, encoding="utf-8") as fh:
                    examples = parse_column_format(fh, id_prefix=split)
                for ex in examples:
                    space.check(ex.annotation)
            else:
                examples, _ = load_dataset(path, id_prefix=split, label_space=space)
            write_dataset(out / f"{split}.tsv", examples)
            counts[split] = len(examples)
    with open(out / "labelspace.json", "w", encoding="utf-8") as fh:
        json.dump(space.to_json(), fh, indent=2)
    _freeze_config(out, args, {"counts": counts})
    print(json.dumps({"counts": counts, "intents": len(space.intents),
                      "slot_labels": len(space.slot_labels)}))
    return 0


# --- synth ----------------------------------------------------------------


def cmd_synth(args):
    grammar = load_grammar(args.grammar) if args.grammar else default_grammar()
    splits = generate_synthetic(grammar, seed=args.seed, n_train=args.n_train,
                                n_test=args.n_test, n_dev=args.n_dev)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "train.tsv", splits.train)
    write_dataset(out / "dev.tsv", splits.dev)
    write_dataset(out / "test.tsv", splits.test)
    write_dataset(out / "perturbed.tsv", splits.perturbed)
    save_grammar(out / "grammar.json", grammar)
    space = LabelSpace([ex.annotation.intent for ex in splits.train],
                       [s.label for ex in splits.train for s in ex.annotation.slots])
    with open(out / "labelspace.json", "w", encoding="utf-8") as fh:
        json.dump(space.to_json(), fh, indent=2)
    _freeze_config(out, args)
    print(json.dumps({"train": len(splits.train), "dev": len(splits.dev),
                      "test": len(splits.test), "perturbed": len(splits.perturbed)}))
    return 0


# --- train ----------------------------------------------------------------


def _tagger_config(args) -> TaggerConfig:
    return TaggerConfig(hidden_size=args.hidden, num_layers=args.layers,
                        dropout=args.dropout, learning_rate=args.lr,
                        weight_decay=args.weight_decay, epochs=args.epochs,
                        embedding_dim=args.emb, batch_size=args.batch,
                        seed=args.seed, optimizer=args.optimizer,
                        min_count=args.min_count)


def _pairing_config(args) -> PairingConfig | None:
    if args.pairing == "none":
        return None
    lambda_sf = args.lambda_sf if args.pairing in ("clean", "both") else 0.0
    lambda_a = args.lambda_a if args.pairing in ("alp", "both") else 0.0
    return PairingConfig(lambda_sf=lambda_sf, lambda_a=lambda_a, pair_cap=args.pair_cap,
                         include_para_para=not args.no_para_para, seed=args.seed)


def cmd_train(args):
    if args.config:
        exp = pipeline.load_experiment_config(args.config)
        cfg = exp.tagger
        pairing = exp.pairing
        out = Path(args.out or exp.output_dir)
        train_path, dev_path = exp.train, exp.dev
        aug_paths, pair_paths = exp.augment, exp.pair_data
    else:
        if not args.train or not args.out:
            raise UsageError("train needs --train and --out (or --config)")
        cfg = _tagger_config(args)
        pairing = _pairing_config(args)
        out = Path(args.out)
        train_path, dev_path = args.train, args.dev
        aug_paths = [] if args.augment == "none" else [p.strip() for p in args.augment.split(",")]
        pair_paths = [p.strip() for p in args.pair_data.split(",")] if args.pair_data else []
        if aug_paths and pair_paths:
            raise UsageError("--pair-data replaces --augment; pass only one")

    model_path = out / "model.npz"
    if _require_new(model_path, args.resume):
        print(f"checkpoint {model_path} already trained; nothing to do")
        return 0
    clean, _space = load_dataset(train_path, id_prefix=Path(train_path).stem)
    dev = load_dataset(dev_path, id_prefix=Path(dev_path).stem)[0] if dev_path else None

    augmented = []
    for path in aug_paths:
        augmented.extend(pipeline.read_augmented(path))
    augmented_task_loss = not pair_paths
    for path in pair_paths:
        augmented.extend(pipeline.read_augmented(path))

    if pairing is not None and pairing.lambda_a > 0 and not augmented:
        raise UsageError("--pairing alp needs paraphrases: pass --augment or --pair-data")

    model, history = train(clean, augmented, cfg, pairing=pairing, dev=dev,
                           augmented_task_loss=augmented_task_loss)
    out.mkdir(parents=True, exist_ok=True)
    model.save(model_path)
    with open(out / "history.jsonl", "w", encoding="utf-8") as fh:
        for stats in history:
            fh.write(json.dumps(stats.to_json()) + "\n")
    _freeze_config(out, args, {"tagger_config": cfg.to_json(),
                               "pairing_config": pairing.to_json() if pairing else None,
                               "n_clean": len(clean), "n_augmented": len(augmented)})
    final = history[-1].to_json()
    print(json.dumps({"model": str(model_path), "epochs": len(history),
                      "final": final}))
    return 0


# --- paraphrase -----------------------------------------------------------


def cmd_paraphrase(args):
    cache_path = Path(args.out)
    resume = _require_new(cache_path, args.resume)
    examples, _ = load_dataset(args.data, id_prefix=Path(args.data).stem)
    done = set()
    if resume:
        done = {s.original_id for s in read_paraphrase_cache(cache_path)}
    todo = [ex.utterance for ex in examples if ex.utterance.id not in done]
    failures = []
    if args.source == "rules":
        grammar = load_grammar(args.grammar) if args.grammar else default_grammar()
        sets = [rule_paraphrase(utt, grammar.rules, seed=args.seed + i, k=args.k)
                for i, utt in enumerate(todo)]
    elif args.source == "seq2seq":
        cfg = AutoencoderConfig(noise_sigma=args.sigma, beam_width=args.k,
                                epochs=args.autoencoder_epochs, seed=args.seed)
        if args.seq2seq_model:
            model = Seq2SeqModel.load(args.seq2seq_model)
        else:
            model, _hist = train_autoencoder([ex.utterance for ex in examples], cfg)
            if args.save_seq2seq:
                model.save(args.save_seq2seq)
        sets = [perturb_decode(model, utt, sigma=args.sigma, k=args.k, seed=args.seed + i)
                for i, utt in enumerate(todo)]
    elif args.source == "adapter":
        command = args.adapter_cmd or os.environ.get("ROBUSTSLU_ADAPTER_CMD")
        if not command:
            raise UsageError("adapter source needs --adapter-cmd or ROBUSTSLU_ADAPTER_CMD")
        adapter = SubprocessAdapter(command.split(), name=args.adapter_name,
                                    timeout=args.timeout)
        sets, failures = backtranslate(todo, adapter, args.k)
    else:
        raise UsageError(f"unknown source {args.source!r}")
    write_paraphrase_cache(cache_path, sets, mode="a" if resume else "w")
    if failures:
        with open(str(cache_path) + ".errors.jsonl", "w", encoding="utf-8") as fh:
            for f in failures:
                fh.write(json.dumps(f.to_json()) + "\n")
    print(json.dumps({"cache": str(cache_path), "new_sets": len(sets),
                      "skipped": len(done), "failures": len(failures)}))
    return 0


# --- augment ---------------------------------------------------------------


def cmd_augment(args):
    model = TaggerModel.load(args.model)
    originals, _ = load_dataset(args.data, id_prefix=Path(args.data).stem)
    sets = []
    for path in args.cache.split(","):
        sets.extend(read_paraphrase_cache(path.strip()))
    augmented = pipeline.build_augmented(model, originals, sets, weight=args.weight)
    pipeline.write_augmented(args.out, augmented)
    print(json.dumps({"augmented": len(augmented), "out": args.out}))
    return 0


# --- advset ----------------------------------------------------------------


def cmd_advset_build(args):
    model = TaggerModel.load(args.model)
    originals, _ = load_dataset(args.data, id_prefix=Path(args.data).stem)
    sets = []
    for path in args.cache.split(","):
        sets.extend(read_paraphrase_cache(path.strip()))
    store = CandidateStore(log_path=args.store)
    existing = set(store.candidates)
    records = [r for r in build_candidates(model, originals, sets)
               if r.candidate_id not in existing]
    store.add_candidates(records)
    prog = store.progress()
    store.close()
    print(json.dumps({"new_candidates": len(records), "progress": prog}))
    return 0


def cmd_advset_export(args):
    store = CandidateStore(log_path=args.store)
    rows = store.export_rows()
    store.close()
    pipeline.write_advset_file(args.out, rows)
    by_source = {}
    for _, source in rows:
        by_source[source] = by_source.get(source, 0) + 1
    print(json.dumps({"exported": len(rows), "by_source": by_source, "out": args.out}))
    return 0


# --- annotate ---------------------------------------------------------------


def cmd_annotate_serve(args):
    import uvicorn

    from .service import create_app, load_tokens
    if not args.tokens:
        raise UsageError("annotate serve needs --tokens or ROBUSTSLU_TOKENS")
    store = CandidateStore(log_path=args.store,
                           lease_seconds=args.lease_minutes * 60.0)
    with open(args.labelspace, encoding="utf-8") as fh:
        space = LabelSpace.from_json(json.load(fh))
    tokens = load_tokens(args.tokens)
    app = create_app(store, space, tokens, show_original=not args.hide_original,
                     ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_annotate_seed_demo(args):
    """A tiny self-contained store + tokens + labelspace for trying the UI."""
    from .corpus import Annotation, LabeledExample, Utterance
    from .advset import CandidateRecord
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = [
        ("cancel the alarm", "pause the alarm", "alarm/cancel", "alarm/pause", "bt-es"),
        ("set an alarm for nine", "schedule an alarm for nine", "alarm/set", "alarm/modify", "bt-cs"),
        ("what's the weather in sydney", "tell me the conditions in sydney",
         "weather/find", "weather/check_condition", "bt-es"),
        ("wake me up at six", "could you wake me at six", "alarm/set", "alarm/modify", "seq2seq"),
        ("start a timer for ten minutes", "begin a countdown of ten minutes",
         "timer/set", "alarm/set", "seq2seq"),
    ]
    store = CandidateStore(log_path=out / "store.log")
    records = []
    for i, (orig, para, intent, flipped, source) in enumerate(pairs[:args.n], start=1):
        original = LabeledExample(Utterance.make(f"demo-orig-{i}", orig),
                                  Annotation(intent, ()))
        records.append(CandidateRecord(
            candidate_id=f"demo-{i}", original=original,
            paraphrase=Utterance.make(f"demo-{i}", para), source=source,
            original_pred_intent=intent, paraphrase_pred_intent=flipped))
    store.add_candidates(records)
    store.close()
    space = LabelSpace(sorted({p[2] for p in pairs} | {p[3] for p in pairs}),
                       ["datetime", "location", "duration", "alarm_name"])
    with open(out / "labelspace.json", "w", encoding="utf-8") as fh:
        json.dump(space.to_json(), fh, indent=2)
    tokens = {
        "demo-annotator-1": {"annotator_id": "annotator-1", "role": "annotator"},
        "demo-annotator-2": {"annotator_id": "annotator-2", "role": "annotator"},
        "demo-adjudicator": {"annotator_id": "adjudicator", "role": "adjudicator"},
    }
    with open(out / "tokens.json", "w", encoding="utf-8") as fh:
        json.dump(tokens, fh, indent=2)
    print(json.dumps({"store": str(out / "store.log"), "candidates": len(records),
                      "tokens": str(out / "tokens.json"),
                      "labelspace": str(out / "labelspace.json")}))
    return 0


# --- eval / report ----------------------------------------------------------


def _parse_named(values, what):
    out = []
    for value in values or []:
        if "=" not in value:
            raise UsageError(f"--{what} expects name=path, got {value!r}")
        name, path = value.split("=", 1)
        out.append((name, path))
    return out


def cmd_eval(args):
    variants = []
    for name, path in _parse_named(args.model, "model"):
        variants.append((name, TaggerModel.load(path)))
    for name, paths in _parse_named(args.ensemble, "ensemble"):
        members = [TaggerModel.load(p.strip()) for p in paths.split(",")]
        variants.append((name, members))
    if not variants:
        raise UsageError("eval needs at least one --model or --ensemble")
    clean, _ = load_dataset(args.clean, id_prefix="clean")
    adversarial = {}
    for name, path in _parse_named(args.adv, "adv"):
        adversarial[name] = load_dataset(path, id_prefix=name, origin="adversarial")[0]
    if args.adv_file:
        for source, examples in pipeline.read_advset_file(args.adv_file).items():
            adversarial[source] = examples
    report = pipeline.make_report(variants, clean, adversarial,
                                  metadata={"clean": args.clean, "seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.jsonl", "w", encoding="utf-8") as fh:
        fh.write(report.to_jsonl())
    rendered = report.render()
    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(rendered)
    _freeze_config(out, args)
    print(rendered, end="")
    return 0


def cmd_report(args):
    with open(args.report, encoding="utf-8") as fh:
        report = pipeline.EvalReport.from_jsonl(fh.read())
    print(report.render(), end="")
    return 0


# --- parser -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robustslu",
                     description="joint intent/slot tagging with adversarial evaluation "
                                 "and robust training")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and normalize dataset files")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--test")
    p.add_argument("--format", choices=["canonical", "columns"], default="canonical")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic gold-annotated corpus")
    p.add_argument("--grammar", help="grammar JSON (default: built-in weather/alarm grammar)")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-dev", type=int, default=None)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a tagger (baseline, augmented, or pairing)")
    p.add_argument("--config", help="experiment config JSON (replaces the path flags)")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--out")
    p.add_argument("--augment", default="none",
                   help="comma list of augmented JSONL files, or 'none'")
    p.add_argument("--pair-data",
                   help="paraphrase JSONL used only for pairing (no task loss)")
    p.add_argument("--pairing", choices=["none", "clean", "alp", "both"], default="none")
    p.add_argument("--lambda-sf", type=float, default=0.1)
    p.add_argument("--lambda-a", type=float, default=0.01)
    p.add_argument("--pair-cap", type=int, default=10)
    p.add_argument("--no-para-para", action="store_true")
    p.add_argument("--hidden", type=int, default=200)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=0.001)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--emb", type=int, default=128)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--optimizer", choices=["adamw", "sgd"], default="adamw")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("paraphrase", help="produce paraphrase beams into a cache file")
    p.add_argument("--data", required=True)
    p.add_argument("--source", choices=["rules", "seq2seq", "adapter"], required=True)
    p.add_argument("--grammar", help="grammar JSON supplying rewrite rules (rules source)")
    p.add_argument("--adapter-cmd", help="command line of the adapter child process")
    p.add_argument("--adapter-name", default="bt")
    p.add_argument("--timeout", type=float, default=120.0)
    p.add_argument("--seq2seq-model", help="reuse a trained autoencoder checkpoint")
    p.add_argument("--save-seq2seq", help="save the trained autoencoder here")
    p.add_argument("--autoencoder-epochs", type=int, default=30)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_paraphrase)

    p = sub.add_parser("augment", help="self-train-tag cached paraphrases into training data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="original training dataset")
    p.add_argument("--cache", required=True, help="comma list of paraphrase caches")
    p.add_argument("--weight", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("advset", help="adversarial test set construction")
    advsub = p.add_subparsers(dest="advset_command", required=True)
    b = advsub.add_parser("build", help="flip-filter paraphrases into candidates")
    b.add_argument("--model", required=True)
    b.add_argument("--data", required=True, help="original (test) dataset")
    b.add_argument("--cache", required=True)
    b.add_argument("--store", required=True, help="candidate event-log file")
    b.set_defaults(func=cmd_advset_build)
    e = advsub.add_parser("export", help="export final-valid candidates")
    e.add_argument("--store", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_advset_export)

    p = sub.add_parser("annotate", help="annotation service")
    annsub = p.add_subparsers(dest="annotate_command", required=True)
    s = annsub.add_parser("serve", help="serve the annotation HTTP API (and UI if built)")
    s.add_argument("--store", required=True)
    s.add_argument("--labelspace", required=True)
    s.add_argument("--tokens", default=os.environ.get("ROBUSTSLU_TOKENS"),
                   help="token file (or ROBUSTSLU_TOKENS)")
    s.add_argument("--host", default=os.environ.get("ROBUSTSLU_HOST", "127.0.0.1"))
    s.add_argument("--port", type=int, default=int(os.environ.get("ROBUSTSLU_PORT", "8570")))
    s.add_argument("--lease-minutes", type=float, default=30.0)
    s.add_argument("--hide-original", action="store_true")
    s.add_argument("--ui-dir", help="directory with the built UI bundle")
    s.set_defaults(func=cmd_annotate_serve)
    d = annsub.add_parser("seed-demo", help="write a demo store/tokens/labelspace")
    d.add_argument("--out", required=True)
    d.add_argument("--n", type=int, default=5)
    d.set_defaults(func=cmd_annotate_seed_demo)

    p = sub.add_parser("eval", help="evaluate models on clean + adversarial sets")
    p.add_argument("--model", action="append", help="name=checkpoint (repeatable)")
    p.add_argument("--ensemble", action="append",
                   help="name=ckpt1,ckpt2,... (repeatable)")
    p.add_argument("--clean", required=True)
    p.add_argument("--adv", action="append", help="name=dataset (repeatable)")
    p.add_argument("--adv-file", help="exported advset TSV; split per source column")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render a report.jsonl as an aligned table")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
