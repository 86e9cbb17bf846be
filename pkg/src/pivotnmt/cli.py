"""Command-line interface.

Subcommands cover corpus generation, the subword pipeline, training and
transfer operations, decoding, scoring, and named end-to-end recipes. Every
artifact a command writes lands under a run directory and is recorded in a
manifest with its content hash; `report` re-verifies those hashes and fails
loudly on any mismatch.

Errors exit nonzero with one machine-parseable line on stderr:
    error code=<class> msg="<details>"
where <class> is one of usage, missing-input, invalid-config, hash-mismatch,
runtime.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import bpe
from .adapter import AdapterMatrix, collect_pairs, fit_adapter
from .bleu import bleu
from .checkpoint import Checkpoint
from .data import NoiseConfig, ParallelCorpus
from .decoding import BeamConfig, backtranslate, distill_teacher_student, pivot_translate, translate_tokens
from .model import ModelConfig, init_params
from .recipes import (
    GRIDS,
    RecipeError,
    Settings,
    Workbench,
    run_recipe,
)
from .toyworld import ToyWorldSpec, write_toy_corpora
from .training import (
    TrainSchedule,
    TrainingError,
    crosslingual_pretrain,
    finetune,
    model_of,
    plain_transfer_init,
    stepwise_pretrain,
    train,
)

log = logging.getLogger(__name__)


class CliError(Exception):
    def __init__(self, code: str, msg: str):
        super().__init__(msg)
        self.code = code


_EXIT_CODES = {
    "usage": 2,
    "missing-input": 3,
    "invalid-config": 4,
    "hash-mismatch": 5,
    "runtime": 1,
}


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """Artifact ledger for one run directory."""

    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        self.entries = []

    def add(self, path, role: str, stage: str):
        path = Path(path)
        self.entries.append(
            {
                "path": str(path.relative_to(self.run_dir)),
                "role": role,
                "stage": stage,
                "sha256": _sha256_file(path),
            }
        )

    def save(self):
        payload = {"artifacts": sorted(self.entries, key=lambda e: e["path"])}
        with open(self.run_dir / "manifest.json", "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")

    @staticmethod
    def verify(run_dir) -> list:
        run_dir = Path(run_dir)
        manifest_path = run_dir / "manifest.json"
        if not manifest_path.exists():
            return [f"missing manifest at {manifest_path}"]
        with open(manifest_path, encoding="utf-8") as f:
            payload = json.load(f)
        problems = []
        for e in payload.get("artifacts", []):
            p = run_dir / e["path"]
            if not p.exists():
                problems.append(f"missing artifact {e['path']}")
            elif _sha256_file(p) != e["sha256"]:
                problems.append(f"hash mismatch for {e['path']}")
        return problems


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _require_file(path, what="input") -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError("missing-input", f"{what} file not found: {p}")
    return p


def load_experiment_config(path=None, overrides=()) -> dict:
    """Load the sectioned JSON config and apply --set overrides (flags win)."""
    raw = {}
    if path is not None:
        with open(_require_file(path, "config"), encoding="utf-8") as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as e:
                raise CliError("invalid-config", f"bad JSON in {path}: {e}")
    for item in overrides:
        if "=" not in item:
            raise CliError("usage", f"--set needs section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        keys = dotted.split(".")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = raw
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = parsed
    return raw


def experiment_pieces(raw: dict):
    try:
        world = ToyWorldSpec(**raw.get("world", {}))
        world.languages = tuple(world.languages)
        world.sentence_length_range = tuple(world.sentence_length_range)
        settings = Settings.from_dict(raw.get("settings", {}))
    except Exception as e:
        raise CliError("invalid-config", f"bad experiment config: {e}")
    return world, settings


def _schedule_from(raw: dict, section: str, default: TrainSchedule) -> TrainSchedule:
    if section in raw:
        return TrainSchedule(**raw[section])
    return default


def _model_config_from(raw: dict) -> ModelConfig:
    return ModelConfig(**raw.get("model", {}))


def _read_lines(path) -> list:
    with open(_require_file(path), encoding="utf-8") as f:
        return f.read().splitlines()


def _read_token_lines(path) -> list:
    return [l.split() for l in _read_lines(path)]


def _write_lines(path, lines):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for l in lines:
            f.write(l + "\n")


def _load_corpus(src, tgt, src_lang="src", tgt_lang="tgt", weight=1.0) -> ParallelCorpus:
    return ParallelCorpus.load(
        _require_file(src, "source corpus"),
        _require_file(tgt, "target corpus"),
        src_lang,
        tgt_lang,
        weight=weight,
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_toy(args):
    raw = load_experiment_config(args.config, args.set or [])
    world, _ = experiment_pieces(raw)
    if args.seed is not None:
        world.seed = args.seed
    out = Path(args.out)
    write_toy_corpora(world, out)
    print(f"wrote toy corpora to {out}")
    return 0


def cmd_learn_bpe(args):
    lines = []
    for p in args.input:
        lines.extend(_read_lines(p))
    model = bpe.learn_bpe(lines, args.merges, tuple(args.languages.split(",")) if args.languages else ())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    model.save(args.out)
    print(f"learned {len(model.merges)} merges -> {args.out}")
    return 0


def cmd_apply_bpe(args):
    model = bpe.BpeModel.load(_require_file(args.model, "BPE model"))
    out = [" ".join(bpe.apply_bpe(model, l)) for l in _read_lines(args.input)]
    _write_lines(args.output, out)
    return 0


def cmd_build_vocab(args):
    corpora = [[l.split() for l in _read_lines(p)] for p in args.input]
    vocab = bpe.build_vocab(
        corpora,
        include_blank=args.blank,
        language_tags=tuple(args.tags.split(",")) if args.tags else (),
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    vocab.save(args.out)
    print(f"vocabulary of {len(vocab)} tokens -> {args.out}")
    return 0


def _vocab(path) -> bpe.Vocabulary:
    return bpe.Vocabulary.load(_require_file(path, "vocabulary"))


def cmd_train(args):
    raw = load_experiment_config(args.config, args.set or [])
    config = _model_config_from(raw)
    schedule = _schedule_from(raw, args.schedule_section, TrainSchedule())
    sv, tv = _vocab(args.src_vocab), _vocab(args.tgt_vocab)
    corpus = _load_corpus(args.src_train, args.tgt_train, args.src_lang, args.tgt_lang)
    val = _load_corpus(args.src_val, args.tgt_val, args.src_lang, args.tgt_lang)
    if args.init_from:
        parent = Checkpoint.load(_require_file(args.init_from, "checkpoint"))
        model = model_of(parent, sv, tv)
    else:
        model = init_params(config, sv, tv, args.seed)
    ck = train(
        model,
        corpus,
        val,
        schedule,
        seed=args.seed,
        frozen_groups=tuple(args.frozen.split(",")) if args.frozen else (),
        recipe=args.recipe_name,
        log_path=args.log,
    )
    ck.save(args.out)
    print(f"checkpoint -> {args.out} (best val ppl {ck.schedule_state.get('best_ppl')})")
    return 0


def cmd_transfer_init(args):
    a = Checkpoint.load(_require_file(args.encoder_parent, "encoder parent"))
    b = Checkpoint.load(_require_file(args.decoder_parent, "decoder parent"))
    child = plain_transfer_init(a, b)
    child.save(args.out)
    print(f"assembled checkpoint -> {args.out}")
    return 0


def cmd_stepwise(args):
    raw = load_experiment_config(args.config, args.set or [])
    config = _model_config_from(raw)
    schedule = _schedule_from(raw, "pretrain", TrainSchedule())
    joint_vocab = _vocab(args.joint_vocab)
    piv_vocab = _vocab(args.piv_vocab)
    tgt_vocab = _vocab(args.tgt_vocab)
    src_piv = (
        _load_corpus(args.src_piv_src, args.src_piv_tgt, "src", "piv"),
        _load_corpus(args.src_piv_val_src, args.src_piv_val_tgt, "src", "piv"),
    )
    piv_tgt = (
        _load_corpus(args.piv_tgt_src, args.piv_tgt_tgt, "piv", "tgt"),
        _load_corpus(args.piv_tgt_val_src, args.piv_tgt_val_tgt, "piv", "tgt"),
    )
    stage1 = Checkpoint.load(_require_file(args.stage1, "stage-1 checkpoint")) if args.stage1 else None
    ck = stepwise_pretrain(
        config, joint_vocab, piv_vocab, tgt_vocab, src_piv, piv_tgt,
        schedule, seed=args.seed, stage1_ckpt=stage1,
    )
    ck.save(args.out)
    print(f"step-wise checkpoint -> {args.out}")
    return 0


def cmd_xenc_pretrain(args):
    raw = load_experiment_config(args.config, args.set or [])
    config = _model_config_from(raw)
    schedule = _schedule_from(raw, "pretrain", TrainSchedule())
    joint_vocab = _vocab(args.joint_vocab)
    piv_vocab = _vocab(args.piv_vocab)
    src_piv = (
        _load_corpus(args.src_train, args.tgt_train, "src", "piv"),
        _load_corpus(args.src_val, args.tgt_val, "src", "piv"),
    )
    lines = _read_token_lines(args.autoenc)
    noise = None
    if not args.clean:
        noise = NoiseConfig(p_del=args.p_del, p_rep=args.p_rep, d_per=args.d_per, seed=args.seed)
    ck = crosslingual_pretrain(
        config, joint_vocab, piv_vocab, src_piv, lines, noise, schedule,
        seed=args.seed, autoenc_weight=args.ae_weight,
    )
    ck.save(args.out)
    print(f"cross-lingual encoder checkpoint -> {args.out}")
    return 0


def cmd_fit_adapter(args):
    sv_a, tv_a = _vocab(args.src_encoder_src_vocab), _vocab(args.src_encoder_tgt_vocab)
    sv_b, tv_b = _vocab(args.piv_encoder_src_vocab), _vocab(args.piv_encoder_tgt_vocab)
    enc_src = model_of(Checkpoint.load(_require_file(args.src_encoder, "checkpoint")), sv_a, tv_a)
    enc_piv = model_of(Checkpoint.load(_require_file(args.piv_encoder, "checkpoint")), sv_b, tv_b)
    corpus = _load_corpus(args.src, args.piv, "src", "piv")
    pooled = collect_pairs(
        corpus, enc_src, enc_piv, mode=args.pooling, max_pairs=args.pairs, seed=args.seed
    )
    adapter = fit_adapter(pooled)
    adapter.save(args.out)
    print(
        f"adapter -> {args.out} (orthogonality error {adapter.orthogonality_error:.2e}, "
        f"residual {adapter.fit_residual:.4f})"
    )
    return 0


def cmd_finetune(args):
    raw = load_experiment_config(args.config, args.set or [])
    schedule = _schedule_from(raw, "finetune", TrainSchedule.finetune_default())
    sv, tv = _vocab(args.src_vocab), _vocab(args.tgt_vocab)
    ck = Checkpoint.load(_require_file(args.ckpt, "checkpoint"))
    corpus = _load_corpus(args.src_train, args.tgt_train, "src", "tgt")
    val = _load_corpus(args.src_val, args.tgt_val, "src", "tgt")
    adapter = AdapterMatrix.load(_require_file(args.adapter, "adapter")) if args.adapter else None
    out = finetune(
        ck, sv, tv, (corpus, val), schedule, seed=args.seed,
        adapter=adapter,
        allow_adapter_after_stepwise=args.force_adapter,
    )
    out.save(args.out)
    print(f"fine-tuned checkpoint -> {args.out}")
    return 0


def _beam_from_args(args) -> BeamConfig:
    return BeamConfig(beam_size=args.beam, length_normalization_alpha=args.alpha)


def cmd_decode(args):
    sv, tv = _vocab(args.src_vocab), _vocab(args.tgt_vocab)
    model = model_of(Checkpoint.load(_require_file(args.ckpt, "checkpoint")), sv, tv)
    adapter = AdapterMatrix.load(_require_file(args.adapter, "adapter")) if args.adapter else None
    sentences = _read_token_lines(args.input)
    prefix = (sv.tag_id(args.tag),) if args.tag else ()
    hyps = translate_tokens(
        model, sentences, _beam_from_args(args), adapter=adapter, src_prefix=prefix
    )
    _write_lines(args.output, [bpe.detokenize(h) for h in hyps])
    return 0


def cmd_pivot_decode(args):
    m1 = model_of(
        Checkpoint.load(_require_file(args.src_piv_ckpt, "checkpoint")),
        _vocab(args.src_vocab), _vocab(args.piv_vocab),
    )
    m2 = model_of(
        Checkpoint.load(_require_file(args.piv_tgt_ckpt, "checkpoint")),
        _vocab(args.piv_vocab2 or args.piv_vocab), _vocab(args.tgt_vocab),
    )
    sentences = _read_token_lines(args.input)
    hyps = pivot_translate(m1, m2, sentences, _beam_from_args(args))
    _write_lines(args.output, [bpe.detokenize(h) for h in hyps])
    return 0


def cmd_distill(args):
    teacher = model_of(
        Checkpoint.load(_require_file(args.teacher, "teacher checkpoint")),
        _vocab(args.piv_vocab), _vocab(args.tgt_vocab),
    )
    piv_bpe = bpe.BpeModel.load(_require_file(args.piv_bpe, "pivot BPE model"))
    corpus = _load_corpus(args.src, args.piv, "src", "piv")
    synth, dropped = distill_teacher_student(
        corpus, teacher, _beam_from_args(args), out_lang="tgt",
        segment=lambda p: bpe.apply_bpe(piv_bpe, " ".join(p)),
        detokenize=lambda toks: bpe.detokenize(toks).split(),
    )
    synth.save(args.out_src, args.out_tgt)
    print(f"distilled {len(synth)} pairs ({dropped} dropped)")
    return 0


def cmd_backtranslate(args):
    model = model_of(
        Checkpoint.load(_require_file(args.piv_src_ckpt, "checkpoint")),
        _vocab(args.piv_vocab), _vocab(args.src_vocab),
    )
    piv_bpe = bpe.BpeModel.load(_require_file(args.piv_bpe, "pivot BPE model"))
    corpus = _load_corpus(args.piv, args.tgt, "piv", "tgt")
    synth, dropped = backtranslate(
        corpus, model, _beam_from_args(args), out_lang="src",
        segment=lambda p: bpe.apply_bpe(piv_bpe, " ".join(p)),
        detokenize=lambda toks: bpe.detokenize(toks).split(),
    )
    synth.save(args.out_src, args.out_tgt)
    print(f"back-translated {len(synth)} pairs ({dropped} dropped)")
    return 0


def cmd_bleu(args):
    hyp = _read_token_lines(args.hyp)
    ref = _read_token_lines(args.ref)
    report = bleu(hyp, ref)
    print(report.format())
    return 0


def cmd_recipe(args):
    raw = load_experiment_config(args.config, args.set or [])
    world, settings = experiment_pieces(raw)
    out_root = Path(args.out)
    names = list(GRIDS[args.grid]) if args.grid else [args.name]
    if not names or names == [None]:
        raise CliError("usage", "recipe needs --name or --grid")
    seeds = [int(s) for s in args.seeds.split(",")]
    cache_dir = out_root / "_stages"
    all_results = []
    for seed in seeds:
        world_seeded = ToyWorldSpec(**{**asdict(world), "seed": seed})
        wb = Workbench(world_seeded, settings, seed, cache_dir=cache_dir)
        for name in names:
            run_dir = out_root / f"{name.replace('/', '_')}--seed{seed}"
            manifest_path = run_dir / "manifest.json"
            if manifest_path.exists() and not args.force:
                problems = RunManifest.verify(run_dir)
                if not problems:
                    print(f"{run_dir} already complete; skipping (use --force to rerun)")
                    with open(run_dir / "report.json", encoding="utf-8") as f:
                        all_results.append(json.load(f))
                    continue
            run_dir.mkdir(parents=True, exist_ok=True)
            manifest = RunManifest(run_dir)
            res = run_recipe(wb, name)
            report = {
                "recipe": res.recipe,
                "seed": res.seed,
                "test_bleu": res.test_bleu,
                "val_bleu": res.val_bleu,
                "checkpoint_hash": res.checkpoint_hash,
                "runtime_s": res.runtime_s,
                "details": res.report,
                "config": raw,
            }
            report_path = run_dir / "report.json"
            with open(report_path, "w", encoding="utf-8") as f:
                json.dump(report, f, indent=2, sort_keys=True)
                f.write("\n")
            config_path = run_dir / "config.json"
            with open(config_path, "w", encoding="utf-8") as f:
                json.dump(raw, f, indent=2, sort_keys=True)
                f.write("\n")
            manifest.add(report_path, "report", name)
            manifest.add(config_path, "config", name)
            manifest.save()
            all_results.append(report)
            print(
                f"{name} seed={seed}: test BLEU {res.test_bleu:.2f} "
                f"val BLEU {res.val_bleu:.2f} ({res.runtime_s}s) -> {run_dir}"
            )
    if args.grid:
        summary = {}
        for name in names:
            scores = [r["test_bleu"] for r in all_results if r["recipe"] == name]
            summary[name] = {
                "mean": float(np.mean(scores)),
                "sd": float(np.std(scores)),
                "scores": scores,
            }
        grid_path = out_root / f"grid-{args.grid}.json"
        with open(grid_path, "w", encoding="utf-8") as f:
            json.dump({"grid": args.grid, "summary": summary}, f, indent=2, sort_keys=True)
            f.write("\n")
        print(f"\n{args.grid} (mean per recipe over seeds {seeds}):")
        for name in names:
            m = summary[name]
            print(f"  {name:>26s}  {m['mean']:6.2f} +- {m['sd']:.2f}")
    return 0


def cmd_report(args):
    problems = RunManifest.verify(args.run)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        raise CliError("hash-mismatch", f"{len(problems)} manifest problem(s) in {args.run}")
    report_path = Path(args.run) / "report.json"
    if report_path.exists():
        print(report_path.read_text(encoding="utf-8").rstrip())
    else:
        print(f"manifest verified: {args.run}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", default=None, help="JSON experiment config")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="config override (flags win over the file)")
    p.add_argument("--seed", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pivotnmt",
        description="Pivot-based transfer learning for desk-scale translation experiments",
    )
    ap.add_argument("--serial", action="store_true",
                    help="single-threaded math kernels for bit-exact reproducibility")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="generate toy-world corpora")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("learn-bpe", help="learn byte pair encoding merges")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--merges", type=int, required=True)
    p.add_argument("--languages", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn_bpe)

    p = sub.add_parser("apply-bpe", help="segment text with a learned BPE model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_apply_bpe)

    p = sub.add_parser("build-vocab", help="build a vocabulary from segmented text")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--blank", action="store_true", help="reserve the noise <BLANK> token")
    p.add_argument("--tags", default=None, help="comma-separated language tags")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train a model on a parallel corpus")
    _add_common(p)
    for flag in ("src-train", "tgt-train", "src-val", "tgt-val", "src-vocab", "tgt-vocab"):
        p.add_argument(f"--{flag}", required=True)
    p.add_argument("--src-lang", default="src")
    p.add_argument("--tgt-lang", default="tgt")
    p.add_argument("--frozen", default=None, help="comma-separated parameter groups")
    p.add_argument("--init-from", default=None)
    p.add_argument("--schedule-section", default="pretrain")
    p.add_argument("--recipe-name", default="train")
    p.add_argument("--log", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer-init", help="assemble encoder/decoder from two parents")
    p.add_argument("--encoder-parent", required=True)
    p.add_argument("--decoder-parent", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer_init)

    p = sub.add_parser("stepwise", help="step-wise pre-training (two stages, frozen encoder)")
    _add_common(p)
    for flag in (
        "joint-vocab", "piv-vocab", "tgt-vocab",
        "src-piv-src", "src-piv-tgt", "src-piv-val-src", "src-piv-val-tgt",
        "piv-tgt-src", "piv-tgt-tgt", "piv-tgt-val-src", "piv-tgt-val-tgt",
    ):
        p.add_argument(f"--{flag}", required=True)
    p.add_argument("--stage1", default=None, help="existing stage-1 checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stepwise)

    p = sub.add_parser("xenc-pretrain", help="cross-lingual encoder pre-training")
    _add_common(p)
    for flag in ("joint-vocab", "piv-vocab", "src-train", "tgt-train", "src-val", "tgt-val", "autoenc"):
        p.add_argument(f"--{flag}", required=True)
    p.add_argument("--clean", action="store_true", help="disable input noising")
    p.add_argument("--p-del", type=float, default=0.1)
    p.add_argument("--p-rep", type=float, default=0.1)
    p.add_argument("--d-per", type=int, default=3)
    p.add_argument("--ae-weight", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_xenc_pretrain)

    p = sub.add_parser("fit-adapter", help="fit the orthogonal encoder-output adapter")
    _add_common(p)
    for flag in (
        "src", "piv", "src-encoder", "piv-encoder",
        "src-encoder-src-vocab", "src-encoder-tgt-vocab",
        "piv-encoder-src-vocab", "piv-encoder-tgt-vocab",
    ):
        p.add_argument(f"--{flag}", required=True)
    p.add_argument("--pooling", choices=("average", "max"), default="average")
    p.add_argument("--pairs", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_adapter)

    p = sub.add_parser("finetune", help="continue training on source-target data")
    _add_common(p)
    for flag in ("ckpt", "src-train", "tgt-train", "src-val", "tgt-val", "src-vocab", "tgt-vocab"):
        p.add_argument(f"--{flag}", required=True)
    p.add_argument("--adapter", default=None)
    p.add_argument("--force-adapter", action="store_true",
                   help="override the adapter-after-stepwise guard")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("decode", help="translate a segmented input file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--adapter", default=None)
    p.add_argument("--tag", default=None, help="target-language tag for multilingual models")
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.0)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("pivot-decode", help="two-step decoding via the pivot language")
    p.add_argument("--src-piv-ckpt", required=True)
    p.add_argument("--piv-tgt-ckpt", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--piv-vocab", required=True)
    p.add_argument("--piv-vocab2", default=None)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.0)
    p.set_defaults(func=cmd_pivot_decode)

    p = sub.add_parser("distill", help="teacher-student synthetic data generation")
    p.add_argument("--teacher", required=True)
    p.add_argument("--piv-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--piv-bpe", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--piv", required=True)
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.0)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("backtranslate", help="pivot-based back-translation")
    p.add_argument("--piv-src-ckpt", required=True)
    p.add_argument("--piv-vocab", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--piv-bpe", required=True)
    p.add_argument("--piv", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.0)
    p.set_defaults(func=cmd_backtranslate)

    p = sub.add_parser("bleu", help="corpus BLEU of a hypothesis file against a reference")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(func=cmd_bleu)

    p = sub.add_parser("recipe", help="run a named end-to-end recipe or a grid")
    _add_common(p)
    p.add_argument("--name", default=None)
    p.add_argument("--grid", choices=sorted(GRIDS), default=None)
    p.add_argument("--seeds", default="1")
    p.add_argument("--out", default="runs")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_recipe)

    p = sub.add_parser("report", help="verify a run directory's manifest and print its report")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.serial:
        try:
            from threadpoolctl import threadpool_limits

            # hold the limiter open for the whole process
            global _SERIAL_CTX
            _SERIAL_CTX = threadpool_limits(limits=1)
        except ImportError:
            log.warning("threadpoolctl unavailable; serial mode not enforced")
    try:
        return args.func(args)
    except CliError as e:
        print(f'error code={e.code} msg="{e}"', file=sys.stderr)
        return _EXIT_CODES.get(e.code, 1)
    except FileNotFoundError as e:
        print(f'error code=missing-input msg="{e}"', file=sys.stderr)
        return _EXIT_CODES["missing-input"]
    except (TrainingError, RecipeError) as e:
        code = "hash-mismatch" if "hash mismatch" in str(e) else "runtime"
        print(f'error code={code} msg="{e}"', file=sys.stderr)
        return _EXIT_CODES[code]
    except (bpe.BpeError, ValueError, KeyError) as e:
        print(f'error code=invalid-config msg="{e}"', file=sys.stderr)
        return _EXIT_CODES["invalid-config"]
    except Exception as e:  # pragma: no cover - last resort
        print(f'error code=runtime msg="{type(e).__name__}: {e}"', file=sys.stderr)
        return _EXIT_CODES["runtime"]


if __name__ == "__main__":
    sys.exit(main())
