"""Named end-to-end experiment recipes over the synthetic language triple.

A Workbench owns one (world, settings, seed) tuple and lazily builds shared
stages: subword models for the separate/joint/multilingual regimes, the
pre-trained parents, adapters, and synthetic corpora. Recipes compose those
stages and score the resulting system on the held-out source->target test
set. Stages are cached in memory and, when a cache directory is given, on
disk keyed by a digest of the full configuration, so grid runs share parents
across recipes and reruns are no-ops.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import bpe
from .adapter import AdapterMatrix, collect_pairs, fit_adapter
from .bleu import BleuReport, bleu
from .checkpoint import Checkpoint
from .data import NoiseConfig, ParallelCorpus, mix_corpora
from .decoding import (
    BeamConfig,
    backtranslate,
    distill_teacher_student,
    pivot_translate,
    translate_tokens,
)
from .model import ModelConfig, Seq2SeqModel, init_params
from .toyworld import ToyWorldSpec, generate_toy_corpora
from .training import (
    TrainSchedule,
    crosslingual_pretrain,
    finetune,
    model_of,
    plain_transfer_init,
    stepwise_pretrain,
    train,
    train_multilingual,
)

log = logging.getLogger(__name__)

TABLE2_RECIPES = (
    "direct",
    "multilingual-m2m",
    "multilingual-m2o",
    "plain",
    "plain+adapter",
    "xenc",
    "xenc+adapter",
    "stepwise",
    "stepwise+xenc",
)
TABLE5_RECIPES = (
    "zeroshot-m2m",
    "zeroshot-pivot",
    "teacher-student",
    "zeroshot-plain",
    "zeroshot-stepwise",
    "zeroshot-stepwise+xenc",
    "distill-stepwise+xenc",
)
TABLE4_RECIPES = (
    "xenc-mono-clean",
    "xenc-mono-noisy",
    "xenc-parallel-clean",
    "xenc-parallel-noisy",
)
TABLE6_RECIPES = (
    "direct",
    "backtranslate-direct",
    "backtranslate-plain",
)
GRIDS = {
    "table2": TABLE2_RECIPES,
    "table4": TABLE4_RECIPES,
    "table5": TABLE5_RECIPES,
    "table6": TABLE6_RECIPES,
}
ALL_RECIPES = tuple(dict.fromkeys(sum((list(v) for v in GRIDS.values()), [])))


class RecipeError(Exception):
    pass


@dataclass
class Settings:
    """Everything a grid run needs besides the world spec and the seed."""

    model: ModelConfig = field(default_factory=lambda: ModelConfig(model_dim=64, ff_dim=128))
    pretrain: TrainSchedule = field(
        default_factory=lambda: TrainSchedule(
            initial_lr=1e-3, checkpoint_interval=200, max_updates=600, max_tokens=1024
        )
    )
    finetune: TrainSchedule = field(
        default_factory=lambda: TrainSchedule(
            initial_lr=1e-3, checkpoint_interval=100, max_updates=300, max_tokens=1024
        )
    )
    merge_count: int = 300
    p_del: float = 0.1
    p_rep: float = 0.1
    d_per: int = 3
    ae_weight: float = 1.0
    adapter_pairs: int = 2000
    adapter_pooling: str = "average"
    beam: BeamConfig = field(default_factory=BeamConfig)
    distill_pairs: int = 4000
    backtranslate_pairs: int = 4000
    synthetic_per_real: int = 2

    def to_dict(self) -> dict:
        out = asdict(self)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "Settings":
        raw = dict(raw)
        if "model" in raw:
            raw["model"] = ModelConfig(**raw["model"])
        if "pretrain" in raw:
            raw["pretrain"] = TrainSchedule(**raw["pretrain"])
        if "finetune" in raw:
            raw["finetune"] = TrainSchedule(**raw["finetune"])
        if "beam" in raw:
            raw["beam"] = BeamConfig(**raw["beam"])
        return cls(**raw)


@dataclass
class RecipeResult:
    recipe: str
    seed: int
    test_bleu: float
    val_bleu: float
    checkpoint_hash: str
    runtime_s: float
    report: dict


def _words(lines) -> list:
    return [" ".join(s) for s in lines]


class Workbench:
    """Lazily built shared stages for one (world, settings, seed)."""

    def __init__(self, world: ToyWorldSpec, settings: Settings, seed: int, cache_dir=None):
        self.world = world
        self.settings = settings
        self.seed = seed
        self.corpora = generate_toy_corpora(world)
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._mem: dict = {}
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    # -- configuration digest for disk caching ------------------------------

    def config_digest(self) -> str:
        blob = json.dumps(
            {
                "world": asdict(self.world),
                "settings": self.settings.to_dict(),
                "seed": self.seed,
            },
            sort_keys=True,
            default=str,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def _cached(self, key: str, build):
        if key in self._mem:
            return self._mem[key]
        if self.cache_dir:
            path = self.cache_dir / f"{self.config_digest()}--{key}.ckpt"
            if path.exists():
                value = Checkpoint.load(path)
                self._mem[key] = value
                return value
        value = build()
        self._mem[key] = value
        if self.cache_dir and isinstance(value, Checkpoint):
            path = self.cache_dir / f"{self.config_digest()}--{key}.ckpt"
            value.save(path)
        return value

    def _memo(self, key: str, build):
        if key not in self._mem:
            self._mem[key] = build()
        return self._mem[key]

    # -- text resources ------------------------------------------------------

    def lang_lines(self, lang: str) -> list:
        c = self.corpora
        if lang == "src":
            return _words([s for s, _ in c["src-piv"].pairs]) + _words(
                [s for s, _ in c["src-tgt"].pairs]
            )
        if lang == "piv":
            return (
                _words([t for _, t in c["src-piv"].pairs])
                + _words([s for s, _ in c["piv-tgt"].pairs])
                + _words(c["mono-piv"])
            )
        if lang == "tgt":
            return _words([t for _, t in c["piv-tgt"].pairs]) + _words(
                [t for _, t in c["src-tgt"].pairs]
            )
        raise RecipeError(f"unknown language {lang}")

    def bpe_sep(self, lang: str) -> bpe.BpeModel:
        return self._memo(
            f"bpe-sep-{lang}",
            lambda: bpe.learn_bpe(self.lang_lines(lang), self.settings.merge_count, (lang,)),
        )

    def bpe_joint(self) -> bpe.BpeModel:
        return self._memo(
            "bpe-joint",
            lambda: bpe.learn_bpe(
                self.lang_lines("src") + self.lang_lines("piv"),
                self.settings.merge_count,
                ("src", "piv"),
            ),
        )

    def bpe_multi(self) -> bpe.BpeModel:
        return self._memo(
            "bpe-multi",
            lambda: bpe.learn_bpe(
                self.lang_lines("src") + self.lang_lines("piv") + self.lang_lines("tgt"),
                self.settings.merge_count,
                ("src", "piv", "tgt"),
            ),
        )

    def seg_lines(self, model: bpe.BpeModel, lines) -> list:
        return [bpe.apply_bpe(model, l) for l in lines]

    def seg_corpus(self, corpus: ParallelCorpus, src_bpe, tgt_bpe) -> ParallelCorpus:
        pairs = [
            (
                bpe.apply_bpe(src_bpe, " ".join(s)),
                bpe.apply_bpe(tgt_bpe, " ".join(t)),
            )
            for s, t in corpus.pairs
        ]
        return ParallelCorpus(
            pairs=pairs,
            src_lang=corpus.src_lang,
            tgt_lang=corpus.tgt_lang,
            weight=corpus.weight,
        )

    def vocab_sep(self, lang: str) -> bpe.Vocabulary:
        def build():
            seg = self.seg_lines(self.bpe_sep(lang), self.lang_lines(lang))
            return bpe.build_vocab([seg])

        return self._memo(f"vocab-sep-{lang}", build)

    def vocab_joint(self, with_blank: bool) -> bpe.Vocabulary:
        def build():
            joint = self.bpe_joint()
            seg = self.seg_lines(joint, self.lang_lines("src") + self.lang_lines("piv"))
            return bpe.build_vocab([seg], include_blank=with_blank)

        return self._memo(f"vocab-joint-{with_blank}", build)

    def vocab_piv_jointseg(self) -> bpe.Vocabulary:
        """Pivot output vocabulary over joint-BPE segmentations."""

        def build():
            seg = self.seg_lines(self.bpe_joint(), self.lang_lines("piv"))
            return bpe.build_vocab([seg])

        return self._memo("vocab-piv-jointseg", build)

    def vocab_multi(self) -> bpe.Vocabulary:
        def build():
            multi = self.bpe_multi()
            seg = self.seg_lines(
                multi,
                self.lang_lines("src") + self.lang_lines("piv") + self.lang_lines("tgt"),
            )
            return bpe.build_vocab([seg], language_tags=("src", "piv", "tgt"))

        return self._memo("vocab-multi", build)

    # -- pre-trained parents --------------------------------------------------

    def ckpt_sep(self, direction: str) -> Checkpoint:
        """Separate-BPE parent for src-piv, piv-tgt, or piv-src."""

        def build():
            if direction == "piv-src":
                base = self.corpora["src-piv"]
                corpus = ParallelCorpus(
                    pairs=[(t, s) for s, t in base.pairs], src_lang="piv", tgt_lang="src"
                )
                base_val = self.corpora["src-piv.val"]
                val = ParallelCorpus(
                    pairs=[(t, s) for s, t in base_val.pairs], src_lang="piv", tgt_lang="src"
                )
                a, b = "piv", "src"
            else:
                corpus = self.corpora[direction]
                val = self.corpora[f"{direction}.val"]
                a, b = direction.split("-")
            seg = self.seg_corpus(corpus, self.bpe_sep(a), self.bpe_sep(b))
            seg_val = self.seg_corpus(val, self.bpe_sep(a), self.bpe_sep(b))
            model = init_params(
                self.settings.model, self.vocab_sep(a), self.vocab_sep(b), self.seed
            )
            return train(
                model,
                seg,
                seg_val,
                self.settings.pretrain,
                seed=self.seed,
                recipe=f"pretrain-{direction}-sep",
            )

        return self._cached(f"sep-{direction}", build)

    def ckpt_joint_src_piv(self) -> Checkpoint:
        """Step-wise stage 1: src->piv with the joint encoder vocabulary."""

        def build():
            joint = self.bpe_joint()
            seg = self.seg_corpus(self.corpora["src-piv"], joint, joint)
            seg_val = self.seg_corpus(self.corpora["src-piv.val"], joint, joint)
            model = init_params(
                self.settings.model,
                self.vocab_joint(with_blank=False),
                self.vocab_piv_jointseg(),
                self.seed,
            )
            return train(
                model,
                seg,
                seg_val,
                self.settings.pretrain,
                seed=self.seed,
                recipe="pretrain-src-piv-joint",
            )

        return self._cached("joint-src-piv", build)

    def ckpt_xenc(self, ae_source: str = "parallel", noisy: bool = True) -> Checkpoint:
        """Cross-lingual encoder: translation + pivot autoencoding mixture."""

        def build():
            joint = self.bpe_joint()
            seg = self.seg_corpus(self.corpora["src-piv"], joint, joint)
            seg_val = self.seg_corpus(self.corpora["src-piv.val"], joint, joint)
            if ae_source == "mono":
                lines = self.seg_lines(joint, _words(self.corpora["mono-piv"]))
            elif ae_source == "parallel":
                lines = [t for _, t in seg.pairs]
            else:
                raise RecipeError(f"unknown autoencoding source {ae_source}")
            noise = (
                NoiseConfig(
                    p_del=self.settings.p_del,
                    p_rep=self.settings.p_rep,
                    d_per=self.settings.d_per,
                    seed=self.seed,
                )
                if noisy
                else None
            )
            return crosslingual_pretrain(
                self.settings.model,
                self.vocab_joint(with_blank=noisy),
                self.vocab_piv_jointseg(),
                (seg, seg_val),
                lines,
                noise,
                self.settings.pretrain,
                seed=self.seed,
                autoenc_weight=self.settings.ae_weight,
            )

        return self._cached(f"xenc-{ae_source}-{'noisy' if noisy else 'clean'}", build)

    def ckpt_stepwise(self, stage1: str = "joint") -> Checkpoint:
        """Stage 2 (piv->tgt, encoder frozen) on top of a stage-1 encoder."""

        def build():
            if stage1 == "joint":
                first = self.ckpt_joint_src_piv()
                with_blank = False
            else:
                ae_source, kind = stage1.split("-")
                first = self.ckpt_xenc(ae_source, noisy=kind == "noisy")
                with_blank = kind == "noisy"
            joint = self.bpe_joint()
            piv_tgt = self.seg_corpus(self.corpora["piv-tgt"], joint, self.bpe_sep("tgt"))
            piv_tgt_val = self.seg_corpus(
                self.corpora["piv-tgt.val"], joint, self.bpe_sep("tgt")
            )
            return stepwise_pretrain(
                self.settings.model,
                self.vocab_joint(with_blank=with_blank),
                self.vocab_piv_jointseg(),
                self.vocab_sep("tgt"),
                (None, None),  # stage 1 supplied
                (piv_tgt, piv_tgt_val),
                self.settings.pretrain,
                seed=self.seed,
                stage1_ckpt=first,
            )

        return self._cached(f"stepwise-{stage1}", build)

    def ckpt_multilingual(self, kind: str, zeroshot: bool = False) -> Checkpoint:
        def build():
            multi = self.bpe_multi()
            vocab = self.vocab_multi()
            c = self.corpora

            def seg(name, flip=False):
                base = c[name]
                pairs = [(t, s) for s, t in base.pairs] if flip else base.pairs
                langs = (base.tgt_lang, base.src_lang) if flip else (base.src_lang, base.tgt_lang)
                return ParallelCorpus(
                    pairs=[
                        (
                            bpe.apply_bpe(multi, " ".join(s)),
                            bpe.apply_bpe(multi, " ".join(t)),
                        )
                        for s, t in pairs
                    ],
                    src_lang=langs[0],
                    tgt_lang=langs[1],
                )

            if kind == "many2one":
                directions = [seg("src-tgt"), seg("piv-tgt")]
            else:
                directions = [
                    seg("src-piv"),
                    seg("src-piv", flip=True),
                    seg("piv-tgt"),
                    seg("piv-tgt", flip=True),
                ]
                if not zeroshot:
                    directions += [seg("src-tgt"), seg("src-tgt", flip=True)]
            val = seg("src-tgt.val") if not zeroshot else seg("piv-tgt.val")
            # more directions per epoch: scale the budget alongside the data
            schedule = TrainSchedule(**{**asdict(self.settings.pretrain)})
            schedule.max_updates = int(self.settings.pretrain.max_updates * 1.5)
            return train_multilingual(
                self.settings.model,
                vocab,
                directions,
                val,
                schedule,
                seed=self.seed,
                kind=kind,
            )

        key = f"multi-{kind}{'-zeroshot' if zeroshot else ''}"
        return self._cached(key, build)

    # -- adapters --------------------------------------------------------------

    def adapter(self, flavor: str) -> AdapterMatrix:
        """Procrustes adapter: 'plain' uses the two separate parents, 'xenc'
        pools both sides through the shared cross-lingual encoder."""

        def build():
            corpus = self.corpora["src-piv"]
            if flavor == "plain":
                enc_src = model_of(
                    self.ckpt_sep("src-piv"), self.vocab_sep("src"), self.vocab_sep("piv")
                )
                enc_piv = model_of(
                    self.ckpt_sep("piv-tgt"), self.vocab_sep("piv"), self.vocab_sep("tgt")
                )
                seg = self.seg_corpus(corpus, self.bpe_sep("src"), self.bpe_sep("piv"))
            elif flavor == "xenc":
                shared = model_of(
                    self.ckpt_xenc(), self.vocab_joint(True), self.vocab_piv_jointseg()
                )
                enc_src = enc_piv = shared
                joint = self.bpe_joint()
                seg = self.seg_corpus(corpus, joint, joint)
            else:
                raise RecipeError(f"unknown adapter flavor {flavor}")
            pooled = collect_pairs(
                seg,
                enc_src,
                enc_piv,
                mode=self.settings.adapter_pooling,
                max_pairs=self.settings.adapter_pairs,
                seed=self.seed,
            )
            return fit_adapter(pooled)

        return self._memo(f"adapter-{flavor}", build)

    # -- synthetic corpora -------------------------------------------------------

    def distilled_corpus(self) -> ParallelCorpus:
        """Teacher-student synthetic src-tgt data (word-level)."""

        def build():
            teacher = model_of(
                self.ckpt_sep("piv-tgt"), self.vocab_sep("piv"), self.vocab_sep("tgt")
            )
            subset = self.corpora["src-piv"].subset(self.settings.distill_pairs, self.seed)
            piv_bpe = self.bpe_sep("piv")
            synth, dropped = distill_teacher_student(
                subset,
                teacher,
                self.settings.beam,
                out_lang="tgt",
                segment=lambda p: bpe.apply_bpe(piv_bpe, " ".join(p)),
                detokenize=lambda toks: bpe.detokenize(toks).split(),
            )
            log.info("distilled %d pairs (%d dropped)", len(synth), dropped)
            return synth

        return self._memo("distilled", build)

    def backtranslated_corpus(self) -> ParallelCorpus:
        """Synthetic src-tgt data from back-translating the pivot side of piv-tgt."""

        def build():
            piv_src = model_of(
                self.ckpt_sep("piv-src"), self.vocab_sep("piv"), self.vocab_sep("src")
            )
            subset = self.corpora["piv-tgt"].subset(
                self.settings.backtranslate_pairs, self.seed
            )
            piv_bpe = self.bpe_sep("piv")
            synth, dropped = backtranslate(
                subset,
                piv_src,
                self.settings.beam,
                out_lang="src",
                segment=lambda p: bpe.apply_bpe(piv_bpe, " ".join(p)),
                detokenize=lambda toks: bpe.detokenize(toks).split(),
            )
            log.info("back-translated %d pairs (%d dropped)", len(synth), dropped)
            return synth

        return self._memo("backtranslated", build)

    def real_plus_synthetic(self, synth: ParallelCorpus):
        """Real src-tgt oversampled against synthetic at the configured ratio."""
        real = self.corpora["src-tgt"]
        per_real = self.settings.synthetic_per_real
        weight = max(1.0, round(len(synth) / (per_real * len(real))))
        weighted = ParallelCorpus(
            pairs=real.pairs, src_lang=real.src_lang, tgt_lang=real.tgt_lang, weight=weight
        )
        return mix_corpora([(weighted, None), (synth, None)])


# ---------------------------------------------------------------------------
# translators and evaluation
# ---------------------------------------------------------------------------

@dataclass
class Translator:
    """A decodable system: model plus its source segmentation and options."""

    model: Seq2SeqModel
    src_bpe: bpe.BpeModel
    beam: BeamConfig
    adapter: AdapterMatrix | None = None
    tag: str | None = None

    def translate_words(self, word_sentences: list) -> list:
        prefix = ()
        if self.tag is not None:
            prefix = (self.model.src_vocab.tag_id(self.tag),)
        seg = [bpe.apply_bpe(self.src_bpe, " ".join(s)) for s in word_sentences]
        hyps = translate_tokens(
            self.model, seg, self.beam, adapter=self.adapter, src_prefix=prefix
        )
        return [bpe.detokenize(h).split() for h in hyps]

    def score(self, corpus: ParallelCorpus) -> BleuReport:
        hyps = self.translate_words([s for s, _ in corpus.pairs])
        return bleu(hyps, [t for _, t in corpus.pairs])


def _result(recipe, wb, report_test, report_val, ckpt_hash, t0, extra=None) -> RecipeResult:
    details = {"test": report_test.format(), "val": report_val.format()}
    if extra:
        details.update(extra)
    return RecipeResult(
        recipe=recipe,
        seed=wb.seed,
        test_bleu=report_test.score,
        val_bleu=report_val.score,
        checkpoint_hash=ckpt_hash,
        runtime_s=round(time.perf_counter() - t0, 2),
        report=details,
    )


def run_recipe(wb: Workbench, name: str) -> RecipeResult:
    """Execute one named recipe end to end and score it on the toy test set."""
    t0 = time.perf_counter()
    s = wb.settings
    test = wb.corpora["src-tgt.test"]
    val = wb.corpora["src-tgt.val"]

    def ft_pair(src_bpe):
        trainc = wb.seg_corpus(wb.corpora["src-tgt"], src_bpe, wb.bpe_sep("tgt"))
        valc = wb.seg_corpus(wb.corpora["src-tgt.val"], src_bpe, wb.bpe_sep("tgt"))
        return trainc, valc

    if name == "direct":
        seg_train, seg_val = ft_pair(wb.bpe_sep("src"))
        model = init_params(s.model, wb.vocab_sep("src"), wb.vocab_sep("tgt"), wb.seed)
        ck = train(model, seg_train, seg_val, s.finetune, seed=wb.seed, recipe="direct")
        tr = Translator(model_of(ck, wb.vocab_sep("src"), wb.vocab_sep("tgt")), wb.bpe_sep("src"), s.beam)
        return _result(name, wb, tr.score(test), tr.score(val), ck.content_hash(), t0)

    if name in ("multilingual-m2m", "multilingual-m2o", "zeroshot-m2m"):
        kind = "many2one" if name.endswith("m2o") else "many2many"
        ck = wb.ckpt_multilingual(kind, zeroshot=name.startswith("zeroshot"))
        tr = Translator(
            model_of(ck, wb.vocab_multi(), wb.vocab_multi()),
            wb.bpe_multi(),
            s.beam,
            tag="tgt",
        )
        return _result(name, wb, tr.score(test), tr.score(val), ck.content_hash(), t0)

    if name in ("plain", "plain+adapter", "xenc", "xenc+adapter"):
        use_xenc = name.startswith("xenc")
        enc_parent = wb.ckpt_xenc() if use_xenc else wb.ckpt_sep("src-piv")
        child = plain_transfer_init(enc_parent, wb.ckpt_sep("piv-tgt"))
        adapter = None
        if name.endswith("+adapter"):
            adapter = wb.adapter("xenc" if use_xenc else "plain")
        src_vocab = wb.vocab_joint(True) if use_xenc else wb.vocab_sep("src")
        src_bpe = wb.bpe_joint() if use_xenc else wb.bpe_sep("src")
        seg_train, seg_val = ft_pair(src_bpe)
        ck = finetune(
            child,
            src_vocab,
            wb.vocab_sep("tgt"),
            (seg_train, seg_val),
            s.finetune,
            seed=wb.seed,
            adapter=adapter,
        )
        tr = Translator(
            model_of(ck, src_vocab, wb.vocab_sep("tgt")), src_bpe, s.beam, adapter=adapter
        )
        return _result(name, wb, tr.score(test), tr.score(val), ck.content_hash(), t0)

    if name in ("stepwise", "stepwise+xenc"):
        stage1 = "joint" if name == "stepwise" else "parallel-noisy"
        pre = wb.ckpt_stepwise(stage1)
        with_blank = name == "stepwise+xenc"
        src_vocab = wb.vocab_joint(with_blank)
        seg_train, seg_val = ft_pair(wb.bpe_joint())
        ck = finetune(
            pre, src_vocab, wb.vocab_sep("tgt"), (seg_train, seg_val), s.finetune, seed=wb.seed
        )
        tr = Translator(model_of(ck, src_vocab, wb.vocab_sep("tgt")), wb.bpe_joint(), s.beam)
        return _result(name, wb, tr.score(test), tr.score(val), ck.content_hash(), t0)

    if name.startswith("xenc-") and name.count("-") == 2:
        # table-4 variant: stepwise stage 2 on the chosen autoencoding flavor,
        # scored zero-shot
        _, ae_source, kind = name.split("-")
        pre = wb.ckpt_stepwise(f"{ae_source}-{kind}")
        src_vocab = wb.vocab_joint(kind == "noisy")
        tr = Translator(model_of(pre, src_vocab, wb.vocab_sep("tgt")), wb.bpe_joint(), s.beam)
        return _result(name, wb, tr.score(test), tr.score(val), pre.content_hash(), t0)

    if name == "zeroshot-plain":
        child = plain_transfer_init(wb.ckpt_sep("src-piv"), wb.ckpt_sep("piv-tgt"))
        tr = Translator(
            model_of(child, wb.vocab_sep("src"), wb.vocab_sep("tgt")), wb.bpe_sep("src"), s.beam
        )
        return _result(name, wb, tr.score(test), tr.score(val), child.content_hash(), t0)

    if name in ("zeroshot-stepwise", "zeroshot-stepwise+xenc"):
        stage1 = "joint" if name == "zeroshot-stepwise" else "parallel-noisy"
        pre = wb.ckpt_stepwise(stage1)
        src_vocab = wb.vocab_joint(name.endswith("+xenc"))
        tr = Translator(model_of(pre, src_vocab, wb.vocab_sep("tgt")), wb.bpe_joint(), s.beam)
        return _result(name, wb, tr.score(test), tr.score(val), pre.content_hash(), t0)

    if name == "zeroshot-pivot":
        m1 = model_of(wb.ckpt_sep("src-piv"), wb.vocab_sep("src"), wb.vocab_sep("piv"))
        m2 = model_of(wb.ckpt_sep("piv-tgt"), wb.vocab_sep("piv"), wb.vocab_sep("tgt"))
        src_bpe = wb.bpe_sep("src")

        def score(corpus):
            seg = [bpe.apply_bpe(src_bpe, " ".join(x)) for x, _ in corpus.pairs]
            hyps = pivot_translate(m1, m2, seg, s.beam)
            words = [bpe.detokenize(h).split() for h in hyps]
            return bleu(words, [t for _, t in corpus.pairs])

        rt, rv = score(test), score(val)
        h = hashlib.sha256(
            (wb.ckpt_sep("src-piv").content_hash() + wb.ckpt_sep("piv-tgt").content_hash()).encode()
        ).hexdigest()
        return _result(name, wb, rt, rv, h, t0)

    if name == "teacher-student":
        synth = wb.distilled_corpus()
        seg_train = wb.seg_corpus(synth, wb.bpe_sep("src"), wb.bpe_sep("tgt"))
        seg_val = wb.seg_corpus(
            wb.corpora["src-tgt.val"], wb.bpe_sep("src"), wb.bpe_sep("tgt")
        )
        model = init_params(s.model, wb.vocab_sep("src"), wb.vocab_sep("tgt"), wb.seed)
        ck = train(
            model, seg_train, seg_val, s.pretrain, seed=wb.seed, recipe="teacher-student"
        )
        tr = Translator(model_of(ck, wb.vocab_sep("src"), wb.vocab_sep("tgt")), wb.bpe_sep("src"), s.beam)
        return _result(name, wb, tr.score(test), tr.score(val), ck.content_hash(), t0)

    if name == "distill-stepwise+xenc":
        synth = wb.distilled_corpus()
        pre = wb.ckpt_stepwise("parallel-noisy")
        src_vocab = wb.vocab_joint(True)
        seg_train = wb.seg_corpus(synth, wb.bpe_joint(), wb.bpe_sep("tgt"))
        seg_val = wb.seg_corpus(wb.corpora["src-tgt.val"], wb.bpe_joint(), wb.bpe_sep("tgt"))
        ck = finetune(
            pre, src_vocab, wb.vocab_sep("tgt"), (seg_train, seg_val), s.finetune, seed=wb.seed
        )
        tr = Translator(model_of(ck, src_vocab, wb.vocab_sep("tgt")), wb.bpe_joint(), s.beam)
        return _result(name, wb, tr.score(test), tr.score(val), ck.content_hash(), t0)

    if name in ("backtranslate-direct", "backtranslate-plain"):
        synth = wb.backtranslated_corpus()
        mixed_words = wb.real_plus_synthetic(synth)
        if name == "backtranslate-direct":
            src_bpe, src_vocab = wb.bpe_sep("src"), wb.vocab_sep("src")
            parent = None
        else:
            src_bpe, src_vocab = wb.bpe_sep("src"), wb.vocab_sep("src")
            parent = plain_transfer_init(wb.ckpt_sep("src-piv"), wb.ckpt_sep("piv-tgt"))
        seg_components = []
        for corpus, noise in mixed_words.components:
            seg_components.append((wb.seg_corpus(corpus, src_bpe, wb.bpe_sep("tgt")), noise))
        mixed = mix_corpora(seg_components)
        seg_val = wb.seg_corpus(wb.corpora["src-tgt.val"], src_bpe, wb.bpe_sep("tgt"))
        if parent is None:
            model = init_params(s.model, src_vocab, wb.vocab_sep("tgt"), wb.seed)
            ck = train(
                model, mixed, seg_val, s.pretrain, seed=wb.seed, recipe="direct+synthetic"
            )
        else:
            ck = finetune(
                parent, src_vocab, wb.vocab_sep("tgt"), (mixed, seg_val), s.pretrain, seed=wb.seed
            )
        tr = Translator(model_of(ck, src_vocab, wb.vocab_sep("tgt")), src_bpe, s.beam)
        return _result(
            name, wb, tr.score(test), tr.score(val), ck.content_hash(), t0,
            extra={"synthetic_pairs": len(synth)},
        )

    raise RecipeError(f"unknown recipe {name!r}")


def run_grid(
    world: ToyWorldSpec,
    settings: Settings,
    grid: str,
    seeds,
    cache_dir=None,
) -> dict:
    """Run every recipe of a named grid for each seed; aggregate mean and sd."""
    if grid not in GRIDS:
        raise RecipeError(f"unknown grid {grid!r} (have {sorted(GRIDS)})")
    results = []
    for seed in seeds:
        spec = ToyWorldSpec(**{**asdict(world), "seed": seed})
        wb = Workbench(spec, settings, seed, cache_dir=cache_dir)
        for recipe in GRIDS[grid]:
            res = run_recipe(wb, recipe)
            log.info(
                "grid %s seed %d recipe %-24s test %.2f (%.1fs)",
                grid, seed, recipe, res.test_bleu, res.runtime_s,
            )
            results.append(res)
    summary = {}
    for recipe in GRIDS[grid]:
        scores = [r.test_bleu for r in results if r.recipe == recipe]
        summary[recipe] = {
            "mean": float(np.mean(scores)),
            "sd": float(np.std(scores)),
            "scores": scores,
        }
    return {"grid": grid, "seeds": list(seeds), "summary": summary, "results": results}
