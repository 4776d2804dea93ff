"""Command-line interface.

Subcommands: mine, train, compose, eval-diversity, nms-inspect. Exit codes:
0 success, 2 input error, 3 numeric failure. Errors are written to stderr
as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import corpus as corpus_mod
from . import metrics as metrics_mod
from .artifacts import checksum, read_json, read_jsonl, write_json, write_jsonl
from .completeness import CompletenessClassifier
from .composer import (
    SearchConfig,
    UserControl,
    apply_user_control,
    compose,
    compose_beam,
    compose_sample,
)
from .config import RunConfig, derive_seed
from .connecting import ConnectingClassifier
from .encoder import ImageContext
from .errors import CapComposeError, ConfigError, IncompatibleArtifactsError, InputError
from .nounphrases import (
    NounPhraseClassifier,
    ScoredNounPhrase,
    SynonymLexicon,
    select_top_n,
    semantic_nms,
    semantic_nms_clusters,
)
from .serialization import load_features


def _require(config: RunConfig, *names: str) -> None:
    missing = [name for name in names if getattr(config, name) is None]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")


def _mine_paths(mine_dir: str) -> dict[str, str]:
    return {
        "vocabulary": os.path.join(mine_dir, "vocabulary.json"),
        "np_inventory": os.path.join(mine_dir, "np_inventory.json"),
        "connecting_inventory": os.path.join(mine_dir, "connecting_inventory.json"),
        "triples": os.path.join(mine_dir, "triples.json"),
        "completeness": os.path.join(mine_dir, "completeness.json"),
        "gt_phrases": os.path.join(mine_dir, "gt_phrases.jsonl"),
    }


def cmd_mine(config: RunConfig) -> int:
    _require(config, "corpus", "mine_dir")
    captions = corpus_mod.load_corpus(config.corpus, config.max_caption_len)
    vocab = corpus_mod.build_vocabulary(captions, config.min_count)
    np_inv = corpus_mod.build_np_inventory(captions, config.np_min_occurrences)
    conn_inv = corpus_mod.build_connecting_inventory(captions, config.connector_min_occurrences)
    triples, completes, stats = corpus_mod.emit_training_examples(
        captions,
        conn_inv,
        neg_ratio=config.neg_ratio,
        seed=derive_seed(config.seed, "mine"),
        np_inventory=np_inv,
    )

    os.makedirs(config.mine_dir, exist_ok=True)
    paths = _mine_paths(config.mine_dir)
    vocab_obj = vocab.to_dict()
    np_obj = np_inv.to_dict()
    conn_obj = conn_inv.to_dict()
    write_json(paths["vocabulary"], vocab_obj)
    write_json(paths["np_inventory"], np_obj)
    write_json(paths["connecting_inventory"], conn_obj)
    write_json(
        paths["triples"],
        {
            "connecting_inventory_checksum": checksum(conn_obj),
            "examples": [t.to_dict() for t in triples],
        },
    )
    write_json(
        paths["completeness"],
        {
            "vocabulary_checksum": checksum(vocab_obj),
            "examples": [e.to_dict() for e in completes],
        },
    )
    rows = []
    for cap in captions:
        spans = corpus_mod.extract_noun_phrase_spans(cap.tree)
        phrases = [
            {
                "tokens": list(cap.tokens[s:e]),
                "class_id": np_inv.index_of(cap.tokens[s:e]),
                "score": 1.0,
            }
            for s, e in spans
        ]
        rows.append({"image_id": cap.image_id, "phrases": phrases})
    write_jsonl(paths["gt_phrases"], rows)
    print(json.dumps(stats.to_dict(), sort_keys=True))
    return 0


def _load_mined(mine_dir: str):
    paths = _mine_paths(mine_dir)
    vocab_obj = read_json(paths["vocabulary"])
    np_obj = read_json(paths["np_inventory"])
    conn_obj = read_json(paths["connecting_inventory"])
    return (
        corpus_mod.Vocabulary.from_dict(vocab_obj),
        corpus_mod.NounPhraseInventory.from_dict(np_obj),
        corpus_mod.ConnectingInventory.from_dict(conn_obj),
        {
            "vocabulary": checksum(vocab_obj),
            "np_inventory": checksum(np_obj),
            "connecting_inventory": checksum(conn_obj),
        },
    )


def _contexts_for(config: RunConfig):
    if not config.use_image_context or config.features is None:
        return None
    return load_features(config.features)


def cmd_train(config: RunConfig, which: str) -> int:
    _require(config, "mine_dir", "out")
    vocab, np_inv, conn_inv, sums = _load_mined(config.mine_dir)
    paths = _mine_paths(config.mine_dir)
    contexts = _contexts_for(config)

    if which == "cmodule":
        payload = read_json(paths["triples"])
        if payload["connecting_inventory_checksum"] != sums["connecting_inventory"]:
            raise IncompatibleArtifactsError(
                "triples were mined against a different connecting inventory"
            )
        examples = [corpus_mod.CompositionTriple.from_dict(t) for t in payload["examples"]]
        clf = ConnectingClassifier(
            vocab=vocab,
            n_connector_classes=len(conn_inv),
            hidden_dim=config.hidden_dim,
            embed_dim=config.embed_dim,
            d_g=config.d_g,
            d_r=config.d_r,
            n_regions=config.n_regions,
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            seed=derive_seed(config.seed, "train:cmodule"),
            share_encoders=config.share_encoders,
        )
        clf.fit(examples, contexts)
        clf.save(
            config.out,
            metadata={
                "inventory_checksum": sums["connecting_inventory"],
                "vocab_checksum": sums["vocabulary"],
            },
        )
    elif which == "emodule":
        payload = read_json(paths["completeness"])
        if payload["vocabulary_checksum"] != sums["vocabulary"]:
            raise IncompatibleArtifactsError(
                "completeness examples were mined against a different vocabulary"
            )
        examples = [corpus_mod.CompletenessExample.from_dict(e) for e in payload["examples"]]
        clf = CompletenessClassifier(
            vocab=vocab,
            hidden_dim=config.hidden_dim,
            embed_dim=config.embed_dim,
            d_g=config.d_g,
            d_r=config.d_r,
            n_regions=config.n_regions,
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            seed=derive_seed(config.seed, "train:emodule"),
            threshold=config.threshold,
        )
        clf.fit(examples, contexts)
        clf.save(config.out, metadata={"vocab_checksum": sums["vocabulary"]})
    elif which == "npcls":
        _require(config, "features", "corpus")
        features = load_features(config.features)
        captions = corpus_mod.load_corpus(config.corpus, config.max_caption_len)
        rows, label_sets = [], []
        by_image: dict[str, set[int]] = {}
        for cap in captions:
            labels = by_image.setdefault(cap.image_id, set())
            for s, e in corpus_mod.extract_noun_phrase_spans(cap.tree):
                class_id = np_inv.index_of(cap.tokens[s:e])
                if class_id >= 0:
                    labels.add(class_id)
        for image_id, labels in sorted(by_image.items()):
            if image_id not in features:
                raise InputError(f"no features for image {image_id!r}")
            rows.append(features[image_id].v)
            label_sets.append(labels)
        clf = NounPhraseClassifier(
            n_classes=len(np_inv),
            hidden_dim=config.hidden_dim,
            code_dim=config.embed_dim,
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            seed=derive_seed(config.seed, "train:npcls"),
        )
        clf.fit(rows, label_sets)
        clf.save(config.out, metadata={"inventory_checksum": sums["np_inventory"]})
    else:
        raise ConfigError(f"unknown training target {which!r}")

    write_json(f"{config.out}.loss.json", {"loss_trace": clf.loss_trace_})
    return 0


def _initial_phrases_for_image(config, image_id, ctx, np_clf, np_inv, lexicon, cmodule):
    scores = np_clf.scores(ctx.v)
    top = select_top_n(scores, np_inv, config.n)
    return semantic_nms(top, lexicon, cmodule, ctx if config.use_image_context else None, config.epsilon)


def cmd_compose(config: RunConfig) -> int:
    _require(config, "mine_dir", "c_model", "e_model", "out")
    vocab, np_inv, conn_inv, sums = _load_mined(config.mine_dir)
    cmodule = ConnectingClassifier.load(config.c_model, vocab)
    emodule = CompletenessClassifier.load(config.e_model, vocab)
    for model, name in ((cmodule, config.c_model), (emodule, config.e_model)):
        expected = model.sidecar_.get("vocab_checksum")
        if expected is not None and expected != sums["vocabulary"]:
            raise IncompatibleArtifactsError(f"{name}: vocabulary checksum mismatch")
    expected = cmodule.sidecar_.get("inventory_checksum")
    if expected is not None and expected != sums["connecting_inventory"]:
        raise IncompatibleArtifactsError(f"{config.c_model}: connecting inventory checksum mismatch")

    control = None
    if config.control is not None:
        control = UserControl.from_dict(read_json(config.control))

    search = SearchConfig(
        mode=config.mode,
        beam_pairs=config.beam_pairs,
        beam_connections=config.beam_connections,
        sample_seed=derive_seed(config.seed, "compose:sample"),
        sample_temperature=config.sample_temperature,
        max_steps=config.max_steps,
        stop_on_complete=config.stop_on_complete,
        max_caption_len=config.max_caption_len,
    )
    search_fn = {"greedy": compose, "beam": compose_beam, "sample": compose_sample}[config.mode]

    jobs = []
    if config.initial is not None:
        for row in read_jsonl(config.initial):
            phrases = [
                ScoredNounPhrase(
                    phrase=tuple(p["tokens"]),
                    score=float(p.get("score", 1.0)),
                    class_id=int(p.get("class_id", -1)),
                )
                for p in row["phrases"]
            ]
            jobs.append((row["image_id"], phrases))
        features = _contexts_for(config) or {}
    else:
        _require(config, "features", "np_model")
        features = load_features(config.features)
        np_clf = NounPhraseClassifier.load(config.np_model)
        expected = np_clf.sidecar_.get("inventory_checksum")
        if expected is not None and expected != sums["np_inventory"]:
            raise IncompatibleArtifactsError(
                f"{config.np_model}: noun-phrase inventory checksum mismatch"
            )
        lexicon = SynonymLexicon.from_file(config.lexicon) if config.lexicon else SynonymLexicon.empty()
        for image_id in sorted(features):
            ctx = features[image_id]
            phrases = _initial_phrases_for_image(
                config, image_id, ctx, np_clf, np_inv, lexicon, cmodule
            )
            jobs.append((image_id, phrases))

    rows = []
    for image_id, phrases in jobs:
        if control is not None:
            phrases = apply_user_control(phrases, control)
        ctx = features.get(image_id) if config.use_image_context else None
        result = search_fn(phrases, cmodule, emodule, conn_inv, ctx, search)
        rows.append(
            {
                "image_id": image_id,
                "captions": [
                    {
                        "tokens": list(phrase.tokens),
                        "score": phrase.score,
                        "complete": complete,
                        "steps": result.steps_taken,
                    }
                    for phrase, complete in zip(result.captions, result.complete)
                ],
            }
        )
    write_jsonl(config.out, rows)
    return 0


def cmd_eval_diversity(config: RunConfig, generated_path: str, training_path: str) -> int:
    _require(config, "mine_dir")
    vocab, _, _, _ = _load_mined(config.mine_dir)
    per_image: dict[str, list] = {}
    for row in read_jsonl(generated_path):
        per_image[row["image_id"]] = [tuple(c["tokens"]) for c in row["captions"]]
    training = []
    for row in read_jsonl(training_path):
        if "caption" in row:
            training.append(tuple(row["caption"].lower().split()))
        else:
            training.extend(tuple(c["tokens"]) for c in row.get("captions", []))
    report = metrics_mod.diversity_report(
        per_image, training, vocab, skip_image_level_if_single=True
    )
    text = json.dumps(report.to_dict(), sort_keys=True)
    print(text)
    if config.out is not None:
        write_json(config.out, report.to_dict())
    return 0


def cmd_nms_inspect(config: RunConfig) -> int:
    _require(config, "mine_dir", "features", "np_model", "c_model")
    vocab, np_inv, _, sums = _load_mined(config.mine_dir)
    cmodule = ConnectingClassifier.load(config.c_model, vocab)
    np_clf = NounPhraseClassifier.load(config.np_model)
    lexicon = SynonymLexicon.from_file(config.lexicon) if config.lexicon else SynonymLexicon.empty()
    features = load_features(config.features)
    for image_id in sorted(features):
        ctx = features[image_id]
        top = select_top_n(np_clf.scores(ctx.v), np_inv, config.n)
        clusters = semantic_nms_clusters(
            top, lexicon, cmodule, ctx if config.use_image_context else None, config.epsilon
        )
        print(
            json.dumps(
                {
                    "image_id": image_id,
                    "clusters": [
                        {
                            "kept": {"phrase": list(kept.phrase), "score": kept.score},
                            "suppressed": [
                                {"phrase": list(s.phrase), "score": s.score} for s in suppressed
                            ],
                        }
                        for kept, suppressed in clusters
                    ],
                },
                sort_keys=True,
            )
        )
    return 0


def _add_config_flags(parser: argparse.ArgumentParser, names: list[str]) -> None:
    types = {f.name: f.type for f in RunConfig.__dataclass_fields__.values()}
    for name in names:
        flag = "--" + name.replace("_", "-")
        annotation = types[name]
        if annotation in ("bool", bool):
            group = parser.add_mutually_exclusive_group()
            group.add_argument(flag, dest=name, action="store_true", default=None)
            group.add_argument(
                "--no-" + name.replace("_", "-"), dest=name, action="store_false", default=None
            )
        elif annotation in ("int", int, "int | None"):
            parser.add_argument(flag, dest=name, type=int, default=None)
        elif annotation in ("float", float):
            parser.add_argument(flag, dest=name, type=float, default=None)
        else:
            parser.add_argument(flag, dest=name, type=str, default=None)


_PATH_FLAGS = [
    "corpus",
    "features",
    "lexicon",
    "mine_dir",
    "np_model",
    "c_model",
    "e_model",
    "control",
    "initial",
    "out",
]
_MINE_FLAGS = [
    "min_count",
    "max_caption_len",
    "np_min_occurrences",
    "connector_min_occurrences",
    "neg_ratio",
    "seed",
]
_TRAIN_FLAGS = [
    "hidden_dim",
    "embed_dim",
    "d_g",
    "d_r",
    "n_regions",
    "learning_rate",
    "epochs",
    "threshold",
    "share_encoders",
    "use_image_context",
    "max_caption_len",
    "seed",
]
_COMPOSE_FLAGS = [
    "mode",
    "n",
    "epsilon",
    "beam_pairs",
    "beam_connections",
    "sample_temperature",
    "max_steps",
    "stop_on_complete",
    "use_image_context",
    "max_caption_len",
    "seed",
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capcompose",
        description="Mine phrase inventories, train the scoring modules, and compose captions.",
    )
    parser.add_argument("--config", help="JSON config file; flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    p_mine = sub.add_parser("mine", help="build vocabularies, inventories and training examples")
    _add_config_flags(p_mine, ["corpus", "mine_dir", "out"] + _MINE_FLAGS)

    p_train = sub.add_parser("train", help="train one model: npcls, cmodule or emodule")
    p_train.add_argument("which", choices=["npcls", "cmodule", "emodule"])
    _add_config_flags(p_train, ["corpus", "features", "mine_dir", "out"] + _TRAIN_FLAGS)

    p_compose = sub.add_parser("compose", help="compose captions for image features")
    _add_config_flags(p_compose, _PATH_FLAGS + _COMPOSE_FLAGS)

    p_eval = sub.add_parser("eval-diversity", help="diversity statistics for generated captions")
    p_eval.add_argument("--generated", required=True)
    p_eval.add_argument("--training", required=True)
    _add_config_flags(p_eval, ["mine_dir", "out"])

    p_nms = sub.add_parser("nms-inspect", help="print kept/suppressed noun-phrase clusters")
    _add_config_flags(p_nms, ["features", "mine_dir", "np_model", "c_model", "lexicon", "n", "epsilon", "use_image_context"])

    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {
        name: getattr(args, name)
        for name in RunConfig.field_names()
        if hasattr(args, name) and getattr(args, name) is not None
    }
    return config.with_overrides(**overrides).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        if args.command == "mine":
            return cmd_mine(config)
        if args.command == "train":
            return cmd_train(config, args.which)
        if args.command == "compose":
            return cmd_compose(config)
        if args.command == "eval-diversity":
            return cmd_eval_diversity(config, args.generated, args.training)
        if args.command == "nms-inspect":
            return cmd_nms_inspect(config)
        raise ConfigError(f"unknown command {args.command!r}")
    except CapComposeError as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return exc.exit_code
    except FileNotFoundError as exc:
        print(
            json.dumps({"error": "InputError", "message": f"file not found: {exc.filename}"}),
            file=sys.stderr,
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
