"""Small deterministic corpora and tiny model configurations shared by the tests."""
from __future__ import annotations

import numpy as np

from capsumt.ftawe import FtaweConfig
from capsumt.maa import MaaConfig
from capsumt.sfbialstm import StyleConfig
from capsumt.unmhast import TransformerConfig

FACTUAL = [
    "a dog runs on the grass",
    "two kids play with a ball",
    "a man rides a red bike",
    "a cat sleeps on a sofa",
    "a bird sits on a wire",
]
ROMANTIC = [
    "a dog dreams of love in the park",
    "two lovers walk by the sea",
    "a girl smiles at her sweet heart",
    "the sun sets on a romantic beach",
    "a couple holds hands under stars",
]
HUMOROUS = [
    "a dog tries to eat the moon",
    "a cat plans to rule the world",
    "a man falls into his own soup",
    "the bird laughs at the silly fish",
    "a kid wears pizza as a hat",
]

SUMMARY_SOURCES = [
    "a dog runs on grass . a dog loves the sunny grass . a dog chases its tail on grass .",
    "a man rides a bike . a man dreams of the open road . a man pedals from his shadow .",
    "two kids play ball . two kids share a sweet game . two kids argue with the ball .",
    "a cat sleeps on a sofa . a cat rests in warm love . a cat plans to rule the sofa .",
    "a girl reads a book . a girl falls for the story . a girl reads upside down .",
    "a bird sits on a wire . a bird sings for its mate . a bird judges the people below .",
    "a woman walks on the beach . a woman feels the sea breeze . a woman races a crab .",
    "a boy jumps in a pool . a boy splashes with joy . a boy scares the fish .",
    "a horse runs in a field . a horse gallops to freedom . a horse escapes the farmer .",
    "a car drives down a road . a car speeds into the sunset . a car honks at a cow .",
]
SUMMARY_TARGETS = [
    "a dog chases its tail on sunny grass", "a man rides a bike and dreams",
    "two kids play a sweet game", "a cat sleeps and plans to rule",
    "a girl reads a book upside down", "a bird sings on a wire",
    "a woman walks on the beach with a crab", "a boy jumps in a pool with joy",
    "a horse runs to freedom", "a car speeds down a road",
]


def features(n: int = 5, k: int = 4, D: int = 8, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [rng.normal(size=(k, D)) for _ in range(n)]


def maa_records():
    return list(zip(features(), [s.split() for s in FACTUAL]))


def style_records():
    feats = features()
    return ([(f, c.split(), "romantic") for f, c in zip(feats, ROMANTIC)]
            + [(f, c.split(), "humorous") for f, c in zip(feats, HUMOROUS)])


def summary_pairs():
    return [(s.split(), t.split()) for s, t in zip(SUMMARY_SOURCES, SUMMARY_TARGETS)]


def copy_pairs(n: int = 20, seed: int = 3):
    """Each target starts with a made-up name seen only in its own record.

    The name occurs twice (source and target), so a vocabulary built with
    ``min_count=3`` leaves every name out of the base vocabulary.
    """
    rng = np.random.default_rng(seed)
    animals = ["dog", "cat", "horse", "bird", "fox"]
    acts = ["runs", "sleeps", "jumps", "sings", "hides"]
    syl = ["zor", "blax", "quim", "vard", "tel", "mox", "pru", "dex", "lun", "fa"]
    names: set[str] = set()
    while len(names) < n:
        names.add("".join(rng.choice(syl, 3)))
    pairs = []
    for i, name in enumerate(sorted(names)):
        a, v = animals[i % 5], acts[(i // 5) % 4]
        src = f"a {a} named {name} {v} . the {a} {v} with love . the {a} {v} badly ."
        pairs.append((src.split(), f"{name} the {a} {v}".split()))
    return pairs


def repetition_pairs(n: int = 20, seed: int = 11):
    """Targets copy the first ten of twelve distinct source tokens in order."""
    rng = np.random.default_rng(seed)
    pool = [f"w{i}" for i in range(40)]
    pairs = []
    for _ in range(n):
        src = list(rng.choice(pool, 12, replace=False))
        pairs.append((src + ["."], src[:10]))
    return pairs


EMBED_PAIRS = [("glorp", "vexit"), ("trambo", "quisel"), ("huffle", "dwinge"),
               ("sprock", "mallow"), ("zindle", "crobe")]
EMBED_FRAMES = [("the", "red", "sky", "over"), ("a", "big", "cold", "river"),
                ("my", "old", "tin", "drum"), ("one", "sad", "wet", "dog"),
                ("her", "new", "soft", "hat")]


def cooccurrence_corpus(repeats: int = 8) -> list[list[str]]:
    """Paired words share a private context frame; unpaired words never do."""
    sents = []
    for (a, b), (c1, c2, c3, c4) in zip(EMBED_PAIRS, EMBED_FRAMES):
        for w in (a, b):
            sents += [[c1, c2, w, c3, c4]] * repeats
    return sents


def ftawe_config(**kw) -> FtaweConfig:
    d = dict(dim=24, window=2, epochs=60, lr=0.03, batch=16, seed=0, dtype="float64")
    d.update(kw)
    return FtaweConfig(**d)


def maa_config(**kw) -> MaaConfig:
    d = dict(feature_dim=8, hidden=16, embed=12, att_dim=8, lr=0.01, batch=5, epochs=150,
             dtype="float64")
    d.update(kw)
    return MaaConfig(**d)


def style_config(**kw) -> StyleConfig:
    d = dict(feature_dim=8, hidden=16, embed=12, rank=4, att_dim=8, lr=0.01, batch=5,
             epochs=150, dtype="float64")
    d.update(kw)
    return StyleConfig(**d)


def summ_config(**kw) -> TransformerConfig:
    d = dict(embed=16, d_model=32, heads=2, d_ff=64, att_dim=16, dropout=0.0, lr=0.005,
             batch=5, epochs=100, dtype="float64")
    d.update(kw)
    return TransformerConfig(**d)


def repeated_trigram_rate(summaries) -> float:
    repeats = total = 0
    for s in summaries:
        tri = [tuple(s[i:i + 3]) for i in range(len(s) - 2)]
        repeats += len(tri) - len(set(tri))
        total += len(tri)
    return repeats / total if total else 0.0


def make_workspace(root, n_records: int = 1, epochs: dict | None = None) -> "Path":
    """Write FEAT files, a corpus and a tiny JSON config under ``root``.

    Returns the config path.  Record ``i`` uses toy image ``i`` with the
    matching factual/romantic/humorous captions and summary target.
    """
    import json
    from dataclasses import asdict
    from pathlib import Path

    from capsumt.corpus import write_jsonl
    from capsumt.features import write_features

    root = Path(root)
    (root / "feats").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, F in enumerate(features(n=n_records)):
        write_features(root / "feats" / f"img{i}.feat", F)
        rows.append({"id": f"img{i}", "features": f"feats/img{i}.feat",
                     "factual": [FACTUAL[i]], "romantic": ROMANTIC[i],
                     "humorous": HUMOROUS[i], "summary": SUMMARY_TARGETS[i]})
    write_jsonl(root / "corpus.jsonl", rows)
    ep = {"ftawe": 5, "maa": 60, "style": 80, "summarizer": 60, **(epochs or {})}

    def section(cfg, epochs):
        d = {k: v for k, v in asdict(cfg).items() if k != "seed"}
        d["epochs"] = epochs
        return d

    cfg = {
        "seed": 0,
        "corpus": "corpus.jsonl",
        "ftawe": section(ftawe_config(dim=16), ep["ftawe"]),
        "maa": section(maa_config(), ep["maa"]),
        "style": section(style_config(), ep["style"]),
        "summarizer": section(summ_config(), ep["summarizer"]),
        "decode": {"mode": "greedy", "max_len": 20},
        "predictions": "out/predictions.jsonl",
        "references": "corpus.jsonl",
    }
    path = root / "config.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path
