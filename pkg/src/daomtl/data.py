"""Tokenisation, corpus I/O, deterministic splitting/batching and a synthetic corpus generator."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, ContractError, IngestionError
from .losses import NUM_CLASSES, map_score_to_class

PAD_ID = 0
MAX_LEN = 512
DEFAULT_VOCAB = 32768

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def token_hash(token: str) -> int:
    """Unsigned 64-bit hash: BLAKE2b with an 8-byte digest over the UTF-8 token, read little-endian."""
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


def tokenize(text: str, vocab_size: int = DEFAULT_VOCAB, max_len: int = MAX_LEN) -> list[int]:
    """Lower-case, split on non-alphanumerics, hash each token into ``[1, vocab_size)``.

    Id 0 is reserved for padding.  Sequences are truncated to ``max_len``.
    """
    if vocab_size < 2:
        raise ConfigError("vocab_size must be at least 2")
    tokens = _TOKEN_RE.findall(text.lower())[:max_len]
    return [1 + token_hash(t) % (vocab_size - 1) for t in tokens]


@dataclass(frozen=True)
class Example:
    text: str
    score: float
    label: int = field(default=-1)

    def __post_init__(self):
        z = map_score_to_class(self.score)
        if self.label == -1:
            object.__setattr__(self, "label", z)
        elif self.label != z:
            raise ContractError(f"label {self.label} inconsistent with score {self.score}")


class Corpus:
    """Ordered, immutable collection of examples with a provenance tag."""

    def __init__(self, examples, provenance="memory"):
        self.examples = tuple(examples)
        self.provenance = provenance
        self._token_cache = {}

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    @property
    def texts(self):
        return [e.text for e in self.examples]

    @property
    def scores(self):
        return np.array([e.score for e in self.examples], dtype=np.float64)

    @property
    def labels(self):
        return np.array([e.label for e in self.examples], dtype=np.int64)

    def token_ids(self, vocab_size=DEFAULT_VOCAB, max_len=MAX_LEN):
        key = (vocab_size, max_len)
        if key not in self._token_cache:
            self._token_cache[key] = [tokenize(e.text, vocab_size, max_len) for e in self.examples]
        return self._token_cache[key]

    def subset(self, indices, provenance=None):
        return Corpus([self.examples[i] for i in indices], provenance or self.provenance)


@dataclass
class Batch:
    ids: np.ndarray
    lengths: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __len__(self):
        return len(self.y)


def pad_sequences(seqs):
    """Right-pad id lists with 0; an empty sequence becomes a single pad id of length 1."""
    seqs = [s if len(s) else [PAD_ID] for s in seqs]
    lengths = np.array([len(s) for s in seqs], dtype=np.intp)
    ids = np.full((len(seqs), int(lengths.max())), PAD_ID, dtype=np.intp)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
    return ids, lengths


def make_batch(corpus: Corpus, indices, vocab_size=DEFAULT_VOCAB, max_len=MAX_LEN) -> Batch:
    toks = corpus.token_ids(vocab_size, max_len)
    ids, lengths = pad_sequences([toks[i] for i in indices])
    return Batch(ids=ids, lengths=lengths,
                 y=np.array([corpus[i].score for i in indices], dtype=np.float64),
                 z=np.array([corpus[i].label for i in indices], dtype=np.int64))


def batches(corpus: Corpus, batch_size: int = 10, seed: int = 42, shuffle: bool = True, epoch: int = 0,
            vocab_size: int = DEFAULT_VOCAB, max_len: int = MAX_LEN) -> Iterator[Batch]:
    """Yield batches; the shuffle order depends only on ``(seed, epoch)``.  The last batch may be partial."""
    if len(corpus) == 0:
        raise ContractError("cannot batch an empty corpus")
    order = np.arange(len(corpus))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(corpus))
    for start in range(0, len(order), batch_size):
        yield make_batch(corpus, order[start:start + batch_size], vocab_size, max_len)


def split(corpus: Corpus, ratio: float = 0.9, seed: int = 42):
    """Seeded shuffle then prefix split into ``(train, val)`` with ``floor(ratio * N)`` training rows."""
    if len(corpus) < 2:
        raise ContractError("need at least two examples to split")
    perm = np.random.default_rng(seed).permutation(len(corpus))
    n_train = int(math.floor(ratio * len(corpus)))
    return corpus.subset(perm[:n_train]), corpus.subset(perm[n_train:])


# ---------------------------------------------------------------- file formats

def _parse_score(raw, line):
    try:
        score = float(raw)
    except (TypeError, ValueError):
        raise IngestionError(f"unparsable score {raw!r}", line) from None
    if not math.isfinite(score) or not -1.0 <= score <= 1.0:
        raise IngestionError(f"score {score} outside [-1, 1]", line)
    return score


def load_corpus(path) -> Corpus:
    """Read ``text``/``score`` records from a JSON-lines file or a CSV file with a header row."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such file: {path}")
    examples = []
    with path.open(newline="", encoding="utf-8") as fh:
        if path.suffix.lower() == ".csv":
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise IngestionError(f"{path} is empty")
            for rec in reader:
                line = reader.line_num
                examples.append(_record(rec, line))
        else:
            for line, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    rec = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise IngestionError(f"malformed record: {exc.msg}", line) from None
                if not isinstance(rec, dict):
                    raise IngestionError("record is not an object", line)
                examples.append(_record(rec, line))
    if not examples:
        raise IngestionError(f"{path} contains no records")
    return Corpus(examples, provenance=f"file:{path}")


def _record(rec, line):
    for key in ("text", "score"):
        if rec.get(key) is None:
            raise IngestionError(f"missing field {key!r}", line)
    return Example(str(rec["text"]), _parse_score(rec["score"], line))


def save_corpus(corpus: Corpus, path):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if path.suffix.lower() == ".csv":
            w = csv.writer(fh)
            w.writerow(["text", "score"])
            for e in corpus:
                w.writerow([e.text, repr(e.score)])
        else:
            for e in corpus:
                fh.write(json.dumps({"text": e.text, "score": e.score}) + "\n")


# ---------------------------------------------------------------- synthetic data

CLASS_LEXICON = (
    ("plunge", "collapse", "crash", "slump", "panic", "meltdown", "rout", "tumble", "freefall", "capitulation"),
    ("decline", "weaker", "soft", "dip", "concern", "pressure", "losses", "retreat", "downbeat", "cautious"),
    ("steady", "unchanged", "flat", "range", "balanced", "stable", "mixed", "sideways", "neutral", "calm"),
    ("gain", "firmer", "rise", "support", "upbeat", "improve", "recovery", "advance", "optimism", "bid"),
    ("surge", "soar", "rally", "boom", "breakout", "skyrocket", "euphoria", "jump", "spike", "record"),
)
NOISE_WORDS = tuple(f"{stem}{i}" for stem in ("euro", "dollar", "ecb", "fed", "rate", "data", "market", "report")
                    for i in range(25))
_CLASS_INTERVALS = ((-1.0, -0.5), (-0.5, -0.049), (-0.049, 0.049), (0.049, 0.5), (0.5, 1.0))
_MARGIN = 0.001


def synth_generate(n: int, class_mix=(0.05, 0.15, 0.60, 0.15, 0.05), noise: float = 0.3,
                   seed: int = 42) -> Corpus:
    """Imbalanced five-class corpus whose text carries its class through lexicon tokens.

    Each example samples a class from ``class_mix``, a score uniformly inside
    that class's band (kept 0.001 away from the thresholds), and 20-80 tokens
    each of which is a shared noise word with probability ``noise`` and a
    class-signature word otherwise.
    """
    mix = np.asarray(class_mix, dtype=np.float64)
    if mix.shape != (NUM_CLASSES,) or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-9:
        raise ConfigError(f"class_mix must be {NUM_CLASSES} non-negative proportions summing to 1")
    if n < NUM_CLASSES:
        raise ConfigError("n must be at least 5")
    if not 0.0 <= noise <= 1.0:
        raise ConfigError("noise must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(n):
        k = int(rng.choice(NUM_CLASSES, p=mix))
        lo, hi = _CLASS_INTERVALS[k]
        score = float(rng.uniform(lo + _MARGIN, hi - _MARGIN))
        length = int(rng.integers(20, 81))
        is_noise = rng.random(length) < noise
        lex = CLASS_LEXICON[k]
        words = [NOISE_WORDS[rng.integers(len(NOISE_WORDS))] if flag else lex[rng.integers(len(lex))]
                 for flag in is_noise]
        examples.append(Example(" ".join(words), score))
    mix_tag = ",".join(f"{m:g}" for m in mix)
    return Corpus(examples, provenance=f"synthetic(seed={seed}, mix={mix_tag}, noise={noise:g})")


def lexicon_classify(text: str) -> int:
    """Class whose signature lexicon overlaps the text most (ties go to the lower class)."""
    words = _TOKEN_RE.findall(text.lower())
    overlaps = [sum(w in set(lex) for w in words) for lex in CLASS_LEXICON]
    return int(np.argmax(overlaps))
