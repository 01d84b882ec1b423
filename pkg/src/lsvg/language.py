"""Text side: tokenization, rule lemmatization, class matching, text encoder."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numerics as nm
from .numerics import DiffArray


class LanguageError(ValueError):
    pass


_TOKEN_RE = re.compile(r"[a-z0-9]+")

# articles / copulas / glue words ignored by class matching (never class names)
STOPWORDS = frozenset({
    "the", "a", "an", "that", "this", "these", "those", "which", "it", "its",
    "is", "are", "was", "were", "be", "being", "been", "to", "of", "and", "or",
    "there", "with", "by", "at", "in", "on", "as", "has", "have", "had",
    "very", "most", "one",
})

# irregular plural -> singular; consulted before the suffix rules
IRREGULAR_LEMMAS = {
    "shelves": "shelf",
    "knives": "knife",
    "leaves": "leaf",
    "halves": "half",
    "feet": "foot",
    "children": "child",
    "men": "man",
    "women": "woman",
    "mice": "mouse",
    "geese": "goose",
    "teeth": "tooth",
    "people": "person",
    "buses": "bus",
}

# singular nouns ending in -s that the suffix rules must not strip
_KEEP_AS_IS = frozenset({"bus", "gas", "lens", "iris", "atlas", "canvas", "plus"})

PROMPT_TEMPLATE = "The object is {name}"


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace/punctuation split."""
    return _TOKEN_RE.findall(text.lower())


def lemmatize(token: str) -> str:
    """Dictionary lookup first, then noun suffix rules, identity otherwise."""
    if token in IRREGULAR_LEMMAS:
        return IRREGULAR_LEMMAS[token]
    if token in _KEEP_AS_IS or len(token) <= 3:
        return token
    if token.endswith("ies"):
        # "parties" -> "party" but "ties"/"pies" -> "tie"/"pie"
        return token[:-1] if len(token) <= 4 else token[:-3] + "y"
    if token.endswith("es") and token[:-2].endswith(("ss", "x", "z", "ch", "sh")):
        return token[:-2]
    if token.endswith("s") and not token.endswith("ss"):
        return token[:-1]
    return token


@dataclass
class ClassVocabulary:
    """Ordered class names plus a surface-lemma synonym map."""

    classes: list[str]
    synonyms: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise LanguageError("class names must be unique")
        for lemma, cls in self.synonyms.items():
            if cls not in self.classes:
                raise LanguageError(f"synonym {lemma!r} maps to unknown class {cls!r}")
        self._index = {c: i for i, c in enumerate(self.classes)}
        # lemma n-gram -> class id, for both class names and synonyms
        self._ngrams: dict[tuple[str, ...], int] = {}
        for name in self.classes:
            key = tuple(lemmatize(t) for t in tokenize(name))
            self._ngrams[key] = self._index[name]
        for lemma, cls in self.synonyms.items():
            key = tuple(lemmatize(t) for t in tokenize(lemma))
            self._ngrams.setdefault(key, self._index[cls])

    def __len__(self) -> int:
        return len(self.classes)

    def class_id(self, name: str) -> int:
        if name not in self._index:
            raise LanguageError(f"unknown class {name!r}")
        return self._index[name]

    def name(self, class_id: int) -> str:
        return self.classes[class_id]

    @classmethod
    def from_json(cls, path: str | Path) -> "ClassVocabulary":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise LanguageError(f"vocabulary file {path}: invalid JSON ({e})") from e
        if not isinstance(raw.get("classes"), list) or not raw["classes"]:
            raise LanguageError(f"vocabulary file {path}: 'classes' must be a non-empty list")
        return cls(classes=list(raw["classes"]), synonyms=dict(raw.get("synonyms", {})))

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps({"classes": self.classes, "synonyms": self.synonyms}, indent=2) + "\n",
            encoding="utf-8")


def build_prompt(class_name: str) -> str:
    """Class-aware prompt: 'The object is <name>'."""
    if not class_name:
        raise LanguageError("empty class name")
    return PROMPT_TEMPLATE.format(name=class_name)


def match_classes(lemmas: Sequence[str], vocab: ClassVocabulary,
                  max_ngram: int = 3) -> set[int]:
    """Class ids mentioned in a lemma sequence.

    Greedy longest-match over contiguous lemma n-grams (n <= 3) against class
    names and synonyms, on the stopword-filtered sequence; each lemma is
    consumed at most once.
    """
    seq = [l for l in lemmas if l not in STOPWORDS]
    found: set[int] = set()
    i = 0
    while i < len(seq):
        for n in range(min(max_ngram, len(seq) - i), 0, -1):
            key = tuple(seq[i:i + n])
            if key in vocab._ngrams:
                found.add(vocab._ngrams[key])
                i += n
                break
        else:
            i += 1
    return found


@dataclass
class Utterance:
    """A referring expression and its language-side analysis."""

    raw: str
    tokens: list[str]
    lemmas: list[str]
    matched_classes: set[int]
    target_id: int | None = None


def analyze_utterance(raw: str, vocab: ClassVocabulary,
                      target_id: int | None = None) -> Utterance:
    tokens = tokenize(raw)
    lemmas = [lemmatize(t) for t in tokens]
    return Utterance(raw=raw, tokens=tokens, lemmas=lemmas,
                     matched_classes=match_classes(lemmas, vocab),
                     target_id=target_id)


# -- learnable text encoder ----------------------------------------------

@dataclass
class TextEncoding:
    sentence_emb: DiffArray  # (d,)
    token_embs: DiffArray    # (T, d)


@dataclass(frozen=True)
class TextConfig:
    d_model: int = 64
    heads: int = 8
    blocks: int = 2
    ffn_mult: int = 2

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise LanguageError(f"d_model {self.d_model} not divisible by {self.heads} heads")


UNK_TOKEN = "<unk>"


def build_token_vocab(texts: Iterable[str], class_names: Iterable[str]) -> list[str]:
    """Deterministic token list: <unk> + sorted tokens of texts and prompts."""
    seen: set[str] = set()
    for t in texts:
        seen.update(tokenize(t))
    for name in class_names:
        seen.update(tokenize(build_prompt(name)))
    return [UNK_TOKEN] + sorted(seen)


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None].astype(np.float64)
    dim = np.arange(d)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * (dim // 2) / d)
    enc = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


class TextEncoder:
    """Token embeddings + sinusoidal positions, then pre-norm self-attention
    blocks; the sentence embedding is the mean over contextual token rows."""

    def __init__(self, cfg: TextConfig, token_vocab: Sequence[str]):
        self.cfg = cfg
        self.token_vocab = list(token_vocab)
        if self.token_vocab[0] != UNK_TOKEN:
            raise LanguageError("token vocab must start with the <unk> token")
        self._tok2id = {t: i for i, t in enumerate(self.token_vocab)}

    def init_params(self, rng: np.random.Generator, prefix: str = "text") -> dict[str, DiffArray]:
        d = self.cfg.d_model
        p: dict[str, DiffArray] = {}
        p[f"{prefix}.embed"] = nm.uniform_init((len(self.token_vocab), d), d, rng)
        for b in range(self.cfg.blocks):
            pre = f"{prefix}.block{b}"
            for name in ("wq", "wk", "wv", "wo"):
                p[f"{pre}.{name}"] = nm.uniform_init((d, d), d, rng)
            p[f"{pre}.ln1.g"] = DiffArray(np.ones(d), requires_grad=True)
            p[f"{pre}.ln1.b"] = DiffArray(np.zeros(d), requires_grad=True)
            p[f"{pre}.ln2.g"] = DiffArray(np.ones(d), requires_grad=True)
            p[f"{pre}.ln2.b"] = DiffArray(np.zeros(d), requires_grad=True)
            h = d * self.cfg.ffn_mult
            p[f"{pre}.ffn.w0"] = nm.uniform_init((d, h), d, rng)
            p[f"{pre}.ffn.b0"] = nm.uniform_init((h,), d, rng)
            p[f"{pre}.ffn.w1"] = nm.uniform_init((h, d), h, rng)
            p[f"{pre}.ffn.b1"] = nm.uniform_init((d,), h, rng)
        return p

    def token_ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self._tok2id.get(t, 0) for t in tokens], dtype=np.intp)

    def _self_attention(self, x: DiffArray, params, pre: str) -> DiffArray:
        d, heads = self.cfg.d_model, self.cfg.heads
        dk = d // heads
        q = nm.matmul(x, params[f"{pre}.wq"])
        k = nm.matmul(x, params[f"{pre}.wk"])
        v = nm.matmul(x, params[f"{pre}.wv"])
        outs = []
        for h in range(heads):
            sl = (slice(None), slice(h * dk, (h + 1) * dk))
            att = nm.softmax(nm.mul(nm.matmul(q[sl], k[sl].T), 1.0 / math.sqrt(dk)), axis=-1)
            outs.append(nm.matmul(att, v[sl]))
        return nm.matmul(nm.concat(outs, axis=1), params[f"{pre}.wo"])

    def encode(self, tokens: Sequence[str], params: dict[str, DiffArray],
               prefix: str = "text") -> TextEncoding:
        if len(tokens) == 0:
            raise LanguageError("cannot encode an empty token sequence")
        ids = self.token_ids(tokens)
        x = nm.take_rows(params[f"{prefix}.embed"], ids)
        x = nm.add(x, sinusoidal_positions(len(ids), self.cfg.d_model))
        for b in range(self.cfg.blocks):
            pre = f"{prefix}.block{b}"
            normed = nm.layer_norm(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
            x = nm.add(x, self._self_attention(normed, params, pre))
            normed = nm.layer_norm(x, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
            h = nm.relu(nm.add(nm.matmul(normed, params[f"{pre}.ffn.w0"]),
                               params[f"{pre}.ffn.b0"]))
            x = nm.add(x, nm.add(nm.matmul(h, params[f"{pre}.ffn.w1"]),
                                 params[f"{pre}.ffn.b1"]))
        sent = nm.reshape(nm.mean(x, axis=0, keepdims=True), (self.cfg.d_model,))
        return TextEncoding(sentence_emb=sent, token_embs=x)

    def encode_prompts(self, vocab: ClassVocabulary, params: dict[str, DiffArray],
                       prefix: str = "text") -> DiffArray:
        """Stacked sentence embeddings of every class prompt, (|vocab|, d)."""
        rows = [nm.reshape(self.encode(tokenize(build_prompt(c)), params, prefix).sentence_emb,
                           (1, self.cfg.d_model))
                for c in vocab.classes]
        return nm.concat(rows, axis=0)


def init_text_class_head(d_model: int, n_classes: int, rng: np.random.Generator,
                         prefix: str = "text_head") -> dict[str, DiffArray]:
    return {f"{prefix}.w": nm.uniform_init((d_model, n_classes), d_model, rng),
            f"{prefix}.b": nm.uniform_init((n_classes,), d_model, rng)}


def classify_text_target(sentence_emb: DiffArray, params: dict[str, DiffArray],
                         prefix: str = "text_head") -> DiffArray:
    """Class logits for the utterance's target, (|vocab|,)."""
    row = nm.reshape(sentence_emb, (1, -1))
    logits = nm.add(nm.matmul(row, params[f"{prefix}.w"]), params[f"{prefix}.b"])
    return nm.reshape(logits, (-1,))
