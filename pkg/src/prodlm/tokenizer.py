"""Word-and-digit tokenizer with an optional atomic product-ID block.

Two modes share one base vocabulary built from the training corpus:

* id_mode=False (baseline): a product id like "ART-00001234" fragments into
  "art", "-", and eight single-digit tokens.
* id_mode=True: every catalog id is one atomic token appended after the base
  vocabulary, so an id can never be partially generated.

Normalization lowercases everything except canonical "ART-XXXXXXXX" spans,
collapses whitespace, keeps ".,!?$-" as standalone marks and treats any
other character as a separator. ``normalize``, ``encode`` and
``decode_tokens`` are built on one shared surface-token pipeline, so
``decode_tokens(encode(t)) == normalize(t)`` holds for in-vocabulary text in
both modes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .catalog import Catalog, id_text

VOCAB_FORMAT_VERSION = 1

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

PUNCT = ".,!?$-"
_DIGITS = frozenset("0123456789")

# Maximal "ART-" + exactly 8 digits, any case, not embedded in a longer
# word or digit run.
ID_SPAN_RE = re.compile(r"(?<![0-9A-Za-z])[Aa][Rr][Tt]-([0-9]{8})(?![0-9])")

_PIECE_RE = re.compile(r"[a-z]+|[0-9]|[.,!?$\-]")
_NON_TOKEN_RE = re.compile(r"[^a-z0-9.,!?$\- ]")


class EmptyCorpus(ValueError):
    pass


class AlreadyExpanded(ValueError):
    pass


class IndexOutOfRange(ValueError):
    pass


class VocabFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    """Token table. Indices 0..3 are the specials; in id_mode the id block
    occupies [base_size, base_size + n_ids) in catalog order."""

    tokens: tuple[str, ...]
    base_size: int
    id_mode: bool
    id_block: dict[str, int]  # bare 8-digit product_id -> token index

    def __post_init__(self):
        if self.tokens[:4] != SPECIAL_TOKENS:
            raise VocabFormatError("specials must occupy indices 0..3")
        if len(set(self.tokens)) != len(self.tokens):
            raise VocabFormatError("token strings must be unique")
        if self.id_mode:
            expected = set(range(self.base_size, len(self.tokens)))
            if set(self.id_block.values()) != expected:
                raise VocabFormatError("id block must span [base_size, len)")
        elif self.id_block:
            raise VocabFormatError("id_block must be empty when id_mode is off")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def index(self) -> dict[str, int]:
        # Built lazily; Vocab is immutable so caching is safe.
        cached = getattr(self, "_index", None)
        if cached is None:
            cached = {t: i for i, t in enumerate(self.tokens)}
            object.__setattr__(self, "_index", cached)
        return cached

    @property
    def id_index_to_pid(self) -> dict[int, str]:
        cached = getattr(self, "_rev_ids", None)
        if cached is None:
            cached = {i: pid for pid, i in self.id_block.items()}
            object.__setattr__(self, "_rev_ids", cached)
        return cached


def _segment_pieces(segment: str) -> list[str]:
    """Lowercased word / single-digit / punctuation pieces of a non-ID span."""
    return _PIECE_RE.findall(_NON_TOKEN_RE.sub(" ", segment.lower()))


def surface_tokens(text: str) -> list[str]:
    """Split text into surface token strings; each recognized id span
    becomes one canonical "ART-XXXXXXXX" entry."""
    toks: list[str] = []
    pos = 0
    for m in ID_SPAN_RE.finditer(text):
        toks.extend(_segment_pieces(text[pos:m.start()]))
        toks.append("ART-" + m.group(1))
        pos = m.end()
    toks.extend(_segment_pieces(text[pos:]))
    return toks


def _joined(prev: str, cur: str) -> bool:
    # Spacing rules for detokenization: ".,!?" attach left, "$" attaches
    # right, hyphens bind both sides, digits bind to digits and to a
    # preceding decimal point.
    if cur in (".", ",", "!", "?"):
        return True
    if cur == "-" or prev == "-":
        return True
    if prev == "$":
        return True
    if cur in _DIGITS and (prev in _DIGITS or prev == "."):
        return True
    return False


def _detokenize(tokens: list[str]) -> str:
    parts: list[str] = []
    prev = None
    for tok in tokens:
        if prev is not None and not _joined(prev, tok):
            parts.append(" ")
        parts.append(tok)
        prev = tok
    return "".join(parts)


def normalize(text: str) -> str:
    """Canonical surface form: what decoding an encoding of ``text`` yields
    when every word is in vocabulary. Id spans that only become maximal
    after detokenization (e.g. "0art-00110011" splitting into "0" + id
    fragments) are canonicalized the same way decoding does."""
    text = _detokenize(surface_tokens(text))
    return ID_SPAN_RE.sub(lambda m: "ART-" + m.group(1), text)


def build_base_vocab(corpus: list[str]) -> Vocab:
    """Closed word-level vocabulary over a corpus: specials, then the sorted
    union of corpus pieces, all ten digits, and the retained punctuation."""
    if not corpus:
        raise EmptyCorpus("corpus must contain at least one text")
    words: set[str] = set()
    for text in corpus:
        for tok in surface_tokens(text):
            if ID_SPAN_RE.fullmatch(tok):
                # Ids contribute their baseline fragments to the base vocab.
                words.update(_segment_pieces(tok.lower()))
            else:
                words.add(tok)
    words.update(_DIGITS)
    words.update(PUNCT)
    tokens = SPECIAL_TOKENS + tuple(sorted(words))
    return Vocab(tokens=tokens, base_size=len(tokens), id_mode=False, id_block={})


def expand_with_product_ids(vocab: Vocab, catalog: Catalog) -> Vocab:
    """Append one atomic token per catalog product, in catalog order. Base
    tokens keep their indices."""
    if vocab.id_mode:
        raise AlreadyExpanded("vocabulary already carries an id block")
    id_tokens = tuple(id_text(p.product_id) for p in catalog.products)
    id_block = {p.product_id: vocab.base_size + i
                for i, p in enumerate(catalog.products)}
    return Vocab(tokens=vocab.tokens + id_tokens, base_size=vocab.base_size,
                 id_mode=True, id_block=id_block)


def encode(vocab: Vocab, text: str) -> list[int]:
    """Encode text to token indices. In id_mode, catalog id spans emit their
    single atomic token; everything else is word/digit tokenized with UNK
    for out-of-vocabulary words."""
    index = vocab.index
    ids: list[int] = []
    for tok in surface_tokens(text):
        m = ID_SPAN_RE.fullmatch(tok)
        if m is not None:
            atom = vocab.id_block.get(m.group(1)) if vocab.id_mode else None
            if atom is not None:
                ids.append(atom)
            else:
                ids.extend(index.get(piece, UNK)
                           for piece in _segment_pieces(tok.lower()))
        else:
            ids.append(index.get(tok, UNK))
    return ids


def decode_tokens(vocab: Vocab, indices: list[int]) -> str:
    """Detokenize, dropping specials. Baseline-fragmented id surfaces are
    re-canonicalized to "ART-XXXXXXXX" so both modes round-trip."""
    n = len(vocab.tokens)
    toks: list[str] = []
    for idx in indices:
        if not 0 <= idx < n:
            raise IndexOutOfRange(f"token index {idx} out of range [0, {n})")
        if idx >= 4:
            toks.append(vocab.tokens[idx])
    text = _detokenize(toks)
    return ID_SPAN_RE.sub(lambda m: "ART-" + m.group(1), text)


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    lines = [f"VOCAB {VOCAB_FORMAT_VERSION} {vocab.base_size} "
             f"{int(vocab.id_mode)}"]
    lines.extend(vocab.tokens)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path: str | Path) -> Vocab:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("VOCAB "):
        raise VocabFormatError("missing VOCAB header")
    fields = lines[0].split()
    if len(fields) != 4 or fields[1] != str(VOCAB_FORMAT_VERSION):
        raise VocabFormatError(f"unsupported vocab header {lines[0]!r}")
    return _assemble(tuple(lines[1:]), int(fields[2]), bool(int(fields[3])))


def vocab_to_dict(vocab: Vocab) -> dict:
    return {"tokens": list(vocab.tokens), "base_size": vocab.base_size,
            "id_mode": vocab.id_mode}


def vocab_from_dict(d: dict) -> Vocab:
    return _assemble(tuple(d["tokens"]), int(d["base_size"]), bool(d["id_mode"]))


def _assemble(tokens: tuple[str, ...], base_size: int, id_mode: bool) -> Vocab:
    id_block = {}
    if id_mode:
        for i, tok in enumerate(tokens[base_size:], start=base_size):
            m = ID_SPAN_RE.fullmatch(tok)
            if not m or tok != "ART-" + m.group(1):
                raise VocabFormatError(f"bad id token {tok!r}")
            id_block[m.group(1)] = i
    return Vocab(tokens=tokens, base_size=base_size, id_mode=id_mode,
                 id_block=id_block)
