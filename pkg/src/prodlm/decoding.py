"""Generation and product recommendation on top of a fine-tuned model.

Decoding keeps per-layer key/value caches so each new token costs one
incremental attention step instead of a full re-forward; the cached path is
held numerically equal to the full forward pass by tests. Beam search ranks
finished beams by length-normalized log-probability (total divided by the
number of generated tokens) to avoid favoring short continuations.

Recommendations come from beam search over the SFT prompt template: each
finished beam contributes the first product ID it mentions. In id_mode that
ID is read directly off the token stream, so it can only ever be a catalog
ID; in baseline mode IDs are parsed out of the decoded text and may be
inventions, which is exactly what the hallucination metric measures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as lm
from .catalog import Catalog, id_text, product_lookup
from .datagen import wrap_query
from .hashing import hash64  # noqa: F401  (re-exported for runners)
from .model import InvalidArguments, ModelConfig, Parameters
from .tokenizer import BOS, EOS, ID_SPAN_RE, Vocab, decode_tokens, encode

BEAM_MAX_NEW = 96


class PromptTooLong(ValueError):
    pass


class NoRecommendation(RuntimeError):
    """No beam produced any product ID for the query."""


@dataclass(frozen=True)
class Recommendation:
    rank: int
    product_id: str  # "ART-XXXXXXXX" surface form
    sequence_logprob: float  # length-normalized; always <= 0
    response_text: str
    hallucinated: bool


class _Decoder:
    """Incremental decoder over up to `width` parallel hypotheses sharing
    one prompt. Rows of the KV caches are reordered by parent index at each
    step, which is all beam search needs."""

    def __init__(self, params: Parameters, config: ModelConfig,
                 prompt_tokens, width: int, max_new: int):
        self.params = params
        self.config = config
        t0 = len(prompt_tokens)
        cap = t0 + max_new
        hd = config.head_dim
        self.k = [np.zeros((width, config.n_heads, cap, hd)) for _ in
                  range(config.n_layers)]
        self.v = [np.zeros((width, config.n_heads, cap, hd)) for _ in
                  range(config.n_layers)]
        self.cur_len = t0
        self.n_live = 1
        arr = np.asarray(prompt_tokens, dtype=np.int64)[None]
        logits, cache = lm._forward_batch(params, config, arr,
                                          need_cache=True)
        for i, layer in enumerate(cache["layers"]):
            self.k[i][0, :, :t0] = layer["k"][0]
            self.v[i][0, :, :t0] = layer["v"][0]
        self.last_logits = logits[0, -1]  # [V]

    def step(self, parents, tokens_new) -> np.ndarray:
        """Advance each hypothesis: row j continues cache row parents[j]
        with token tokens_new[j]. Returns next-token logits [n, V]."""
        p, cfg = self.params, self.config
        n = len(tokens_new)
        pos = self.cur_len
        if pos >= cfg.context_len:
            raise lm.SequenceTooLong("context window exhausted")
        parents = np.asarray(parents, dtype=np.int64)
        for i in range(cfg.n_layers):
            self.k[i][:n] = self.k[i][parents]
            self.v[i][:n] = self.v[i][parents]
        x = p["tok_emb"][np.asarray(tokens_new, dtype=np.int64)] \
            + p["pos_emb"][pos]
        scale = 1.0 / np.sqrt(cfg.head_dim)
        for i in range(cfg.n_layers):
            pre = f"layers.{i}."
            h1, _, _ = lm._ln_forward(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            q = h1 @ p[pre + "attn.wq"]
            k_new = h1 @ p[pre + "attn.wk"]
            v_new = h1 @ p[pre + "attn.wv"]
            hd = cfg.head_dim
            qh = q.reshape(n, cfg.n_heads, 1, hd)
            self.k[i][:n, :, pos] = k_new.reshape(n, cfg.n_heads, hd)
            self.v[i][:n, :, pos] = v_new.reshape(n, cfg.n_heads, hd)
            keys = self.k[i][:n, :, :pos + 1]
            vals = self.v[i][:n, :, :pos + 1]
            scores = np.matmul(qh, keys.transpose(0, 1, 3, 2)) * scale
            scores -= scores.max(axis=-1, keepdims=True)
            attn = np.exp(scores)
            attn /= attn.sum(axis=-1, keepdims=True)
            ctx = np.matmul(attn, vals).reshape(n, cfg.d_model)
            x = x + ctx @ p[pre + "attn.wo"]
            h2, _, _ = lm._ln_forward(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            f1 = h2 @ p[pre + "ff.w1"] + p[pre + "ff.b1"]
            x = x + lm._gelu(f1) @ p[pre + "ff.w2"] + p[pre + "ff.b2"]
        xf, _, _ = lm._ln_forward(x, p["ln_f.g"], p["ln_f.b"])
        self.cur_len = pos + 1
        self.n_live = n
        return xf @ p["tok_emb"].T


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _prompt_tokens(vocab: Vocab, config: ModelConfig, prompt: str):
    tokens = [BOS] + encode(vocab, prompt)
    if len(tokens) >= config.context_len:
        raise PromptTooLong(
            f"prompt occupies {len(tokens)} of {config.context_len} positions")
    return tokens


def _greedy(params, config, vocab, prompt_tokens, max_new):
    room = config.context_len - len(prompt_tokens)
    limit = min(max_new, room)
    dec = _Decoder(params, config, prompt_tokens, width=1, max_new=limit)
    logits = dec.last_logits[None]
    out, total = [], 0.0
    for _ in range(limit):
        logp = _log_softmax(logits)[0]
        tok = int(np.argmax(logp))
        total += float(logp[tok])
        out.append(tok)
        if tok == EOS:
            break
        logits = dec.step([0], [tok])
    return out, total


@dataclass(frozen=True)
class _Finished:
    tokens: tuple[int, ...]
    total: float

    @property
    def norm(self) -> float:
        return self.total / max(1, len(self.tokens))


def _beam_search(params, config, vocab, prompt_tokens, width: int,
                 max_new: int) -> list[_Finished]:
    """All finished hypotheses, best normalized score first. Ties break on
    discovery order, which is itself deterministic."""
    room = config.context_len - len(prompt_tokens)
    limit = min(max_new, room)
    if limit <= 0:
        return []
    dec = _Decoder(params, config, prompt_tokens, width, limit)
    live_tokens = [()]  # generated suffixes of live beams
    live_total = np.zeros(1)
    logits = dec.last_logits[None]
    finished = []
    for step_i in range(limit):
        logp = _log_softmax(logits)
        cand = live_total[:, None] + logp  # [n_live, V]
        flat = cand.reshape(-1)
        n_take = min(width, flat.size)
        # lexsort: primary key last -> sort by score desc, then beam, token
        beam_idx, tok_idx = np.divmod(np.arange(flat.size), logp.shape[1])
        order = np.lexsort((tok_idx, beam_idx, -flat))[:n_take]
        parents, next_tokens, survivors, totals = [], [], [], []
        for o in order:
            b, t = int(beam_idx[o]), int(tok_idx[o])
            seq = live_tokens[b] + (t,)
            if t == EOS or step_i == limit - 1:
                finished.append(_Finished(seq, float(flat[o])))
            else:
                parents.append(b)
                next_tokens.append(t)
                survivors.append(seq)
                totals.append(float(flat[o]))
        if not parents:
            break
        logits = dec.step(parents, next_tokens)
        live_tokens = survivors
        live_total = np.array(totals)
    finished.sort(key=lambda f: -f.norm)
    return finished


def generate(params: Parameters, config: ModelConfig, vocab: Vocab,
             prompt: str, max_new: int, strategy="greedy"):
    """Continue the prompt until EOS or max_new tokens. Returns (text,
    total log-probability of the generated tokens). strategy is "greedy"
    or ("beam", width); beam returns its best-scoring finished sequence."""
    if max_new < 0:
        raise InvalidArguments("max_new must be >= 0")
    prompt_tokens = _prompt_tokens(vocab, config, prompt)
    if max_new == 0:
        return "", 0.0
    if strategy == "greedy":
        out, total = _greedy(params, config, vocab, prompt_tokens, max_new)
    else:
        kind, width = strategy
        if kind != "beam" or width < 1:
            raise InvalidArguments(f"unknown strategy {strategy!r}")
        finished = _beam_search(params, config, vocab, prompt_tokens,
                                width, max_new)
        if not finished:
            return "", 0.0
        best = finished[0]
        out, total = list(best.tokens), best.total
    return decode_tokens(vocab, out), total


def extract_product_ids(text: str) -> list[str]:
    """Ordered first-occurrence "ART-XXXXXXXX" spans, deduplicated by their
    digit payload."""
    seen, out = set(), []
    for m in ID_SPAN_RE.finditer(text):
        pid = m.group(1)
        if pid not in seen:
            seen.add(pid)
            out.append(id_text(pid))
    return out


def _first_id(vocab: Vocab, tokens) -> str | None:
    """First product id (bare digits) mentioned by a generated sequence.
    id_mode reads ID tokens straight from the stream; baseline mode parses
    the decoded text."""
    if vocab.id_mode:
        rev = vocab.id_index_to_pid
        for t in tokens:
            pid = rev.get(int(t))
            if pid is not None:
                return pid
        return None
    ids = extract_product_ids(decode_tokens(vocab, list(tokens)))
    return ids[0][4:] if ids else None


def recommend_topk(params: Parameters, config: ModelConfig, vocab: Vocab,
                   catalog: Catalog, query: str, k: int,
                   max_new: int = BEAM_MAX_NEW) -> list[Recommendation]:
    """Top-k product recommendations for a raw customer query. Beam search
    with width max(2k, 8); each finished beam yields the first ID it
    mentions; duplicates keep their best-scoring beam."""
    if k < 1:
        raise InvalidArguments("k must be >= 1")
    prompt_tokens = _prompt_tokens(vocab, config, wrap_query(query))
    width = max(2 * k, 8)
    finished = _beam_search(params, config, vocab, prompt_tokens, width,
                            max_new)
    recs = []
    taken = set()
    for beam in finished:  # already best-first
        pid = _first_id(vocab, beam.tokens)
        if pid is None or pid in taken:
            continue
        taken.add(pid)
        recs.append(Recommendation(
            rank=len(recs) + 1, product_id=id_text(pid),
            sequence_logprob=beam.norm,
            response_text=decode_tokens(vocab, list(beam.tokens)),
            hallucinated=product_lookup(catalog, pid) is None))
        if len(recs) == k:
            break
    if not recs:
        raise NoRecommendation("no beam mentioned any product id")
    return recs
