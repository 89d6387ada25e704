"""The experimental variable: product ids as one token vs many.

A baseline vocabulary spells ART-12345678 out of fragments (ART, -, digits).
Expanding the vocabulary gives every catalog id a single dedicated token,
and expanding the tied embedding matrix gives that token a trainable row
without disturbing anything the model already knows.

    python3 demos/02_tokenizer_id_tokens.py
"""

import numpy as np

from prodlm.catalog import generate_catalog, id_text
from prodlm.datagen import build_dataset, corpus_texts
from prodlm.model import ModelConfig, expand_embeddings, forward, init_params
from prodlm.tokenizer import (
    build_base_vocab, decode_tokens, encode, expand_with_product_ids,
)

catalog = generate_catalog(seed=42, n_products=8, n_categories=3)
dataset = build_dataset(catalog, seed=42)

base = build_base_vocab(corpus_texts(dataset))
wide = expand_with_product_ids(base, catalog)
print(f"base vocabulary: {len(base)} tokens; "
      f"expanded: {len(wide)} (+{len(wide) - len(base)} id tokens)\n")

pid = id_text(catalog.products[0].product_id)
frag = encode(base, pid)
atom = encode(wide, pid)
print(f"{pid!r} in baseline mode -> {len(frag)} tokens:")
print("   ", [base.tokens[i] for i in frag])
print(f"{pid!r} in id mode       -> {len(atom)} token:")
print("   ", [wide.tokens[i] for i in atom])

# the vocabulary is closed over the corpus, so stick to corpus words
p = catalog.products[0]
text = f"the {p.series_name} {p.category} is item {pid}"
assert decode_tokens(wide, encode(wide, text)) == text
print(f"\nround trip holds: {text!r}")

# base token ids are unchanged, so a checkpoint's old rows still line up
assert wide.tokens[:len(base)] == base.tokens

cfg = ModelConfig(n_layers=1, n_heads=2, d_model=32, d_ff=64,
                  context_len=32, vocab_size=len(base), seed=0)
params = init_params(cfg)
grown = expand_embeddings(params, n_new=len(wide) - len(base),
                          noise_scale=0.02, seed=0)

probe = encode(base, "we suggest")
old = forward(params, cfg, probe)
new = forward(grown, grown.config, probe)
same = np.array_equal(new[:, :len(base)], old)
print(f"logits over the original vocabulary after expansion: "
      f"{'bit-identical' if same else 'CHANGED (bug!)'}")
print(f"new rows start near the embedding column mean, "
      f"noise scale 0.02, and train from there")
