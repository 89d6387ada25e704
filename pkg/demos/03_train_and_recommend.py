"""Fine-tune a small model on the synthetic desk and query it.

Trains a 2-layer model on 8 products for about half a minute, then asks
for recommendations. With id tokens every emitted id is guaranteed to be
a real vocabulary entry, so the hallucination flag stays False.

    python3 demos/03_train_and_recommend.py
"""

import time

from prodlm.catalog import generate_catalog, id_text
from prodlm.datagen import build_dataset, corpus_texts, unwrap_prompt
from prodlm.decoding import generate, recommend_topk
from prodlm.model import ModelConfig, expand_embeddings, init_params
from prodlm.tokenizer import build_base_vocab, expand_with_product_ids
from prodlm.training import Hyperparams, train_sft

catalog = generate_catalog(seed=7, n_products=8, n_categories=3)
dataset = build_dataset(catalog, seed=7)
vocab = expand_with_product_ids(build_base_vocab(corpus_texts(dataset)),
                                catalog)

cfg = ModelConfig(n_layers=2, n_heads=2, d_model=64, d_ff=256,
                  context_len=128, vocab_size=vocab.base_size, seed=7)
params = expand_embeddings(init_params(cfg), len(catalog),
                           noise_scale=0.02, seed=7)

hp = Hyperparams(lr=2e-3, batch_size=4, epochs=100, seed=7)
print(f"training {len(dataset.train)} examples, {hp.epochs} epochs ...")
t0 = time.monotonic()
params, log = train_sft(params, params.config, dataset, vocab, hp)
train = log.losses("train")
print(f"done in {time.monotonic() - t0:.0f}s; train loss "
      f"{train[0]:.3f} -> {train[-1]:.3f}\n")

example = dataset.train[0]
query = unwrap_prompt(example.prompt)
print(f"query: {query}")
print(f"gold:  {id_text(example.target_product_id)}")
for r in recommend_topk(params, params.config, vocab, catalog, query, k=3):
    mark = " (hallucinated!)" if r.hallucinated else ""
    print(f"  {r.rank}. {r.product_id}  logprob {r.sequence_logprob:.3f}{mark}")

text, _ = generate(params, params.config, vocab, example.prompt, max_new=96)
print(f"\ngreedy response:\n  {text}")
