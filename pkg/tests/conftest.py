"""Shared fixtures: a small catalog/dataset pair and one genuinely trained
tiny model reused by decoding and evaluation tests (training it once per
session keeps the suite fast)."""

import pytest

import prodlm as P

TINY_SEED = 7


@pytest.fixture(scope="session")
def tiny_catalog():
    return P.generate_catalog(seed=TINY_SEED, n_products=8, n_categories=3)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_catalog):
    return P.build_dataset(tiny_catalog, seed=TINY_SEED)


@pytest.fixture(scope="session")
def tiny_base_vocab(tiny_dataset):
    return P.build_base_vocab(P.corpus_texts(tiny_dataset))


@pytest.fixture(scope="session")
def tiny_vocab(tiny_base_vocab, tiny_catalog):
    return P.expand_with_product_ids(tiny_base_vocab, tiny_catalog)


@pytest.fixture(scope="session")
def tiny_run(tiny_catalog, tiny_dataset, tiny_vocab):
    """A small model trained long enough to actually emit product ids."""
    vocab = tiny_vocab
    cfg = P.ModelConfig(n_layers=2, n_heads=2, d_model=64, d_ff=256,
                        context_len=128, vocab_size=vocab.base_size,
                        seed=TINY_SEED)
    params = P.init_params(cfg)
    params = P.expand_embeddings(params, len(vocab) - vocab.base_size,
                                 0.02, seed=TINY_SEED)
    hp = P.Hyperparams(lr=2e-3, batch_size=4, epochs=100, seed=TINY_SEED)
    trained, log = P.train_sft(params, params.config, tiny_dataset, vocab, hp)
    return {"params": trained, "vocab": vocab, "catalog": tiny_catalog,
            "dataset": tiny_dataset, "log": log}
