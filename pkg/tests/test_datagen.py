import re

import pytest
from hypothesis import given, strategies as st

from prodlm.catalog import (
    CATEGORIES, COLORS, MATERIALS, SERIES_NAMES, generate_catalog, id_text,
)
from prodlm.datagen import (
    PROMPT_PREFIX, PROMPT_SUFFIX, STYLES, DatasetFormatError,
    MismatchedProduct, QueryType, _budget_bound, build_dataset, corpus_texts,
    generate_queries, generate_sales_response, load_dataset, save_dataset,
    unwrap_prompt, wrap_query,
)
from prodlm.tokenizer import ID_SPAN_RE


def _paths(tmp_path):
    return {s: tmp_path / f"{s}.jsonl" for s in ("train", "val", "test")}


def test_five_query_types_per_product(tiny_catalog):
    for product in tiny_catalog.products:
        records = generate_queries(product, seed=5)
        assert [r.query_type for r in records] == list(QueryType)
        for r in records:
            assert r.product_id == product.product_id
            assert product.series_name in r.text
            assert product.category in r.text
            assert ID_SPAN_RE.search(r.text) is None  # queries never leak ids
            if r.query_type in (QueryType.CONTEXT_AUDIENCE,
                                QueryType.CONTEXT_NEW_AUDIENCE):
                assert r.audience is not None and r.audience in r.text
            else:
                assert r.audience is None


def test_audience_vs_new_audience(tiny_catalog):
    for product in tiny_catalog.products:
        records = generate_queries(product, seed=5)
        ctx = records[QueryType.CONTEXT_AUDIENCE - 1]
        new = records[QueryType.CONTEXT_NEW_AUDIENCE - 1]
        assert ctx.audience in product.audiences
        assert new.audience not in product.audiences


def test_queries_deterministic(tiny_catalog):
    p = tiny_catalog.products[0]
    assert generate_queries(p, seed=5) == generate_queries(p, seed=5)
    assert generate_queries(p, seed=5) != generate_queries(p, seed=6)


@given(st.floats(min_value=0.01, max_value=100000))
def test_budget_bound_is_true_bound(price):
    b = _budget_bound(price)
    assert b >= price and b % 50 == 0 and b - price < 50


def test_response_names_facts(tiny_catalog):
    for product in tiny_catalog.products:
        for query in generate_queries(product, seed=5):
            resp = generate_sales_response(query, product, seed=5)
            assert resp.count(id_text(product.product_id)) == 1
            assert product.series_name in resp
            assert product.category in resp
            assert f"${product.price:.2f}" in resp
            assert any(m in resp for m in product.materials)
            assert any(c in resp for c in product.colors)


def test_response_rejects_foreign_query(tiny_catalog):
    a, b = tiny_catalog.products[:2]
    query = generate_queries(a, seed=5)[0]
    with pytest.raises(MismatchedProduct):
        generate_sales_response(query, b, seed=5)


def test_split_sizes_and_allocation(tiny_catalog):
    ds = build_dataset(tiny_catalog, seed=5)
    n = len(tiny_catalog)
    assert (len(ds.train), len(ds.val), len(ds.test)) == (3 * n, n, n)
    for product in tiny_catalog.products:
        got = {s: sum(ex.target_product_id == product.product_id
                      for ex in getattr(ds, s))
               for s in ("train", "val", "test")}
        assert got == {"train": 3, "val": 1, "test": 1}
    # each product contributes each query type exactly once overall
    for product in tiny_catalog.products:
        types = sorted(ex.query_type for ex in ds.examples()
                       if ex.target_product_id == product.product_id)
        assert types == list(QueryType)


def test_split_membership_field_consistent(tiny_dataset):
    for s in ("train", "val", "test"):
        assert all(ex.split == s for ex in getattr(tiny_dataset, s))


def test_prompts_globally_unique():
    catalog = generate_catalog(seed=31, n_products=64, n_categories=8)
    ds = build_dataset(catalog, seed=31)
    prompts = [ex.prompt for ex in ds.examples()]
    assert len(set(prompts)) == len(prompts)


def test_dataset_deterministic(tiny_catalog):
    a = build_dataset(tiny_catalog, seed=5)
    b = build_dataset(tiny_catalog, seed=5)
    assert a == b
    c = build_dataset(tiny_catalog, seed=6)
    assert a != c


def test_corpus_texts_cover_everything(tiny_dataset):
    texts = corpus_texts(tiny_dataset)
    assert len(texts) == 2 * len(tiny_dataset.examples())


def test_wrap_unwrap():
    q = "looking for a fjordal sofa"
    w = wrap_query(q)
    assert w.startswith(PROMPT_PREFIX) and w.endswith(PROMPT_SUFFIX)
    assert unwrap_prompt(w) == q
    with pytest.raises(DatasetFormatError):
        unwrap_prompt("User: hello")


def test_save_load_round_trip(tmp_path, tiny_dataset):
    paths = _paths(tmp_path)
    save_dataset(tiny_dataset, paths, catalog_checksum=777)
    loaded, checksum = load_dataset(paths)
    assert loaded == tiny_dataset
    assert checksum == 777


def test_load_rejects_header_disagreement(tmp_path, tiny_dataset):
    paths = _paths(tmp_path)
    save_dataset(tiny_dataset, paths, catalog_checksum=777)
    text = paths["val"].read_text()
    paths["val"].write_text(
        text.replace('"catalog_checksum": 777', '"catalog_checksum": 778', 1))
    with pytest.raises(DatasetFormatError):
        load_dataset(paths)


def test_load_rejects_swapped_split_files(tmp_path, tiny_dataset):
    paths = _paths(tmp_path)
    save_dataset(tiny_dataset, paths, catalog_checksum=1)
    swapped = dict(paths, val=paths["test"], test=paths["val"])
    with pytest.raises(DatasetFormatError):
        load_dataset(swapped)


def test_load_rejects_tampered_record(tmp_path, tiny_dataset):
    paths = _paths(tmp_path)
    save_dataset(tiny_dataset, paths, catalog_checksum=1)
    lines = paths["train"].read_text().splitlines()
    lines[1] = lines[1].replace('"prompt"', '"promp"', 1)
    paths["train"].write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError):
        load_dataset(paths)


# --- judge decidability audit -------------------------------------------
# The factual judge scans responses for mentions from these lexicons, so no
# template glue word may collide with them, and the lexicons themselves must
# be pairwise disjoint.

_JUDGED_LEXICONS = {
    "categories": set(CATEGORIES),
    "materials": set(MATERIALS),
    "colors": set(COLORS),
    "series": set(SERIES_NAMES),
}


def test_judged_lexicons_pairwise_disjoint():
    names = sorted(_JUDGED_LEXICONS)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            overlap = _JUDGED_LEXICONS[a] & _JUDGED_LEXICONS[b]
            assert not overlap, (a, b, overlap)


def test_template_glue_avoids_judged_words():
    from prodlm import datagen as dg

    template_pools = (
        dg._BASIC_TEMPLATES, dg._COMPLEX_TEMPLATES, dg._AUDIENCE_TEMPLATES,
        dg._BENEFIT_TEMPLATES, dg._NEW_AUDIENCE_TEMPLATES,
        dg._RESPONSE_TEMPLATES, dg._REASONS_GENERIC, dg._REASONS_BUDGET,
        dg._REASONS_SIZE, dg._REASONS_STYLE, dg._REASONS_AUDIENCE,
        dg._REASONS_BENEFIT,
    )
    judged = set().union(*_JUDGED_LEXICONS.values())
    for pool in template_pools:
        for template in pool:
            glue = re.sub(r"\{[a-z]+\}", " ", template)
            words = re.findall(r"[a-z]+", glue.lower())
            hits = judged & set(words)
            assert not hits, (template, hits)


def test_reason_slot_values_avoid_judged_words():
    # styles and audiences are interpolated into response reasons
    judged = set().union(*_JUDGED_LEXICONS.values())
    from prodlm.catalog import AUDIENCES
    assert not judged & set(STYLES)
    assert not judged & set(AUDIENCES)


def test_templates_carry_no_stray_numbers_or_prices():
    # any digit, "$", or "cm" in a response must come from a slot value
    from prodlm import datagen as dg

    for pool in (dg._RESPONSE_TEMPLATES, dg._REASONS_GENERIC,
                 dg._REASONS_BUDGET, dg._REASONS_SIZE, dg._REASONS_STYLE,
                 dg._REASONS_AUDIENCE, dg._REASONS_BENEFIT):
        for template in pool:
            glue = re.sub(r"\{[a-z]+\}", " ", template)
            assert not re.search(r"[0-9$]", glue), template
            assert not re.search(r"\bcm\b", glue), template
