"""Seeded query/response generation and the 3/1/1 dataset split.

Five query families per product, each a template grammar slot-filled from
product attributes, plus a templated sales response per query. Every query
names the product's series and category: (series, category) is unique per
product by catalog construction, which keeps query texts distinct across
products and splits (no leakage) and makes the query -> product mapping
learnable.

All randomness is drawn from per-product streams derived via
hash64(global_seed, product_id, ...), so products can be generated in any
order, or in parallel, with identical output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .catalog import BENEFITS, AUDIENCES, Catalog, Product, id_text
from .hashing import hash64

DATASET_FORMAT_VERSION = 1

TRAIN, VAL, TEST = "train", "val", "test"
SPLITS = (TRAIN, VAL, TEST)

# Wrapping applied to every query before tokenization; fixed so token
# sequences stay stable across runs.
PROMPT_PREFIX = "Customer: "
PROMPT_SUFFIX = "\nAssistant:"

STYLES = ("minimalist", "modern", "rustic", "industrial", "classic", "cozy")


class QueryType(IntEnum):
    BASIC = 1
    COMPLEX = 2
    CONTEXT_AUDIENCE = 3
    BENEFIT = 4
    CONTEXT_NEW_AUDIENCE = 5


class MismatchedProduct(ValueError):
    """Sales response requested for a query that belongs to another product."""


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class QueryRecord:
    product_id: str
    query_type: QueryType
    text: str
    audience: str | None  # present exactly for types 3 and 5


@dataclass(frozen=True)
class TrainingExample:
    prompt: str
    response: str
    target_product_id: str
    split: str
    query_type: QueryType


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[TrainingExample, ...]
    val: tuple[TrainingExample, ...]
    test: tuple[TrainingExample, ...]
    seed: int

    def examples(self) -> list[TrainingExample]:
        return list(self.train) + list(self.val) + list(self.test)


_BASIC_TEMPLATES = (
    "looking for a {series} {category}",
    "do you have a {series} {category}?",
    "i want to buy a {series} {category}",
    "show me a {category} from the {series} line",
    "searching for a {series} {category} for my home",
)

# Each complex template embeds at least one hard constraint: a price bound,
# a dimension, or a style word.
_COMPLEX_TEMPLATES = (
    "looking for a {style} {series} {category} under ${budget}",
    "i need a {series} {category} about {width} cm wide",
    "is there a {style} {category} from the {series} line under ${budget}?",
    "searching for a {series} {category} around {height} cm tall that is quick to set up",
    "do you sell a {style} {series} {category} under ${budget}?",
)

_AUDIENCE_TEMPLATES = (
    "looking for a {series} {category} that works for a {audience}",
    "which {series} {category} would you recommend for a {audience}?",
    "i need a {series} {category} suitable for a {audience}",
    "can you suggest a {series} {category} for a {audience} home?",
)

_BENEFIT_TEMPLATES = (
    "looking for a {series} {category} that offers {benefit}",
    "i want a {series} {category} with {benefit}",
    "do you have a {series} {category} known for {benefit}?",
    "which {series} {category} comes with {benefit}?",
)

_NEW_AUDIENCE_TEMPLATES = (
    "would a {series} {category} suit a {audience}?",
    "is the {series} {category} a good fit for a {audience}?",
    "does the {series} {category} make sense for a {audience} home?",
    "i am shopping for a {audience}. would the {series} {category} work?",
)

_RESPONSE_TEMPLATES = (
    "i recommend the {series} {category}, item {art}. it is made of"
    " {material} with a {color} finish and costs {price}. {reason}.",
    "take a look at {art}, our {series} {category} in {color} {material}."
    " it is priced at {price}. {reason}.",
    "the {series} {category} is a great choice. item {art} comes in {color}"
    " {material} and sells for {price}. {reason}.",
    "you might like {art}, the {series} {category}. it features a {color}"
    " {material} build at {price}. {reason}.",
    "our {series} {category}, article {art}, pairs {material} with a {color}"
    " finish for {price}. {reason}.",
)

# Reason clauses keyed by the query context they answer. None of these may
# contain a series, category, material or color word, or the judge would
# count template glue as a factual claim.
_REASONS_GENERIC = (
    "it is a solid pick for everyday use",
    "it fits right into most living spaces",
    "it is one of our most popular picks",
)
_REASONS_BUDGET = (
    "it stays comfortably inside your budget",
    "it leaves plenty of room in your budget",
)
_REASONS_SIZE = (
    "the size is right in line with what you asked for",
    "it should fit the spot you have in mind",
)
_REASONS_STYLE = (
    "the look matches the {style} style you want",
    "it carries the {style} look you asked for",
)
_REASONS_AUDIENCE = (
    "it works remarkably well for a {audience} setup",
    "it suits a {audience} lifestyle nicely",
)
_REASONS_BENEFIT = (
    "you get {benefit} out of the box",
    "it delivers {benefit} just like you asked",
)


def _pick(rng: np.random.Generator, options):
    return options[int(rng.integers(0, len(options)))]


def _budget_bound(price: float) -> int:
    # Smallest multiple of 50 at or above the price; always a true bound.
    return int(-(-price // 50) * 50)


def generate_queries(product: Product, seed: int) -> list[QueryRecord]:
    """The five query records for one product, one per query type.

    Type 3 draws its audience from the product's own tags, type 5 from the
    audience lexicon minus those tags ("new audience").
    """
    product.validate()
    rng = np.random.Generator(np.random.PCG64(
        hash64(seed, product.product_id, "queries")))
    slots = {"series": product.series_name, "category": product.category}

    records = []

    text = _pick(rng, _BASIC_TEMPLATES).format(**slots)
    records.append(QueryRecord(product.product_id, QueryType.BASIC, text, None))

    text = _pick(rng, _COMPLEX_TEMPLATES).format(
        style=_pick(rng, STYLES), budget=_budget_bound(product.price),
        width=product.width, height=product.height, **slots)
    records.append(QueryRecord(product.product_id, QueryType.COMPLEX, text, None))

    audience = _pick(rng, product.audiences)
    text = _pick(rng, _AUDIENCE_TEMPLATES).format(audience=audience, **slots)
    records.append(QueryRecord(
        product.product_id, QueryType.CONTEXT_AUDIENCE, text, audience))

    text = _pick(rng, _BENEFIT_TEMPLATES).format(
        benefit=_pick(rng, product.benefits), **slots)
    records.append(QueryRecord(product.product_id, QueryType.BENEFIT, text, None))

    fresh = [a for a in AUDIENCES if a not in product.audiences]
    audience = _pick(rng, fresh)
    text = _pick(rng, _NEW_AUDIENCE_TEMPLATES).format(audience=audience, **slots)
    records.append(QueryRecord(
        product.product_id, QueryType.CONTEXT_NEW_AUDIENCE, text, audience))

    return records


def _reason(rng: np.random.Generator, query: QueryRecord) -> str:
    """One clause answering the query's context: audience, benefit, or the
    constraint kind found in a complex query's text."""
    qt = query.query_type
    if qt in (QueryType.CONTEXT_AUDIENCE, QueryType.CONTEXT_NEW_AUDIENCE):
        return _pick(rng, _REASONS_AUDIENCE).format(audience=query.audience)
    if qt == QueryType.BENEFIT:
        benefit = next((b for b in BENEFITS if b in query.text), None)
        if benefit is None:
            return _pick(rng, _REASONS_GENERIC)
        return _pick(rng, _REASONS_BENEFIT).format(benefit=benefit)
    if qt == QueryType.COMPLEX:
        # A complex query may carry several constraints; answer one of them.
        style = next((s for s in STYLES if s in query.text.split()), None)
        candidates = []
        if "$" in query.text:
            candidates.append(_REASONS_BUDGET)
        if " cm " in query.text:
            candidates.append(_REASONS_SIZE)
        if style is not None:
            candidates.append(_REASONS_STYLE)
        if candidates:
            clause = _pick(rng, _pick(rng, candidates))
            return clause.format(style=style)
    return _pick(rng, _REASONS_GENERIC)


def generate_sales_response(query: QueryRecord, product: Product, seed: int) -> str:
    """Sales text pairing the query with the product: names the id once, the
    series, the category, the price, one material and one color, and closes
    with a reason clause tied to the query's context. Uses only facts from
    the product record."""
    if query.product_id != product.product_id:
        raise MismatchedProduct(
            f"query is for {query.product_id}, product is {product.product_id}")
    rng = np.random.Generator(np.random.PCG64(
        hash64(seed, product.product_id, "response", int(query.query_type))))
    template = _pick(rng, _RESPONSE_TEMPLATES)
    material = _pick(rng, product.materials)
    color = _pick(rng, product.colors)
    reason = _reason(rng, query)
    return template.format(
        series=product.series_name, category=product.category,
        art=id_text(product.product_id), material=material, color=color,
        price=f"${product.price:.2f}", reason=reason)


def wrap_query(query_text: str) -> str:
    return PROMPT_PREFIX + query_text + PROMPT_SUFFIX


def unwrap_prompt(prompt: str) -> str:
    """Inverse of wrap_query; raises on foreign formats."""
    if not (prompt.startswith(PROMPT_PREFIX) and prompt.endswith(PROMPT_SUFFIX)):
        raise DatasetFormatError("prompt does not match the SFT template")
    return prompt[len(PROMPT_PREFIX):len(prompt) - len(PROMPT_SUFFIX)]


def build_dataset(catalog: Catalog, seed: int) -> DatasetSplit:
    """Per product: generate the five query/response pairs, shuffle them by
    a per-product stream, and allocate 3 to train and 1 each to val and
    test. Split sizes are therefore exactly (3n, n, n)."""
    if len(catalog) == 0:
        raise DatasetFormatError("catalog is empty")
    buckets: dict[str, list[TrainingExample]] = {s: [] for s in SPLITS}
    for product in catalog.products:
        queries = generate_queries(product, seed)
        rng = np.random.Generator(np.random.PCG64(
            hash64(seed, product.product_id, "split")))
        order = rng.permutation(len(queries))
        assignment = [TRAIN, TRAIN, TRAIN, VAL, TEST]
        for slot, qi in enumerate(order):
            query = queries[qi]
            response = generate_sales_response(query, product, seed)
            buckets[assignment[slot]].append(TrainingExample(
                prompt=wrap_query(query.text), response=response,
                target_product_id=product.product_id,
                split=assignment[slot], query_type=query.query_type))
    return DatasetSplit(train=tuple(buckets[TRAIN]), val=tuple(buckets[VAL]),
                        test=tuple(buckets[TEST]), seed=seed)


def corpus_texts(dataset: DatasetSplit) -> list[str]:
    """All prompt and response texts, in split order; the tokenizer's base
    vocabulary is built over exactly this corpus."""
    texts = []
    for ex in dataset.examples():
        texts.append(ex.prompt)
        texts.append(ex.response)
    return texts


def _example_record(ex: TrainingExample) -> dict:
    return {"prompt": ex.prompt, "response": ex.response,
            "target_product_id": ex.target_product_id, "split": ex.split,
            "query_type": int(ex.query_type)}


def save_dataset(dataset: DatasetSplit, paths: dict[str, str | Path],
                 catalog_checksum: int,
                 extra_header: dict | None = None) -> None:
    """Write train/val/test JSON Lines files. Each header carries the seed
    and the catalog file checksum so mismatched pairs are rejected on load."""
    for split in SPLITS:
        header = {"format_version": DATASET_FORMAT_VERSION,
                  "seed": dataset.seed, "catalog_checksum": catalog_checksum,
                  "split": split}
        if extra_header:
            header.update(extra_header)
        examples = getattr(dataset, split)
        lines = [json.dumps(header, sort_keys=True)]
        lines.extend(json.dumps(_example_record(ex), sort_keys=True)
                     for ex in examples)
        Path(paths[split]).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(paths: dict[str, str | Path]) -> tuple[DatasetSplit, int]:
    """Load the three split files; returns (dataset, catalog_checksum).
    Rejects unknown format versions and inconsistent headers."""
    parts: dict[str, tuple[TrainingExample, ...]] = {}
    seeds, checksums = set(), set()
    for split in SPLITS:
        lines = [ln for ln in
                 Path(paths[split]).read_text(encoding="utf-8").splitlines()
                 if ln.strip()]
        if not lines:
            raise DatasetFormatError(f"empty dataset file for split {split}")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"bad dataset header: {e}") from e
        if not isinstance(header, dict):
            raise DatasetFormatError("dataset header is not an object")
        if header.get("format_version") != DATASET_FORMAT_VERSION:
            raise DatasetFormatError(
                f"unsupported dataset format_version "
                f"{header.get('format_version')!r}")
        if header.get("split") != split:
            raise DatasetFormatError(
                f"file for split {split} carries header split "
                f"{header.get('split')!r}")
        try:
            seeds.add(int(header["seed"]))
            checksums.add(int(header["catalog_checksum"]))
            examples = []
            for ln in lines[1:]:
                rec = json.loads(ln)
                examples.append(TrainingExample(
                    prompt=rec["prompt"], response=rec["response"],
                    target_product_id=rec["target_product_id"],
                    split=rec["split"], query_type=QueryType(rec["query_type"])))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
            raise DatasetFormatError(f"malformed dataset record: {e}") from e
        parts[split] = tuple(examples)
    if len(seeds) != 1 or len(checksums) != 1:
        raise DatasetFormatError("split files disagree on seed or catalog")
    return (DatasetSplit(train=parts[TRAIN], val=parts[VAL], test=parts[TEST],
                         seed=seeds.pop()),
            checksums.pop())
