"""Synthetic product catalog: generation, lookup, and JSON Lines storage.

The catalog is fully determined by a 64-bit seed. All attribute values come
from the fixed lexicons below, which are shared with the data generator and
the factual judge; keeping them disjoint from each other and from template
glue words is what makes the judge decidable, so lexicon edits must preserve
that property (tests/test_datagen.py enforces it).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hashing import hash64

CATALOG_FORMAT_VERSION = 1

# Product categories: single lowercase words so whole-word matching in the
# judge is unambiguous (no category is a substring-at-word-boundary of
# another, and none collides with materials/colors/series).
CATEGORIES = (
    "sofa", "armchair", "bookcase", "wardrobe", "dresser", "nightstand",
    "desk", "bench", "stool", "recliner", "ottoman", "cabinet", "sideboard",
    "loveseat", "futon", "daybed", "cot", "headboard", "shelf", "table",
    "chair", "bed", "mirror", "lamp", "rug", "curtain", "cushion",
    "blanket", "vase", "clock",
)

# Series names are coined prefix+suffix pseudo-Nordic words: they never
# collide with English glue words, and 120 of them cover the largest
# per-category slice of a paper-scale catalog (2,033 / 25 -> 82).
_SERIES_PREFIXES = (
    "fjor", "kran", "lyse", "tand", "malmu", "bjork", "sunde", "varde",
    "gryt", "holme", "torv", "eike",
)
_SERIES_SUFFIXES = (
    "dal", "vik", "bo", "nes", "mark", "lund", "sta", "berg", "sjo", "holt",
)
SERIES_NAMES = tuple(p + s for p in _SERIES_PREFIXES for s in _SERIES_SUFFIXES)

MATERIALS = (
    "oak", "pine", "birch", "walnut", "bamboo", "teak", "ash", "beech",
    "steel", "aluminum", "brass", "copper", "glass", "marble", "leather",
    "velvet", "linen", "cotton", "wool", "rattan",
)

COLORS = (
    "white", "black", "gray", "beige", "brown", "red", "blue", "green",
    "yellow", "orange", "purple", "pink", "teal", "navy", "cream",
    "charcoal",
)

# Benefits are noun phrases so "with {benefit}" reads naturally in queries.
BENEFITS = (
    "easy assembly", "space saving design", "stain resistant finish",
    "simple cleaning", "extra storage", "ergonomic support",
    "lightweight build", "durable construction", "adjustable height",
    "foldable design", "scratch resistant coating", "low upkeep",
)

AUDIENCES = (
    "family", "student", "professional", "couple", "senior", "gamer",
    "artist", "collector", "traveler", "renter",
)

PRICE_MIN = 9.99
PRICE_MAX = 1999.00

ID_DIGITS = 8
_ID_FIELD_RE = re.compile(r"^[0-9]{8}$")


class InvalidArguments(ValueError):
    """Catalog generation called with arguments violating its preconditions."""


class CatalogFormatError(ValueError):
    """Catalog file is malformed or has an unsupported format version."""


@dataclass(frozen=True)
class Product:
    """One catalog item. ``product_id`` is the bare 8-digit string; use
    :func:`id_text` for the "ART-XXXXXXXX" surface form used in text."""

    product_id: str
    series_name: str
    category: str
    price: float
    materials: tuple[str, ...]
    colors: tuple[str, ...]
    width: int
    depth: int
    height: int
    description: str
    benefits: tuple[str, ...]
    audiences: tuple[str, ...]

    def validate(self) -> None:
        if not _ID_FIELD_RE.match(self.product_id):
            raise InvalidArguments(f"bad product_id {self.product_id!r}")
        if self.price <= 0:
            raise InvalidArguments("price must be positive")
        if min(self.width, self.depth, self.height) <= 0:
            raise InvalidArguments("dimensions must be positive")
        if not (self.materials and self.colors and self.benefits and self.audiences):
            raise InvalidArguments("attribute lists must be non-empty")


def id_text(product_id: str) -> str:
    """Render a bare 8-digit product id in its textual "ART-" form."""
    return "ART-" + product_id


def parse_id(text: str) -> str | None:
    """Canonicalize an id given as bare digits or "ART-XXXXXXXX" (any case).

    Returns the bare 8-digit string, or None when the input is malformed.
    """
    s = text.strip()
    if s[:4].upper() == "ART-":
        s = s[4:]
    return s if _ID_FIELD_RE.match(s) else None


@dataclass(frozen=True)
class Catalog:
    categories: tuple[str, ...]
    products: tuple[Product, ...]
    seed: int
    _by_id: dict[str, Product] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_id = {p.product_id: p for p in self.products}
        if len(by_id) != len(self.products):
            raise InvalidArguments("duplicate product ids in catalog")
        cats = set(self.categories)
        for p in self.products:
            if p.category not in cats:
                raise InvalidArguments(f"product {p.product_id} has unknown category")
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.products)


def product_lookup(catalog: Catalog, product_id: str) -> Product | None:
    """Return the product for an id, or None. Malformed ids (wrong length,
    non-digits) are NotFound, never an error: unknown ids feed hallucination
    accounting downstream."""
    pid = parse_id(product_id)
    if pid is None:
        return None
    return catalog._by_id.get(pid)


def _draw_price(rng: np.random.Generator) -> float:
    # Log-uniform over the price range, snapped to a .99 ending.
    u = rng.uniform(math.log(PRICE_MIN), math.log(PRICE_MAX))
    dollars = int(round(math.exp(u)))
    return round(max(dollars, 10) - 0.01, 2)


def _sample(rng: np.random.Generator, pool, k: int) -> tuple[str, ...]:
    idx = rng.choice(len(pool), size=k, replace=False)
    return tuple(pool[i] for i in idx)


def generate_catalog(seed: int, n_products: int, n_categories: int) -> Catalog:
    """Generate a deterministic synthetic catalog.

    Categories are assigned round-robin, so per-category counts differ by at
    most one. Within a category, series names are drawn without replacement,
    which makes (series_name, category) unique per product; the query
    generator relies on that pair to keep query texts distinct across
    products.
    """
    if n_products < 1 or n_categories < 1:
        raise InvalidArguments("n_products and n_categories must be positive")
    if n_categories > n_products:
        raise InvalidArguments("n_categories cannot exceed n_products")
    if n_categories > len(CATEGORIES):
        raise InvalidArguments(
            f"n_categories exceeds category lexicon size {len(CATEGORIES)}")
    per_cat = -(-n_products // n_categories)
    if per_cat > len(SERIES_NAMES):
        raise InvalidArguments(
            f"{per_cat} products per category exceeds series lexicon size "
            f"{len(SERIES_NAMES)}")

    rng = np.random.Generator(np.random.PCG64(hash64(seed, "catalog")))

    cat_idx = rng.choice(len(CATEGORIES), size=n_categories, replace=False)
    categories = tuple(CATEGORIES[i] for i in cat_idx)

    # One shuffled copy of the series lexicon per category; consumed in
    # round-robin order so every (series, category) pair is unique.
    series_pools = []
    for c in range(n_categories):
        perm = rng.permutation(len(SERIES_NAMES))
        series_pools.append([SERIES_NAMES[i] for i in perm])

    ids: list[str] = []
    seen: set[int] = set()
    while len(ids) < n_products:
        v = int(rng.integers(0, 10**ID_DIGITS))
        if v not in seen:
            seen.add(v)
            ids.append(f"{v:08d}")

    products = []
    for i in range(n_products):
        category = categories[i % n_categories]
        series = series_pools[i % n_categories][i // n_categories]
        price = _draw_price(rng)
        materials = _sample(rng, MATERIALS, int(rng.integers(1, 4)))
        colors = _sample(rng, COLORS, int(rng.integers(1, 4)))
        width = int(rng.integers(30, 241))
        depth = int(rng.integers(20, 121))
        height = int(rng.integers(10, 221))
        benefits = _sample(rng, BENEFITS, int(rng.integers(1, 4)))
        audiences = _sample(rng, AUDIENCES, int(rng.integers(1, 4)))
        description = (
            f"the {series} is a {colors[0]} {materials[0]} {category}, "
            f"{width} by {depth} by {height} cm, priced at ${price:.2f}."
        )
        product = Product(
            product_id=ids[i],
            series_name=series,
            category=category,
            price=price,
            materials=materials,
            colors=colors,
            width=width,
            depth=depth,
            height=height,
            description=description,
            benefits=benefits,
            audiences=audiences,
        )
        product.validate()
        products.append(product)

    return Catalog(categories=categories, products=tuple(products), seed=seed)


def _product_record(p: Product) -> dict:
    return {
        "product_id": p.product_id,
        "series_name": p.series_name,
        "category": p.category,
        "price": p.price,
        "materials": list(p.materials),
        "colors": list(p.colors),
        "dimensions": {"width": p.width, "depth": p.depth, "height": p.height},
        "description": p.description,
        "benefits": list(p.benefits),
        "audiences": list(p.audiences),
    }


def save_catalog(catalog: Catalog, path: str | Path,
                 extra_header: dict | None = None) -> None:
    """Write a catalog as JSON Lines: one header record, then one product
    per line. ``extra_header`` lets callers stamp e.g. a config checksum."""
    header = {
        "format_version": CATALOG_FORMAT_VERSION,
        "seed": catalog.seed,
        "categories": list(catalog.categories),
    }
    if extra_header:
        header.update(extra_header)
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(json.dumps(_product_record(p), sort_keys=True)
                 for p in catalog.products)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_catalog(path: str | Path) -> Catalog:
    raw = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in raw.splitlines() if ln.strip()]
    if not lines:
        raise CatalogFormatError("empty catalog file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise CatalogFormatError(f"bad catalog header: {e}") from e
    if not isinstance(header, dict):
        raise CatalogFormatError("catalog header is not an object")
    if header.get("format_version") != CATALOG_FORMAT_VERSION:
        raise CatalogFormatError(
            f"unsupported catalog format_version {header.get('format_version')!r}")
    products = []
    try:
        for ln in lines[1:]:
            rec = json.loads(ln)
            dims = rec["dimensions"]
            products.append(Product(
                product_id=rec["product_id"],
                series_name=rec["series_name"],
                category=rec["category"],
                price=float(rec["price"]),
                materials=tuple(rec["materials"]),
                colors=tuple(rec["colors"]),
                width=int(dims["width"]),
                depth=int(dims["depth"]),
                height=int(dims["height"]),
                description=rec["description"],
                benefits=tuple(rec["benefits"]),
                audiences=tuple(rec["audiences"]),
            ))
        return Catalog(categories=tuple(header["categories"]),
                       products=tuple(products), seed=int(header["seed"]))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        if isinstance(e, CatalogFormatError):
            raise
        raise CatalogFormatError(f"malformed catalog record: {e}") from e
