"""Build a synthetic product catalog and its query/response dataset.

Everything downstream hangs off these two artifacts. Both are pure
functions of a seed, so rerunning this script prints identical output.

    python3 demos/01_catalog_and_data.py
"""

from prodlm.catalog import generate_catalog, id_text
from prodlm.datagen import QueryType, build_dataset, unwrap_prompt

catalog = generate_catalog(seed=42, n_products=8, n_categories=3)

print(f"catalog: {len(catalog)} products across "
      f"{len(catalog.categories)} categories\n")
for p in catalog.products[:3]:
    print(f"  {id_text(p.product_id)}  {p.series_name} {p.category}")
    print(f"    ${p.price:.2f}, {', '.join(p.materials)}; "
          f"{', '.join(p.colors)}")
    print(f"    {p.width:.1f} x {p.depth:.1f} x {p.height:.1f} cm")
    print(f"    {p.description}\n")

# five query styles per product: 3 train / 1 val / 1 test
dataset = build_dataset(catalog, seed=42)
print(f"dataset: {len(dataset.train)} train / {len(dataset.val)} val / "
      f"{len(dataset.test)} test examples\n")

product = catalog.products[0]
shown = set()
print("one query of each type for the first product:")
for ex in dataset.examples():
    if ex.target_product_id != product.product_id:
        continue
    if ex.query_type in shown:
        continue
    shown.add(ex.query_type)
    print(f"  [{QueryType(ex.query_type).name}] {unwrap_prompt(ex.prompt)}")

print("\none ground-truth sales response (id, series, category, price and "
      "an attribute are always stated):\n")
example = next(ex for ex in dataset.train
               if ex.target_product_id == product.product_id)
print(" ", example.response)
