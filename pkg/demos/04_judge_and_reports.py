"""Deterministic judge and the two report formats.

The judge greps a response for the six graded parameters against the
catalog record of the id it claims. No model in the loop, so verdicts are
reproducible and the perturbation behavior is exactly testable.

    python3 demos/04_judge_and_reports.py
"""

from prodlm.catalog import generate_catalog
from prodlm.datagen import build_dataset
from prodlm.evaluation import (
    aggregate_verdicts, build_quant_report, compare_runs, judge_response,
    render_comparison, render_qual_table, render_quant_table,
    score_recommendations,
)

catalog = generate_catalog(seed=42, n_products=8, n_categories=3)
dataset = build_dataset(catalog, seed=42)
example = dataset.train[0]
product = next(p for p in catalog.products
               if p.product_id == example.target_product_id)

verdict = judge_response(example.response, example.target_product_id, catalog)
print("ground-truth response judged against its own product:")
for name, value in verdict.as_dict().items():
    print(f"  {name:<24} {value}")

# corrupt the price and watch exactly two flags react
wrong = example.response.replace(f"${product.price:.2f}",
                                 f"${product.price + 1:.2f}")
verdict = judge_response(wrong, example.target_product_id, catalog)
print("\nsame response with the price off by $1.00:")
print(f"  correct_price           {verdict.correct_price}")
print(f"  added_new_information   {verdict.added_new_information}"
      f"   (the wrong price is a new claim)")

# quantitative side: score ranked id lists against gold ids
pids = [p.product_id for p in catalog.products]
details = [
    score_recommendations(catalog, pids[0], [pids[0], pids[1]], query="q1"),
    score_recommendations(catalog, pids[1], [pids[2], pids[1]], query="q2"),
    score_recommendations(catalog, pids[2], ["ART-00000000"], query="q3"),
]
report = build_quant_report(catalog, details, k=2, catalog_checksum=1)
print()
print(render_quant_table(report, title="toy run A"))

better = build_quant_report(catalog, [
    score_recommendations(catalog, pid, [pid]) for pid in pids[:3]
], k=2, catalog_checksum=1)
print()
print(render_comparison(compare_runs(better, report,
                                     label_a="perfect", label_b="toy A")))

qual = aggregate_verdicts(
    judge_response(ex.response, ex.target_product_id, catalog)
    for ex in dataset.examples())
print()
print(render_qual_table(qual, title=f"judge over "
                        f"{qual.n_examples} ground-truth responses"))
print(f"\nthe made-up id 'ART-00000000' in q3 is why toy run A shows "
      f"hallucination rate {report.hallucination_rate:.3f}")
