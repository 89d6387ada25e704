"""Recommendation metrics, a deterministic factual judge, and reports.

Quantitative side: Top-1/Top-5 Match (gold product id in the top ranks),
their category variants (category of the recommended product vs the gold
product's), and the hallucination rate (share of recommended ids that are
not in the catalog). Exact id match implies category match by definition,
which gives the report its ordering invariants.

Qualitative side: a lexicon-grounded judge. The response generator and the
judge share attribute lexicons, so series/price/material/color/category
claims in a response are decidable by extraction, no human or model grader
involved. Six booleans per response, aggregated to percent-true. Judge
semantics: series, category and price use the first mention; material and
color require at least one mention and every mentioned value to be on the
product record; added_new_information fires when any mentioned lexicon
value (price, material, color, series, dimension) is foreign to the record.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import (CATEGORIES, COLORS, MATERIALS, SERIES_NAMES, Catalog,
                      id_text, parse_id, product_lookup)
from .decoding import (BEAM_MAX_NEW, NoRecommendation, Recommendation,
                       generate, recommend_topk)
from .model import InvalidArguments, Parameters
from .tokenizer import Vocab, normalize

REPORT_FORMAT_VERSION = 1

JUDGE_PARAMS = ("correct_series_name", "correct_price", "relevancy",
                "added_new_information", "correct_material", "correct_color")

METRIC_NAMES = ("top1_match", "top5_match", "top1_category_match",
                "top5_category_match", "hallucination_rate")

# Full-scale reference results (7B model on a production catalog), shown in
# rendered reports as context for desk-scale numbers. Matches are fractions,
# judge values percentages.
FULL_SCALE_REFERENCE = {
    "with_id_tokens": {"top1_match": 0.287, "top5_match": 0.463,
                       "top1_category_match": 0.913,
                       "top5_category_match": 0.971},
    "without_id_tokens": {"top1_match": 0.227, "top5_match": 0.444,
                          "top1_category_match": 0.875,
                          "top5_category_match": 0.966},
    "judge": {"relevancy": 91.78, "added_new_information": 93.9,
              "correct_series_name": 44.4, "correct_price": 43.6,
              "correct_material": 77.3, "correct_color": 74.0},
}


class CatalogMismatch(ValueError):
    pass


class IncomparableRuns(ValueError):
    pass


class ReportInvariantViolation(ValueError):
    pass


class ReportFormatError(ValueError):
    """Report file or dict is structurally unreadable. Distinct from
    ReportInvariantViolation, which means the numbers themselves are
    inconsistent."""


def _alternation(words) -> str:
    return "|".join(sorted(words, key=len, reverse=True))


_SERIES_RE = re.compile(r"\b(" + _alternation(SERIES_NAMES) + r")\b")
_CATEGORY_RE = re.compile(r"\b(" + _alternation(CATEGORIES) + r")\b")
_MATERIAL_RE = re.compile(r"\b(" + _alternation(MATERIALS) + r")\b")
_COLOR_RE = re.compile(r"\b(" + _alternation(COLORS) + r")\b")
_PRICE_RE = re.compile(r"\$(\d+(?:\.\d{2})?)")
_DIM_RE = re.compile(r"\b(\d+(?: by \d+)*) ?cm\b")

PRICE_TOL = 0.005


@dataclass(frozen=True)
class JudgeVerdict:
    correct_series_name: bool
    correct_price: bool
    relevancy: bool
    added_new_information: bool
    correct_material: bool
    correct_color: bool

    def as_dict(self) -> dict[str, bool]:
        return {name: getattr(self, name) for name in JUDGE_PARAMS}


_ALL_FALSE = JudgeVerdict(False, False, False, False, False, False)


def judge_response(response_text: str, claimed_id: str | None,
                   catalog: Catalog) -> JudgeVerdict:
    """Grade a sales response against the catalog record of claimed_id.
    Unknown or missing claimed_id gives the all-false verdict."""
    pid = parse_id(claimed_id) if claimed_id else None
    product = product_lookup(catalog, pid) if pid else None
    if product is None:
        return _ALL_FALSE
    text = normalize(response_text).lower()

    series_hits = _SERIES_RE.findall(text)
    series_ok = bool(series_hits) and series_hits[0] == product.series_name

    prices = [float(m) for m in _PRICE_RE.findall(text)]
    price_ok = bool(prices) and abs(prices[0] - product.price) <= PRICE_TOL

    cat_hits = _CATEGORY_RE.findall(text)
    relevancy = bool(cat_hits) and cat_hits[0] == product.category

    materials = set(_MATERIAL_RE.findall(text))
    material_ok = bool(materials) and materials <= set(product.materials)

    colors = set(_COLOR_RE.findall(text))
    color_ok = bool(colors) and colors <= set(product.colors)

    own_dims = {product.width, product.depth, product.height}
    foreign_dim = any(
        any(int(n) not in own_dims for n in m.split(" by "))
        for m in _DIM_RE.findall(text))
    added_new = (any(h != product.series_name for h in series_hits)
                 or any(abs(p - product.price) > PRICE_TOL for p in prices)
                 or bool(materials - set(product.materials))
                 or bool(colors - set(product.colors))
                 or foreign_dim)

    return JudgeVerdict(series_ok, price_ok, relevancy, added_new,
                        material_ok, color_ok)


@dataclass(frozen=True)
class ExampleDetail:
    """Audit row for one evaluated query."""

    query: str
    gold_id: str  # "ART-XXXXXXXX"
    returned_ids: tuple[str, ...]  # ranked, "ART-XXXXXXXX"
    hallucinated: tuple[bool, ...]  # parallel to returned_ids
    top1_match: bool
    top5_match: bool
    top1_category_match: bool
    top5_category_match: bool

    def as_dict(self) -> dict:
        return {"query": self.query, "gold_id": self.gold_id,
                "returned_ids": list(self.returned_ids),
                "hallucinated": list(self.hallucinated),
                "flags": {"top1_match": self.top1_match,
                          "top5_match": self.top5_match,
                          "top1_category_match": self.top1_category_match,
                          "top5_category_match": self.top5_category_match}}


def score_recommendations(catalog: Catalog, gold_pid: str,
                          rec_ids, query: str = "") -> ExampleDetail:
    """Match flags for one ranked id list (any surface form) against the
    gold product. Hallucinated ids never match any category."""
    gold = product_lookup(catalog, gold_pid)
    if gold is None:
        raise CatalogMismatch(f"gold id {gold_pid!r} not in catalog")
    pids = [parse_id(r) for r in rec_ids]
    products = [product_lookup(catalog, p) if p else None for p in pids]
    hall = tuple(p is None for p in products)
    exact = [p == gold.product_id for p in pids]
    cats = [pr.category == gold.category if pr else False for pr in products]
    return ExampleDetail(
        query=query, gold_id=id_text(gold.product_id),
        returned_ids=tuple(id_text(p) if p else str(r)
                           for p, r in zip(pids, rec_ids)),
        hallucinated=hall,
        top1_match=bool(exact[:1] and exact[0]),
        top5_match=any(exact),
        top1_category_match=bool(cats[:1] and cats[0]),
        top5_category_match=any(cats))


@dataclass(frozen=True)
class QuantReport:
    top1_match: float
    top5_match: float
    top1_category_match: float
    top5_category_match: float
    hallucination_rate: float
    n_examples: int
    k: int
    catalog_checksum: int
    details: tuple[ExampleDetail, ...] = field(repr=False, default=())

    def validate(self) -> None:
        for name in METRIC_NAMES:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ReportInvariantViolation(f"{name}={v} outside [0,1]")
        pairs = (("top1_match", "top5_match"),
                 ("top1_match", "top1_category_match"),
                 ("top5_match", "top5_category_match"),
                 ("top1_category_match", "top5_category_match"))
        for lo, hi in pairs:
            if getattr(self, lo) > getattr(self, hi) + 1e-12:
                raise ReportInvariantViolation(f"{lo} exceeds {hi}")
        if self.n_examples < 0 or self.k < 1:
            raise ReportInvariantViolation("bad n_examples or k")
        if self.details and len(self.details) != self.n_examples:
            raise ReportInvariantViolation("detail rows do not match count")

    def metrics(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def build_quant_report(catalog: Catalog, details, k: int,
                       catalog_checksum: int) -> QuantReport:
    """Aggregate per-example details into a QuantReport; order-independent."""
    details = tuple(details)
    if not details:
        raise InvalidArguments("no examples to aggregate")
    n = len(details)
    total_recs = sum(len(d.returned_ids) for d in details)
    n_hall = sum(sum(d.hallucinated) for d in details)
    report = QuantReport(
        top1_match=sum(d.top1_match for d in details) / n,
        top5_match=sum(d.top5_match for d in details) / n,
        top1_category_match=sum(d.top1_category_match for d in details) / n,
        top5_category_match=sum(d.top5_category_match for d in details) / n,
        hallucination_rate=(n_hall / total_recs) if total_recs else 0.0,
        n_examples=n, k=k, catalog_checksum=catalog_checksum,
        details=details)
    report.validate()
    return report


def _check_bundle(vocab: Vocab, catalog: Catalog, examples) -> None:
    if not examples:
        raise InvalidArguments("test set is empty")
    catalog_ids = {p.product_id for p in catalog.products}
    if vocab.id_mode and set(vocab.id_block) != catalog_ids:
        raise CatalogMismatch("vocab id block does not cover this catalog")
    missing = {ex.target_product_id for ex in examples} - catalog_ids
    if missing:
        raise CatalogMismatch(f"examples target unknown ids {sorted(missing)}")


def evaluate_quantitative(params: Parameters, vocab: Vocab, catalog: Catalog,
                          examples, k: int = 5, catalog_checksum: int = 0,
                          max_new: int = BEAM_MAX_NEW) -> QuantReport:
    """Run recommend_topk for every example and aggregate match metrics.
    A query where no beam yields an id scores zero across the board."""
    _check_bundle(vocab, catalog, examples)
    details = []
    from .datagen import unwrap_prompt
    for ex in examples:
        query = unwrap_prompt(ex.prompt)
        try:
            recs = recommend_topk(params, params.config, vocab, catalog,
                                  query, k, max_new=max_new)
            rec_ids = [r.product_id for r in recs]
        except NoRecommendation:
            rec_ids = []
        details.append(score_recommendations(
            catalog, ex.target_product_id, rec_ids, query=query))
    return build_quant_report(catalog, details, k, catalog_checksum)


@dataclass(frozen=True)
class QualReport:
    percentages: dict[str, float]  # judge parameter -> percent true
    n_examples: int

    def validate(self) -> None:
        if set(self.percentages) != set(JUDGE_PARAMS):
            raise ReportInvariantViolation("wrong judge parameter set")
        for name, v in self.percentages.items():
            if not (0.0 <= v <= 100.0):
                raise ReportInvariantViolation(f"{name}={v} outside [0,100]")
        if self.n_examples < 0:
            raise ReportInvariantViolation("negative n_examples")


def aggregate_verdicts(verdicts) -> QualReport:
    verdicts = list(verdicts)
    if not verdicts:
        raise InvalidArguments("no verdicts to aggregate")
    n = len(verdicts)
    pct = {name: 100.0 * sum(getattr(v, name) for v in verdicts) / n
           for name in JUDGE_PARAMS}
    report = QualReport(percentages=pct, n_examples=n)
    report.validate()
    return report


def evaluate_qualitative(params: Parameters, vocab: Vocab, catalog: Catalog,
                         examples,
                         max_new: int = BEAM_MAX_NEW) -> QualReport:
    """Greedy-generate a response per query and judge it against the rank-1
    recommended id for that query. Queries with no recommendation at all
    are judged with a missing id, i.e. all-false."""
    _check_bundle(vocab, catalog, examples)
    from .datagen import unwrap_prompt
    verdicts = []
    for ex in examples:
        query = unwrap_prompt(ex.prompt)
        text, _ = generate(params, params.config, vocab, ex.prompt, max_new)
        try:
            recs = recommend_topk(params, params.config, vocab, catalog,
                                  query, 1, max_new=max_new)
            claimed = recs[0].product_id
        except NoRecommendation:
            claimed = None
        verdicts.append(judge_response(text, claimed, catalog))
    return aggregate_verdicts(verdicts)


@dataclass(frozen=True)
class Comparison:
    label_a: str
    label_b: str
    n_examples: int
    rows: tuple[tuple[str, float, float, float], ...]  # name, a, b, a-b


def compare_runs(report_a: QuantReport, report_b: QuantReport,
                 label_a: str = "run A", label_b: str = "run B") -> Comparison:
    """Side-by-side metric deltas (a minus b); refuses to compare runs over
    different catalogs or test sets."""
    if report_a.catalog_checksum != report_b.catalog_checksum:
        raise IncomparableRuns("reports built over different catalogs")
    if report_a.n_examples != report_b.n_examples:
        raise IncomparableRuns("reports cover different test set sizes")
    if report_a.k != report_b.k:
        raise IncomparableRuns("reports use different k")
    rows = tuple((name, getattr(report_a, name), getattr(report_b, name),
                  getattr(report_a, name) - getattr(report_b, name))
                 for name in METRIC_NAMES)
    return Comparison(label_a, label_b, report_a.n_examples, rows)


# ---------------------------------------------------------------- report IO

def quant_report_to_dict(report: QuantReport) -> dict:
    return {"format_version": REPORT_FORMAT_VERSION, "kind": "quant",
            "metrics": report.metrics(), "n_examples": report.n_examples,
            "k": report.k, "catalog_checksum": report.catalog_checksum,
            "details": [d.as_dict() for d in report.details]}


def quant_report_from_dict(d: dict) -> QuantReport:
    if d.get("format_version") != REPORT_FORMAT_VERSION or d.get("kind") != "quant":
        raise ReportFormatError("not a quantitative report")
    try:
        details = tuple(ExampleDetail(
            query=row["query"], gold_id=row["gold_id"],
            returned_ids=tuple(row["returned_ids"]),
            hallucinated=tuple(row["hallucinated"]),
            **row["flags"]) for row in d.get("details", []))
        return QuantReport(n_examples=d["n_examples"], k=d["k"],
                           catalog_checksum=d["catalog_checksum"],
                           details=details, **d["metrics"])
    except (KeyError, TypeError) as e:
        raise ReportFormatError(f"malformed quantitative report: {e}")


def qual_report_to_dict(report: QualReport) -> dict:
    return {"format_version": REPORT_FORMAT_VERSION, "kind": "qual",
            "percentages": dict(report.percentages),
            "n_examples": report.n_examples}


def qual_report_from_dict(d: dict) -> QualReport:
    if d.get("format_version") != REPORT_FORMAT_VERSION or d.get("kind") != "qual":
        raise ReportFormatError("not a qualitative report")
    try:
        return QualReport(percentages=dict(d["percentages"]),
                          n_examples=d["n_examples"])
    except (KeyError, TypeError) as e:
        raise ReportFormatError(f"malformed qualitative report: {e}")


def save_report(report, path: str | Path, extra: dict | None = None) -> None:
    d = (quant_report_to_dict(report) if isinstance(report, QuantReport)
         else qual_report_to_dict(report))
    if extra:
        d.update(extra)
    Path(path).write_text(json.dumps(d, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")


def load_report(path: str | Path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ReportFormatError(f"unreadable report file {path}: {e}")
    if not isinstance(d, dict):
        raise ReportFormatError("report file does not hold an object")
    if d.get("kind") == "quant":
        return quant_report_from_dict(d)
    if d.get("kind") == "qual":
        return qual_report_from_dict(d)
    raise ReportFormatError("unknown report kind")


def save_details_jsonl(report: QuantReport, path: str | Path) -> None:
    lines = [json.dumps(d.as_dict(), sort_keys=True) for d in report.details]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_METRIC_LABELS = {"top1_match": "Top-1 Match", "top5_match": "Top-5 Match",
                  "top1_category_match": "Top-1 Category Match",
                  "top5_category_match": "Top-5 Category Match",
                  "hallucination_rate": "Hallucination Rate"}

_JUDGE_LABELS = {"correct_series_name": "Correct Series Name",
                 "correct_price": "Correct Price", "relevancy": "Relevancy",
                 "added_new_information": "Added New Information",
                 "correct_material": "Correct Material",
                 "correct_color": "Correct Color"}


def render_quant_table(report: QuantReport, title: str = "quantitative",
                       reference: dict | None = None) -> str:
    lines = [f"== {title} (n={report.n_examples}, k={report.k}) ==",
             f"{'metric':<24}{'value':>10}" +
             ("  full-scale ref" if reference else "")]
    for name in METRIC_NAMES:
        row = f"{_METRIC_LABELS[name]:<24}{getattr(report, name):>10.4f}"
        if reference and name in reference:
            row += f"  {reference[name]:>14.3f}"
        lines.append(row)
    return "\n".join(lines)


def render_qual_table(report: QualReport, title: str = "qualitative",
                      reference: dict | None = None) -> str:
    lines = [f"== {title} (n={report.n_examples}) ==",
             f"{'parameter':<26}{'% true':>10}" +
             ("  full-scale ref" if reference else "")]
    for name in JUDGE_PARAMS:
        row = f"{_JUDGE_LABELS[name]:<26}{report.percentages[name]:>10.2f}"
        if reference and name in reference:
            row += f"  {reference[name]:>13.2f}%"
        lines.append(row)
    return "\n".join(lines)


def render_comparison(cmp: Comparison) -> str:
    lines = [f"== comparison (n={cmp.n_examples}) ==",
             f"{'metric':<24}{cmp.label_a:>12}{cmp.label_b:>12}{'delta':>10}"]
    for name, a, b, delta in cmp.rows:
        lines.append(f"{_METRIC_LABELS[name]:<24}{a:>12.4f}{b:>12.4f}"
                     f"{delta:>+10.4f}")
    return "\n".join(lines)
