"""Product-knowledge language modeling at desk scale.

A synthetic furniture catalog, five families of seeded customer queries per
product, a from-scratch numpy transformer fine-tuned on query/response
pairs, and two ways of spelling product ids: dedicated vocabulary tokens
(id_mode) versus plain text fragments (baseline). The package measures what
the id tokens buy: exact-id recommendation accuracy and the structural
impossibility of hallucinated ids.
"""

from .catalog import (AUDIENCES, BENEFITS, CATEGORIES, COLORS, MATERIALS,
                      SERIES_NAMES, Catalog, CatalogFormatError,
                      InvalidArguments, Product, generate_catalog, id_text,
                      load_catalog, parse_id, product_lookup, save_catalog)
from .checkpoint import (CheckpointError, load_checkpoint, save_checkpoint,
                         stored_checksum)
from .datagen import (DatasetFormatError, DatasetSplit, MismatchedProduct,
                      QueryRecord, QueryType, TrainingExample, build_dataset,
                      corpus_texts, generate_queries, generate_sales_response,
                      load_dataset, save_dataset, unwrap_prompt, wrap_query)
from .decoding import (BEAM_MAX_NEW, NoRecommendation, PromptTooLong,
                       Recommendation, extract_product_ids, generate,
                       recommend_topk)
from .evaluation import (FULL_SCALE_REFERENCE, JUDGE_PARAMS, CatalogMismatch,
                         Comparison, ExampleDetail, IncomparableRuns,
                         JudgeVerdict, QualReport, QuantReport,
                         ReportFormatError, ReportInvariantViolation,
                         aggregate_verdicts,
                         build_quant_report, compare_runs,
                         evaluate_qualitative, evaluate_quantitative,
                         judge_response, load_report, render_comparison,
                         render_qual_table, render_quant_table, save_report,
                         score_recommendations)
from .hashing import file_checksum, fnv1a64, hash64
from .model import (AllMasked, IndexOutOfRange, InvalidConfig, LengthMismatch,
                    ModelConfig, Parameters, SequenceTooLong, backward,
                    expand_embeddings, forward, grad_check, init_params,
                    loss_and_grads, max_rel_error, numeric_grads, param_names,
                    sft_loss)
from .tokenizer import (BOS, EOS, PAD, UNK, AlreadyExpanded, EmptyCorpus,
                        Vocab, VocabFormatError, build_base_vocab,
                        decode_tokens, encode, expand_with_product_ids,
                        load_vocab, normalize, save_vocab)
from .training import (Hyperparams, InvalidHyperparameters, TrainLog,
                       TrainRecord, encode_example, schedule_lr, train_sft)

__version__ = "0.1.0"
