"""Command-line entry point wiring the pipeline stages together.

Settings resolve as flags > environment variables > ``--config`` file.
Stages are idempotent: the same inputs produce byte-identical outputs.
"""

from __future__ import annotations

import functools
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import config as cfg
from .candidates import METHODS, generate_candidates, read_slates, write_slates
from .embeddings import EmbeddingStore, embed_texts, serialize_edge, serialize_mention
from .errors import OntoplaceError
from .evaluation import (
    BenchmarkConfig,
    load_dataset,
    run_benchmark,
)
from .lexical import (
    Tokenizer,
    build_index,
    load_index,
    load_vocabulary,
    save_index,
    search_concepts_lexical,
)
from .ontology import Ontology, enumerate_edge_space, export_ontology, load_ontology
from .providers import (
    CompletionClient,
    EmbeddingClient,
    EmbeddingProviderEndpoint,
    LlmEndpoint,
    ScorerClient,
    SelectionScorerEndpoint,
)
from .selection import (
    build_cross_rows,
    emit_instruction_tuning_corpus,
    select_llm,
    select_scored,
    write_tuning_corpus,
)

CONCEPT_FILE = "concepts.jsonl"
SUBSUMPTION_FILE = "subsumptions.tsv"


def _wrap_errors(func):
    @functools.wraps(func)
    def inner(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (OntoplaceError, ValueError, OSError) as exc:
            raise click.ClickException(str(exc)) from exc

    return inner


def read_ontology_dir(path: str) -> Ontology:
    base = Path(path)
    concepts = base / CONCEPT_FILE
    subsumptions = base / SUBSUMPTION_FILE
    for required in (concepts, subsumptions):
        if not required.exists():
            raise click.ClickException(f"missing ontology file {required}")
    with open(concepts, encoding="utf-8") as ch, open(subsumptions, encoding="utf-8") as sh:
        return load_ontology(ch, sh)


def write_ontology_dir(onto: Ontology, path: str):
    base = Path(path)
    base.mkdir(parents=True, exist_ok=True)
    concept_text, pair_text = export_ontology(onto)
    (base / CONCEPT_FILE).write_text(concept_text, encoding="utf-8")
    (base / SUBSUMPTION_FILE).write_text(pair_text, encoding="utf-8")


def _tokenizer_from_vocab(vocab_path: str | None) -> Tokenizer:
    if vocab_path:
        with open(vocab_path, encoding="utf-8") as handle:
            return Tokenizer(vocabulary=load_vocabulary(handle), mode="greedy")
    return Tokenizer()


def _seeded_stub(url: str | None, seed: int) -> str | None:
    # Thread --seed into stub locators that do not pin one themselves.
    if url and url.startswith("stub://") and "seed=" not in url:
        sep = "&" if "?" in url else "?"
        return f"{url}{sep}seed={seed}"
    return url


def _load_mentions(path: str, onto: Ontology, require_gold: bool):
    with open(path, encoding="utf-8") as handle:
        return load_dataset(handle, onto, require_gold=require_gold)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Flat key=value settings file (lowest precedence).")
@click.pass_context
def main(ctx, config_path):
    """Ontology concept placement pipeline."""
    ctx.ensure_object(dict)
    ctx.obj["file_values"] = cfg.load_config_file(config_path) if config_path else {}


def _resolved(ctx, flag_value, env_var, key):
    return cfg.resolve(flag_value, env_var, ctx.obj.get("file_values", {}), key)


@main.command()
@click.option("--concepts", "concepts_path", required=True, type=click.Path(exists=True))
@click.option("--subsumptions", "subsumptions_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@_wrap_errors
def ingest(concepts_path, subsumptions_path, dataset_path, out_dir):
    """Validate raw exports and write the canonical ontology directory."""
    with open(concepts_path, encoding="utf-8") as ch, open(
        subsumptions_path, encoding="utf-8"
    ) as sh:
        onto = load_ontology(ch, sh)
    edge_space = sum(1 for _ in enumerate_edge_space(onto))
    write_ontology_dir(onto, out_dir)
    click.echo(
        f"concepts={onto.concept_count} complex={onto.complex_count} "
        f"subsumptions={onto.subsumption_count} edge_space={edge_space}"
    )
    if dataset_path:
        dataset = _load_mentions(dataset_path, onto, require_gold=True)
        click.echo(f"mentions={len(dataset)} gold_pairs={dataset.gold_pair_count}")


@main.command()
@click.option("--ontology", "ontology_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@_wrap_errors
def export(ontology_dir, out_dir):
    """Re-export the ontology in canonical sorted form."""
    onto = read_ontology_dir(ontology_dir)
    write_ontology_dir(onto, out_dir)
    click.echo(f"exported {onto.concept_count} concepts to {out_dir}")


@main.group()
def index():
    """Build and query the lexical inverted index."""


@index.command("build")
@click.option("--concepts", "concepts_path", required=True, type=click.Path(exists=True))
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@_wrap_errors
def index_build(concepts_path, vocab_path, out_path):
    from .ontology import parse_concept_line

    tok = _tokenizer_from_vocab(vocab_path)
    concepts = []
    with open(concepts_path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if line.strip():
                concepts.append(parse_concept_line(line, line_no))
    idx = build_index(concepts, tok)
    save_index(idx, out_path)
    click.echo(f"indexed {idx.corpus_size} concepts, {len(idx.postings)} tokens")


@index.command("query")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--mention", required=True)
@click.option("--top", "top_n", default=10, show_default=True)
@_wrap_errors
def index_query(index_path, mention, top_n):
    idx = load_index(index_path)
    for concept_id, score in search_concepts_lexical(idx, idx.tokenizer, mention, top_n):
        click.echo(f"{concept_id}\t{score:.6f}")


@main.command("embed-cache")
@click.option("--ontology", "ontology_dir", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), default=None)
@click.option("--endpoint", "embed_url", default=None)
@click.option("--what", default="concepts", show_default=True,
              type=click.Choice(["concepts", "edges", "mentions"]))
@click.option("--out", "store_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--parallelism", default=1, show_default=True)
@click.pass_context
@_wrap_errors
def embed_cache(ctx, ontology_dir, dataset_path, embed_url, what, store_path, seed, parallelism):
    """Precompute and cache embeddings for concepts, edges, or mentions."""
    url = _resolved(ctx, embed_url, cfg.ENV_EMBED_URL, "embed_url")
    if not url:
        raise click.ClickException("no embedding endpoint configured")
    client = EmbeddingClient(EmbeddingProviderEndpoint(locator=_seeded_stub(url, seed)))
    onto = read_ontology_dir(ontology_dir)
    if what == "concepts":
        texts = sorted({onto.label(cid) for cid in onto.concepts})
    elif what == "edges":
        texts = sorted({serialize_edge(onto, e) for e in enumerate_edge_space(onto)})
    else:
        if not dataset_path:
            raise click.ClickException("--what mentions requires --dataset")
        dataset = _load_mentions(dataset_path, onto, require_gold=False)
        texts = sorted(
            {serialize_mention(m) for m in dataset.mentions}
            | {m.mention for m in dataset.mentions}
        )
    store = EmbeddingStore.load(store_path) if Path(store_path).exists() else EmbeddingStore()
    embed_texts(client, texts, store, parallelism=parallelism)
    store.save(store_path)
    click.echo(f"cached {len(store)} embeddings (dim={store.dim}) in {store_path}")


@main.command()
@click.option("--ontology", "ontology_dir", required=True, type=click.Path(exists=True))
@click.option("--mentions", "mentions_path", required=True, type=click.Path(exists=True))
@click.option("--method", required=True, type=click.Choice(METHODS))
@click.option("--k", default=10, show_default=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), default=None)
@click.option("--store", "store_path", type=click.Path(exists=True), default=None)
@click.option("--embed-url", default=None)
@click.option("--parallelism", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
@_wrap_errors
def candidates(ctx, ontology_dir, mentions_path, method, k, vocab_path, store_path,
               embed_url, parallelism, seed, out_path):
    """Generate top-k candidate slates for every mention."""
    pipeline = cfg.PipelineConfig(
        ontology_dir=ontology_dir,
        dataset_path=mentions_path,
        method=method,
        k=k,
        embed_url=_resolved(ctx, embed_url, cfg.ENV_EMBED_URL, "embed_url"),
        vocab_path=vocab_path,
        parallelism=parallelism,
        seed=seed,
    )
    onto = read_ontology_dir(pipeline.ontology_dir)
    dataset = _load_mentions(pipeline.dataset_path, onto, require_gold=False)
    tok = _tokenizer_from_vocab(pipeline.vocab_path)
    idx = build_index(list(onto.concepts.values()), tok) if method == "lexical" else None
    store = EmbeddingStore.load(store_path) if store_path else None
    client = None
    if method in ("fixed", "biencoder"):
        if pipeline.embed_url:
            client = EmbeddingClient(
                EmbeddingProviderEndpoint(
                    locator=_seeded_stub(pipeline.embed_url, pipeline.seed)
                )
            )
        elif store is None:
            raise click.ClickException(f"method {method} needs --embed-url or --store")

    def one(m):
        return generate_candidates(
            onto, m, method, pipeline.k, index=idx, tokenizer=tok, store=store, client=client
        )

    if pipeline.parallelism > 1:
        with ThreadPoolExecutor(max_workers=pipeline.parallelism) as pool:
            slates = list(pool.map(one, dataset.mentions))
    else:
        slates = [one(m) for m in dataset.mentions]
    write_slates(slates, out_path)
    click.echo(f"wrote {len(slates)} slates to {out_path}")


@main.command()
@click.option("--ontology", "ontology_dir", required=True, type=click.Path(exists=True))
@click.option("--slates", "slates_path", required=True, type=click.Path(exists=True))
@click.option("--method", required=True, type=click.Choice(["cross", "llm"]))
@click.option("--endpoint", default=None)
@click.option("--parse", "parse_mode", default="plain", show_default=True,
              type=click.Choice(["plain", "explained"]))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
@_wrap_errors
def select(ctx, ontology_dir, slates_path, method, endpoint, parse_mode, out_path):
    """Re-rank slates with the cross-encoder scorer or an LLM."""
    onto = read_ontology_dir(ontology_dir)
    slates = read_slates(slates_path)
    reranked = []
    if method == "cross":
        url = _resolved(ctx, endpoint, cfg.ENV_SCORER_URL, "scorer_url")
        if not url:
            raise click.ClickException("no scorer endpoint configured")
        client = ScorerClient(SelectionScorerEndpoint(locator=url))
        for slate in slates:
            if not slate.edges:
                reranked.append(slate)
                continue
            rows = build_cross_rows(slate.mention, slate, onto)
            reranked.append(select_scored(client, slate, rows))
    else:
        url = _resolved(ctx, endpoint, cfg.ENV_LLM_URL, "llm_url")
        if not url:
            raise click.ClickException("no LLM endpoint configured")
        client = CompletionClient(LlmEndpoint(locator=url))
        for slate in slates:
            if not slate.edges:
                reranked.append(slate)
                continue
            outcome = select_llm(client, onto, slate.mention, slate, parse=parse_mode)
            reranked.append(outcome.slate)
    write_slates(reranked, out_path)
    click.echo(f"wrote {len(reranked)} reranked slates to {out_path}")


@main.command("tune-corpus")
@click.option("--ontology", "ontology_dir", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--slates", "slates_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@_wrap_errors
def tune_corpus(ontology_dir, dataset_path, slates_path, out_path):
    """Emit explainable instruction-tuning records for gold-labelled slates."""
    onto = read_ontology_dir(ontology_dir)
    dataset = _load_mentions(dataset_path, onto, require_gold=True)
    slates = read_slates(slates_path)
    if len(slates) != len(dataset.mentions):
        raise click.ClickException(
            f"{len(slates)} slates do not align with {len(dataset.mentions)} mentions"
        )
    usable = [
        (m, s) for m, s in zip(dataset.mentions, slates) if s.edges
    ]
    records = emit_instruction_tuning_corpus(
        onto, [m for m, _ in usable], [s for _, s in usable]
    )
    write_tuning_corpus(records, out_path)
    click.echo(f"wrote {len(usable)} tuning records to {out_path}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@_wrap_errors
def adapt(in_path, out_path):
    """Convert an MM-S14-style mention release into the canonical dataset form.

    Accepts records carrying pipe-separated "parent-child" id pairs (the
    release's NULL marker maps to the NULL sentinel) alongside the usual
    mention and context fields.
    """
    import json as _json

    from .datasets_adapter import adapt_record

    count = 0
    with open(in_path, encoding="utf-8") as src, open(out_path, "w", encoding="utf-8") as dst:
        for line_no, line in enumerate(src, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = _json.loads(line)
            except _json.JSONDecodeError as exc:
                raise click.ClickException(f"line {line_no}: not valid JSON: {exc}")
            dst.write(_json.dumps(adapt_record(record, line_no), ensure_ascii=False) + "\n")
            count += 1
    click.echo(f"adapted {count} mention records to {out_path}")


@main.command("eval")
@click.option("--ontology", "ontology_dir", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--method", required=True, type=click.Choice(METHODS))
@click.option("--k", default=10, show_default=True)
@click.option("--ks", default="1,5,10", show_default=True,
              help="Comma-separated truncation ranks.")
@click.option("--selection", default=None, type=click.Choice(["cross", "llm"]))
@click.option("--endpoint", default=None, help="Selection endpoint when --selection is set.")
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), default=None)
@click.option("--store", "store_path", type=click.Path(exists=True), default=None)
@click.option("--embed-url", default=None)
@click.option("--parallelism", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--report", "report_path", required=True, type=click.Path())
@click.pass_context
@_wrap_errors
def eval_command(ctx, ontology_dir, dataset_path, method, k, ks, selection, endpoint,
                 vocab_path, store_path, embed_url, parallelism, seed, report_path):
    """Run the benchmark and write a Table-2/3-style report."""
    onto = read_ontology_dir(ontology_dir)
    dataset = _load_mentions(dataset_path, onto, require_gold=True)
    tok = _tokenizer_from_vocab(vocab_path)
    idx = build_index(list(onto.concepts.values()), tok) if method == "lexical" else None
    store = EmbeddingStore.load(store_path) if store_path else None
    embed_client = None
    if method in ("fixed", "biencoder"):
        url = _resolved(ctx, embed_url, cfg.ENV_EMBED_URL, "embed_url")
        if url:
            embed_client = EmbeddingClient(
                EmbeddingProviderEndpoint(locator=_seeded_stub(url, seed))
            )
        elif store is None:
            raise click.ClickException(f"method {method} needs --embed-url or --store")
    scorer_client = None
    llm_client = None
    if selection == "cross":
        url = _resolved(ctx, endpoint, cfg.ENV_SCORER_URL, "scorer_url")
        if not url:
            raise click.ClickException("selection cross needs an endpoint")
        scorer_client = ScorerClient(SelectionScorerEndpoint(locator=url))
    elif selection == "llm":
        url = _resolved(ctx, endpoint, cfg.ENV_LLM_URL, "llm_url")
        if not url:
            raise click.ClickException("selection llm needs an endpoint")
        llm_client = CompletionClient(LlmEndpoint(locator=url))

    config = BenchmarkConfig(
        ontology=onto,
        dataset=dataset,
        method=method,
        k_retrieval=k,
        ks=tuple(int(x) for x in ks.split(",")),
        selection=selection,
        index=idx,
        tokenizer=tok,
        store=store,
        embed_client=embed_client,
        scorer_client=scorer_client,
        llm_client=llm_client,
        parallelism=parallelism,
    )
    report = run_benchmark(config)
    text = report.render_tsv() if report_path.endswith(".tsv") else report.render_markdown()
    Path(report_path).write_text(text, encoding="utf-8")
    click.echo(f"report written to {report_path}")


@main.command()
@click.option("--ontology", "ontology_dir", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--method", default="lexical", show_default=True, type=click.Choice(METHODS))
@click.option("--k", default=10, show_default=True)
@click.option("--state-dir", default=None, type=click.Path(),
              help="Directory for the decision log and snapshots.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8420, show_default=True)
@_wrap_errors
def serve(ontology_dir, dataset_path, method, k, state_dir, host, port):
    """Serve the curation API for human terminologists."""
    import uvicorn

    from .service import ServiceState, create_app

    state = ServiceState.bootstrap(
        ontology_dir=ontology_dir,
        dataset_path=dataset_path,
        method=method,
        k=k,
        state_dir=state_dir,
    )
    uvicorn.run(create_app(state), host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
