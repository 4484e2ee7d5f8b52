"""Command-line interface for the purification pipeline.

Exit codes: 0 success, 2 configuration/usage error, 3 gateway or provider
error, 4 flagging-failure threshold exceeded.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import pipeline
from .errors import (
    ApdError,
    ConfigError,
    EmbedError,
    GatewayError,
    IoError,
    ProviderError,
    SchemaError,
    StageOrderError,
    ThresholdExceeded,
)
from .metrics import removal_report
from .rag import answer
from .review import ReviewStore, final_flags_for
from .vectordb import VectorIndex

log = logging.getLogger("apd")


def _exit_code(exc: ApdError) -> int:
    if isinstance(exc, (GatewayError, ProviderError, EmbedError)):
        return 3
    if isinstance(exc, ThresholdExceeded):
        return 4
    if isinstance(exc, (ConfigError, SchemaError, IoError, StageOrderError)):
        return 2
    return 1


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ApdError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(_exit_code(exc))

    return wrapper


def _config_options(fn):
    options = [
        click.option("--config", "config_file", type=click.Path(), default=None, help="key=value config file"),
        click.option("--input", "input", type=click.Path(), default=None, help="corpus file (csv or jsonl)"),
        click.option("--out", "outdir", type=click.Path(), default=None, help="run output directory"),
        click.option("--limit", type=int, default=None),
        click.option("--batch-size", "batch_size", type=int, default=None),
        click.option("--sample-seed", "sample_seed", type=int, default=None),
        click.option("--chat-provider", "chat_provider", type=click.Choice(["live", "mock"]), default=None),
        click.option("--guard-provider", "guard_provider", type=click.Choice(["live", "mock"]), default=None),
        click.option("--index-provider", "search_provider", type=click.Choice(["offline", "live"]), default=None),
        click.option("--embed-provider", "embed_provider", type=click.Choice(["hash", "live"]), default=None),
        click.option("--allowlist", type=click.Path(), default=None),
        click.option("--fixtures", "fixture_file", type=click.Path(), default=None, help="canned chat fixtures"),
        click.option("--unreviewed-policy", "unreviewed_policy", type=click.Choice(["trust_machine", "require_review"]), default=None),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _build_config(config_file, **overrides) -> pipeline.PipelineConfig:
    return pipeline.build_config(config_file, {k: v for k, v in overrides.items() if v is not None})


@click.group()
@click.option("-v", "--verbose", is_flag=True, default=False)
def main(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _stage_command(name: str):
    @_config_options
    @_guarded
    def command(config_file, **overrides):
        cfg = _build_config(config_file, **overrides)
        entry = pipeline.run_stage(name, cfg)
        click.echo(f"{name}: {entry['input_count']} -> {entry['output_count']} ({entry['artifact']})")

    command.__name__ = name
    return command


main.command("ingest")(_stage_command("ingest"))
main.command("flag")(_stage_command("flag"))
main.command("purge")(_stage_command("purge"))
main.command("optimize")(_stage_command("optimize"))


@main.command("index")
@click.option("--in", "source", type=click.Path(), default=None, help="purified csv (default: OUT/purified.csv)")
@_config_options
@_guarded
def index_cmd(source, config_file, **overrides):
    """Embed purified rows into the vector index.

    With --out pointing at an .apd file this runs standalone
    (no manifest); otherwise --out is the run directory.
    """
    cfg = _build_config(config_file, **overrides)
    if cfg.outdir.endswith(".apd"):
        target = Path(cfg.outdir)
        src = Path(source) if source else Path("purified.csv")
        count = pipeline.build_index_file(cfg, src, target)
        click.echo(f"index: {count} chunk(s) -> {target}")
        return
    if source:
        count = pipeline.build_index_file(cfg, Path(source), Path(cfg.outdir) / pipeline.INDEX_FILE)
        click.echo(f"index: {count} chunk(s) -> {pipeline.INDEX_FILE}")
        return
    entry = pipeline.run_stage("index", cfg)
    click.echo(f"index: {entry['input_count']} -> {entry['output_count']} ({entry['artifact']})")


@main.command("run-all")
@_config_options
@_guarded
def run_all_cmd(config_file, **overrides):
    """Run every stage in order over one output directory."""
    cfg = _build_config(config_file, **overrides)
    manifest = pipeline.run_all(cfg)
    for entry in manifest["stages"]:
        click.echo(f"{entry['name']}: {entry['input_count']} -> {entry['output_count']} sha256={entry['sha256'][:12]}")


@main.command("report")
@_config_options
@_guarded
def report_cmd(config_file, **overrides):
    """Write the removal report (text + machine-readable) for a finished run."""
    cfg = _build_config(config_file, **overrides)
    outdir = Path(cfg.outdir)
    purge_path = outdir / pipeline.PURGE_FILE
    if not purge_path.exists():
        raise StageOrderError("report requires a completed purge stage")
    purge = pipeline.read_purge(purge_path)
    machine = pipeline.read_flags(outdir / pipeline.FLAGS_FILE)
    decisions = pipeline.read_decisions(outdir / pipeline.DECISIONS_FILE)
    report = removal_report(purge, final_flags_for(machine, decisions))
    (outdir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (outdir / "report.json").write_text(report.to_json(), encoding="utf-8")
    click.echo(report.to_text())


@main.command("review-serve")
@click.option("--port", type=int, default=8000)
@click.option("--ui-dir", type=click.Path(), default=None, help="static assets for the review UI")
@_config_options
@_guarded
def review_serve_cmd(port, ui_dir, config_file, **overrides):
    """Serve the human review API (and UI, when built) over a run directory."""
    import uvicorn

    from .review_api import create_app

    cfg = _build_config(config_file, **overrides)
    outdir = Path(cfg.outdir)
    rows_path = outdir / pipeline.ROWS_FILE
    flags_path = outdir / pipeline.FLAGS_FILE
    if not rows_path.exists() or not flags_path.exists():
        raise StageOrderError("review-serve requires completed ingest and flag stages")
    store = ReviewStore(
        pipeline.read_rows(rows_path),
        pipeline.read_flags(flags_path),
        log_path=outdir / pipeline.DECISIONS_FILE,
    )
    if ui_dir is None:
        default_ui = Path("frontend/dist")
        ui_dir = str(default_ui) if default_ui.is_dir() else None
    app = create_app(store, ui_dir=ui_dir, on_finalize=lambda purge: pipeline.write_purge(purge, outdir / pipeline.PURGE_FILE))
    click.echo(f"review service on http://127.0.0.1:{port} (rows: {len(store.rows)})", err=True)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")


@main.command("query")
@click.option("--index", "index_path", type=click.Path(), required=True)
@click.option("--text", required=True)
@click.option("-k", type=int, default=3)
@_guarded
def query_cmd(index_path, text, k):
    """Raw top-k retrieval against a saved index."""
    from .vectordb import HashEmbedder

    index = VectorIndex.load(index_path)
    embedder = HashEmbedder()
    if index.embedder_name and index.embedder_name != embedder.name:
        log.warning("index was built with embedder %s; querying with %s", index.embedder_name, embedder.name)
    for hit in index.query(embedder.embed(text), k=k):
        click.echo(f"{hit.similarity:+.4f} {hit.chunk.id} {hit.chunk.url}")
        click.echo(f"        {hit.chunk.text}")


@main.command("ask")
@click.argument("question")
@click.option("--index", "index_path", type=click.Path(), required=True)
@click.option("--no-rag", is_flag=True, default=False)
@click.option("-k", type=int, default=3)
@click.option("--show-exchange", is_flag=True, default=False)
@_config_options
@_guarded
def ask_cmd(question, index_path, no_rag, k, show_exchange, config_file, **overrides):
    """Answer a question with top-k retrieved context as the system prompt."""
    cfg = _build_config(config_file, **overrides)
    index = VectorIndex.load(index_path)
    backend = pipeline.build_chat_backend(cfg)
    embedder = pipeline.build_embedder(cfg)
    exchange = answer(question, index, backend, embedder, cfg.chat_model, k=k, use_rag=not no_rag)
    if show_exchange:
        click.echo(
            json.dumps(
                {
                    "user_query": exchange.user_query,
                    "search_query": exchange.search_query,
                    "hits": [
                        {"id": h.chunk.id, "similarity": h.similarity, "url": h.chunk.url} for h in exchange.hits
                    ],
                    "system_prompt": exchange.system_prompt,
                    "answer": exchange.answer,
                },
                indent=2,
                ensure_ascii=False,
            )
        )
    else:
        click.echo(exchange.answer)


@main.command("mock-serve")
@click.option("--port", type=int, default=8900)
@click.option("--allowlist", type=click.Path(), default=None)
@click.option("--fixtures", "fixture_file", type=click.Path(), default=None)
@click.option("--guard-model", default="mock-guard")
@_guarded
def mock_serve_cmd(port, allowlist, fixture_file, guard_model):
    """Serve the bundled deterministic model/search/embedding mock."""
    from .mockserver import MockApiServer, RuleChatBackend

    allowlist = allowlist or str(pipeline.fixture_path("sample_allowlist.txt"))
    server = MockApiServer(port=port, guard_model=guard_model, allowlist=allowlist)
    if fixture_file:
        server.chat_backend.fixtures.update(RuleChatBackend.with_fixture_file(fixture_file).fixtures)
    click.echo(f"mock backends on http://127.0.0.1:{server.port}", err=True)
    server.serve_forever()


if __name__ == "__main__":
    main()
