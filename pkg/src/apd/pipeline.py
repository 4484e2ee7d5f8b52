"""Stage orchestration: ingest -> flag -> review -> purge -> optimize ->
index, with a run manifest of counts and content hashes."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import uuid
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from .domains import CachedIndexProvider, LiveIndexProvider, OfflineIndexProvider, check_indexed, extract_domain
from .errors import ConfigError, InvalidUrl, ProviderError, StageOrderError, ThresholdExceeded, VerdictParseError
from .flagging import flag_batch, flag_unusable, merge_flags, MergedFlags
from .gateway import FlagRecord, GatewayConfig, HttpChatBackend
from .ingest import WebRow, load_rows, load_rows_jsonl, truncate_for_prompt
from .mockserver import RuleChatBackend
from .optimizer import optimize
from .review import ReviewDecision, ReviewStore, finalize_purge, PurgeResult
from .safety import classify
from .vectordb import EmbeddedChunk, HashEmbedder, HttpEmbedder, VectorIndex

log = logging.getLogger("apd.pipeline")

STAGES = ("ingest", "flag", "review", "purge", "optimize", "index")

FAIL_THRESHOLD = 0.2

ROWS_FILE = "rows.csv"
FLAGS_FILE = "flags.ndjson"
REVIEWED_FILE = "reviewed.ndjson"
DECISIONS_FILE = "decisions.ndjson"
PURGE_FILE = "purge.json"
PURIFIED_FILE = "purified.csv"
INDEX_FILE = "index.apd"
MANIFEST_FILE = "manifest.json"

_SECRET_KEYS = ("api_key", "search_key")


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture file (sample corpus, allowlist)."""
    return Path(str(resources.files("apd.fixtures").joinpath(name)))


@dataclass
class PipelineConfig:
    input: str = ""
    outdir: str = "out"
    limit: int = 100
    batch_size: int = 10
    sample_seed: int | None = None
    chat_provider: str = "mock"  # live | mock
    guard_provider: str = "mock"  # live | mock
    search_provider: str = "offline"  # offline | live
    embed_provider: str = "hash"  # hash | live
    allowlist: str = ""
    api_base: str = ""
    api_key: str = ""
    chat_model: str = "mock-chat"
    guard_model: str = "mock-guard"
    search_base: str = ""
    search_key: str = ""
    embed_base: str = ""
    embed_model: str = ""
    retry_limit: int = 3
    backoff_base: float = 0.5
    port: int = 8000
    unreviewed_policy: str = "trust_machine"
    fixture_file: str = ""

    def __post_init__(self):
        if self.limit < 1:
            raise ConfigError("limit must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.chat_provider not in ("live", "mock"):
            raise ConfigError(f"chat_provider must be live or mock, got {self.chat_provider!r}")
        if self.guard_provider not in ("live", "mock"):
            raise ConfigError(f"guard_provider must be live or mock, got {self.guard_provider!r}")
        if self.search_provider not in ("offline", "live"):
            raise ConfigError(f"search_provider must be offline or live, got {self.search_provider!r}")
        if self.embed_provider not in ("hash", "live"):
            raise ConfigError(f"embed_provider must be hash or live, got {self.embed_provider!r}")
        if "live" in (self.chat_provider, self.guard_provider) and not self.api_base:
            raise ConfigError("live chat/guard providers require api_base (APD_API_BASE)")
        if self.search_provider == "live" and not self.search_base:
            raise ConfigError("live search provider requires search_base (APD_SEARCH_BASE)")
        if self.embed_provider == "live" and not (self.embed_base or self.api_base):
            raise ConfigError("live embed provider requires embed_base or api_base")
        if not self.input:
            self.input = str(fixture_path("sample_rows.csv"))
        if not self.allowlist:
            self.allowlist = str(fixture_path("sample_allowlist.txt"))

    def snapshot(self) -> dict:
        snap = asdict(self)
        for key in _SECRET_KEYS:
            if snap.get(key):
                snap[key] = "***"
        return snap


_INT_KEYS = {"limit", "batch_size", "retry_limit", "port", "sample_seed"}
_FLOAT_KEYS = {"backoff_base"}


def read_config_file(path: str | Path) -> dict:
    """Flat key=value config file; '#' starts a comment line."""
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip().lower()] = value.strip()
    return values


def build_config(config_file: str | None = None, cli_overrides: dict | None = None) -> PipelineConfig:
    """Merge config sources: file < APD_* environment < CLI flags."""
    values: dict = {}
    if config_file:
        values.update(read_config_file(config_file))
    field_names = {f.name for f in PipelineConfig.__dataclass_fields__.values()}
    for name in field_names:
        env = os.environ.get(f"APD_{name.upper()}")
        if env is not None:
            values[name] = env
    for key, value in (cli_overrides or {}).items():
        if value is not None:
            values[key] = value
    unknown = set(values) - field_names
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    for key in list(values):
        if values[key] is None:
            continue
        try:
            if key in _INT_KEYS and isinstance(values[key], str):
                values[key] = int(values[key])
            elif key in _FLOAT_KEYS and isinstance(values[key], str):
                values[key] = float(values[key])
        except ValueError as exc:
            raise ConfigError(f"config key {key}: {exc}") from exc
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def build_chat_backend(cfg: PipelineConfig):
    if cfg.chat_provider == "mock":
        if cfg.fixture_file:
            return RuleChatBackend.with_fixture_file(cfg.fixture_file, guard_model=cfg.guard_model)
        return RuleChatBackend(guard_model=cfg.guard_model)
    return HttpChatBackend(
        GatewayConfig(
            base_url=cfg.api_base,
            api_key=cfg.api_key,
            retry_limit=cfg.retry_limit,
            backoff_base=cfg.backoff_base,
        )
    )


def build_guard_backend(cfg: PipelineConfig, chat_backend=None):
    if cfg.guard_provider == cfg.chat_provider and chat_backend is not None:
        return chat_backend
    if cfg.guard_provider == "mock":
        return RuleChatBackend(guard_model=cfg.guard_model)
    return HttpChatBackend(
        GatewayConfig(
            base_url=cfg.api_base,
            api_key=cfg.api_key,
            retry_limit=cfg.retry_limit,
            backoff_base=cfg.backoff_base,
        )
    )


def build_search_provider(cfg: PipelineConfig):
    if cfg.search_provider == "offline":
        return CachedIndexProvider(OfflineIndexProvider(cfg.allowlist))
    return CachedIndexProvider(LiveIndexProvider(cfg.search_base, cfg.search_key))


def build_embedder(cfg: PipelineConfig):
    if cfg.embed_provider == "hash":
        return HashEmbedder()
    return HttpEmbedder(cfg.embed_base or cfg.api_base, cfg.embed_model, cfg.api_key)


# ---------------------------------------------------------------------------
# artifact io


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_rows(rows: list[WebRow], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "url", "text", "status"])
        for row in rows:
            writer.writerow([row.id, row.url, row.text, row.status])


def read_rows(path: Path) -> list[WebRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [WebRow(id=r["id"], url=r["url"], text=r["text"], status=r["status"]) for r in reader]


def write_flags(merged: list[MergedFlags], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in merged:
            fh.write(
                json.dumps(
                    {"id": m.row_id, "flags": sorted(m.flags), "reasons": m.reasons},
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def read_flags(path: Path) -> dict[str, MergedFlags]:
    machine: dict[str, MergedFlags] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                machine[obj["id"]] = MergedFlags(
                    row_id=obj["id"], flags=frozenset(obj["flags"]), reasons=dict(obj["reasons"])
                )
    return machine


def read_decisions(path: Path) -> dict[str, ReviewDecision]:
    decisions: dict[str, ReviewDecision] = {}
    if not path.exists():
        return decisions
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                decisions[obj["row_id"]] = ReviewDecision(
                    row_id=obj["row_id"],
                    corrected_flags=frozenset(obj["flags"]),
                    reviewer=obj.get("reviewer", ""),
                    note=obj.get("note", ""),
                    timestamp=obj.get("timestamp", ""),
                )
    return decisions


def write_purge(purge: PurgeResult, path: Path) -> None:
    payload = {
        "removed": [[rid, reason] for rid, reason in purge.removed],
        "retained": list(purge.retained),
        "reason_counts": purge.reason_counts,
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def read_purge(path: Path) -> PurgeResult:
    obj = json.loads(path.read_text(encoding="utf-8"))
    return PurgeResult(
        removed=[(rid, reason) for rid, reason in obj["removed"]],
        retained=list(obj["retained"]),
        reason_counts=dict(obj["reason_counts"]),
    )


# ---------------------------------------------------------------------------
# manifest


def manifest_path(outdir: Path) -> Path:
    return outdir / MANIFEST_FILE


def load_manifest(outdir: Path) -> dict | None:
    path = manifest_path(outdir)
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def _save_manifest(outdir: Path, manifest: dict) -> None:
    manifest_path(outdir).write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def run_stage(name: str, cfg: PipelineConfig) -> dict:
    """Execute one named stage, write its artifacts, and append a manifest
    entry with the artifact's content hash.

    Re-running a stage replaces its entry and invalidates entries after it.
    """
    if name not in STAGES:
        raise ConfigError(f"unknown stage {name!r}")
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(outdir) or {"run_id": f"r-{uuid.uuid4().hex[:8]}", "config": cfg.snapshot(), "stages": []}

    position = STAGES.index(name)
    done = [entry["name"] for entry in manifest["stages"]]
    required = list(STAGES[:position])
    if done[: len(required)] != required:
        missing = [s for s in required if s not in done]
        raise StageOrderError(f"stage {name!r} requires prior stage(s): {', '.join(missing) or 'in-order completion'}")

    started = _now()
    runner = _STAGE_RUNNERS[name]
    input_count, output_count, artifact = runner(cfg, outdir)
    entry = {
        "name": name,
        "started": started,
        "ended": _now(),
        "input_count": input_count,
        "output_count": output_count,
        "artifact": artifact,
        "sha256": _sha256(outdir / artifact),
    }
    manifest["stages"] = [e for e in manifest["stages"] if STAGES.index(e["name"]) < position] + [entry]
    _save_manifest(outdir, manifest)
    log.info("stage %s: %d -> %d rows, artifact %s", name, input_count, output_count, artifact)
    return entry


def run_all(cfg: PipelineConfig) -> dict:
    for name in STAGES:
        run_stage(name, cfg)
    return load_manifest(Path(cfg.outdir))


def verify_counts(manifest: dict) -> bool:
    """Counts chain: every stage's input equals the prior stage's output."""
    stages = manifest["stages"]
    return all(stages[i]["input_count"] == stages[i - 1]["output_count"] for i in range(1, len(stages)))


# ---------------------------------------------------------------------------
# stage implementations


def _stage_ingest(cfg: PipelineConfig, outdir: Path):
    loader = load_rows_jsonl if cfg.input.endswith((".jsonl", ".ndjson")) else load_rows
    rows = loader(cfg.input, limit=cfg.limit, sample_seed=cfg.sample_seed)
    write_rows(rows, outdir / ROWS_FILE)
    return len(rows), len(rows), ROWS_FILE


def _stage_flag(cfg: PipelineConfig, outdir: Path):
    rows = read_rows(outdir / ROWS_FILE)
    chat_backend = build_chat_backend(cfg)
    guard_backend = build_guard_backend(cfg, chat_backend)
    search = build_search_provider(cfg)

    records: dict[str, list[FlagRecord]] = {row.id: [] for row in rows}
    for row in rows:
        records[row.id].append(_safety_record(row, guard_backend, cfg.guard_model))
        records[row.id].append(_domain_record(row, guard_backend, cfg.guard_model, search))
    for rec in flag_batch(rows, chat_backend, cfg.chat_model, batch_size=cfg.batch_size):
        records[rec.row_id].append(rec)
    for rec in flag_unusable(rows, chat_backend, cfg.chat_model, batch_size=cfg.batch_size):
        records[rec.row_id].append(rec)

    merged = [merge_flags(records[row.id]) for row in rows]
    write_flags(merged, outdir / FLAGS_FILE)

    failed = [m.row_id for m in merged if "flagging_failed" in m.flags]
    if len(failed) > FAIL_THRESHOLD * len(rows):
        raise ThresholdExceeded(
            f"{len(failed)}/{len(rows)} rows failed flagging (> {FAIL_THRESHOLD:.0%}); "
            f"failing ids: {', '.join(failed)}"
        )
    return len(rows), len(rows), FLAGS_FILE


def _log_verdict(row_id: str, verdict) -> None:
    log.info(
        "verdict %s %s %s %s", row_id, verdict.subject, verdict.verdict, ",".join(sorted(verdict.categories))
    )


def _safety_record(row: WebRow, backend, guard_model: str) -> FlagRecord:
    try:
        verdict = classify(truncate_for_prompt(row.text), "text", backend, guard_model)
    except VerdictParseError as exc:
        log.warning("row %s: guard verdict unparseable: %s", row.id, exc)
        return FlagRecord(row_id=row.id, stage="safety", flags=frozenset({"flagging_failed"}), reason=str(exc))
    _log_verdict(row.id, verdict)
    if verdict.is_unsafe:
        reason = "guard categories: " + ",".join(sorted(verdict.categories))
        return FlagRecord(row_id=row.id, stage="safety", flags=frozenset({"unsafe"}), reason=reason)
    return FlagRecord(row_id=row.id, stage="safety", flags=frozenset({"safe"}))


def _domain_record(row: WebRow, backend, guard_model: str, search) -> FlagRecord:
    try:
        domain = extract_domain(row.url)
    except InvalidUrl as exc:
        log.warning("row %s: %s", row.id, exc)
        return FlagRecord(row_id=row.id, stage="domain", flags=frozenset({"flagging_failed"}), reason=str(exc))
    flags: set[str] = set()
    reasons: list[str] = []
    try:
        verdict = classify(domain, "domain", backend, guard_model)
    except VerdictParseError as exc:
        log.warning("row %s: domain guard verdict unparseable: %s", row.id, exc)
        return FlagRecord(row_id=row.id, stage="domain", flags=frozenset({"flagging_failed"}), reason=str(exc))
    _log_verdict(row.id, verdict)
    if verdict.is_unsafe:
        flags.add("domain_unsafe")
        reasons.append(f"domain {domain} unsafe: " + ",".join(sorted(verdict.categories)))
    try:
        if not check_indexed(domain, search):
            flags.add("domain_not_indexed")
            reasons.append(f"domain {domain} not indexed")
    except ProviderError as exc:
        log.warning("row %s: index provider failed: %s", row.id, exc)
        return FlagRecord(row_id=row.id, stage="domain", flags=frozenset({"flagging_failed"}), reason=str(exc))
    if not flags:
        return FlagRecord(row_id=row.id, stage="domain", flags=frozenset({"safe"}))
    return FlagRecord(row_id=row.id, stage="domain", flags=frozenset(flags), reason="; ".join(reasons))


def _stage_review(cfg: PipelineConfig, outdir: Path):
    rows = read_rows(outdir / ROWS_FILE)
    machine = read_flags(outdir / FLAGS_FILE)
    store = ReviewStore(rows, machine, log_path=outdir / DECISIONS_FILE)
    final = store.final_flags()
    with open(outdir / REVIEWED_FILE, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(
                json.dumps(
                    {
                        "id": row.id,
                        "final_flags": sorted(final[row.id]),
                        "reviewed": row.id in store.decisions,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
    return len(rows), len(rows), REVIEWED_FILE


def _stage_purge(cfg: PipelineConfig, outdir: Path):
    rows = read_rows(outdir / ROWS_FILE)
    machine = read_flags(outdir / FLAGS_FILE)
    decisions = read_decisions(outdir / DECISIONS_FILE)
    purge = finalize_purge(rows, machine, decisions, unreviewed_policy=cfg.unreviewed_policy)
    write_purge(purge, outdir / PURGE_FILE)
    return len(rows), len(purge.retained), PURGE_FILE


def _stage_optimize(cfg: PipelineConfig, outdir: Path):
    rows = {r.id: r for r in read_rows(outdir / ROWS_FILE)}
    purge = read_purge(outdir / PURGE_FILE)
    backend = build_chat_backend(cfg)
    with open(outdir / PURIFIED_FILE, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "url", "text"])
        for rid in purge.retained:
            row = rows[rid]
            result = optimize(row, backend, cfg.chat_model)
            writer.writerow([rid, row.url, result.optimized])
    return len(purge.retained), len(purge.retained), PURIFIED_FILE


def build_index_file(cfg: PipelineConfig, source: Path, target: Path) -> int:
    """Standalone index build: purified csv in, index file out, no manifest."""
    count, _total, _name = _stage_index(cfg, target.parent, source=source, target=target)
    return count


def _stage_index(cfg: PipelineConfig, outdir: Path, source: Path | None = None, target: Path | None = None):
    source = source or outdir / PURIFIED_FILE
    target = target or outdir / INDEX_FILE
    embedder = build_embedder(cfg)
    index = VectorIndex(embedder_name=embedder.name)
    count = 0
    with open(source, encoding="utf-8", newline="") as fh:
        for record in csv.DictReader(fh):
            vector = embedder.embed(record["text"])
            index.upsert(EmbeddedChunk(id=record["id"], text=record["text"], url=record["url"], vector=tuple(vector)))
            count += 1
    index.save(target)
    return count, len(index), target.name


_STAGE_RUNNERS = {
    "ingest": _stage_ingest,
    "flag": _stage_flag,
    "review": _stage_review,
    "purge": _stage_purge,
    "optimize": _stage_optimize,
    "index": _stage_index,
}
