"""Acceptance suite: one test per release criterion, each printing a
PASS line and enforcing its stated tolerance and runtime bound.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
lines.
"""

from __future__ import annotations

import csv
import io
import json
import random
import re
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from apd.cli import main as cli_main
from apd.errors import LoadError, VerdictParseError, VersionError
from apd.flagging import render_flag_prompt, render_unusable_prompt
from apd.gateway import extract_fenced, wrap_in_fence
from apd.ingest import WebRow, assign_id, to_prompt_csv
from apd.metrics import compute_confusion
from apd.mockserver import RuleChatBackend
from apd.optimizer import render_optimize_prompt
from apd.rag import answer
from apd.review import ReviewDecision, final_flags_for, finalize_purge
from apd.safety import parse_guard_output
from apd.vectordb import EmbeddedChunk, HashEmbedder, VectorIndex

from conftest import golden
from test_metrics import pairs_from_counts
from test_rag import GERMAN_QUERY, HOCKEY_FACT, rewrite_fixture_backend, seeded_index
from test_review import make_corpus, table_iv_corpus


def _report(name: str):
    print(f"[ACCEPTANCE] {name}: PASS")


class TestAcceptance:
    def test_confusion_matrix_reproduction(self):
        start = time.perf_counter()
        unsafe = compute_confusion(*pairs_from_counts(tp=7, fp=1, tn=90, fn=2))
        undesirable = compute_confusion(*pairs_from_counts(tp=60, fp=1, tn=26, fn=13))
        assert (unsafe.tp, unsafe.fp, unsafe.tn, unsafe.fn) == (7, 1, 90, 2)
        assert unsafe.total == undesirable.total == 100
        assert unsafe.accuracy_percent == "97.00%"
        assert undesirable.accuracy_percent == "86.00%"
        elapsed = time.perf_counter() - start
        assert elapsed < 1.0
        _report("confusion-matrix reproduction (97.00% / 86.00%)")

    def test_purge_reproduction(self):
        start = time.perf_counter()
        rows, machine = table_iv_corpus()
        purge = finalize_purge(rows, machine, {})
        assert len(purge.removed) == 76
        assert len(purge.retained) == 24
        assert purge.reason_counts == {
            "unsafe": 9,
            "domain_unsafe": 3,
            "domain_not_indexed": 5,
            "undesirable": 59,
        }
        elapsed = time.perf_counter() - start
        assert elapsed < 1.0
        _report("purge reproduction (76 removed / 24 retained, reasons 9/3/5/59)")

    def test_conservation_property(self):
        start = time.perf_counter()
        vocab = [
            "unsafe",
            "domain_unsafe",
            "domain_not_indexed",
            "flagging_failed",
            "advertisement",
            "sensitive",
            "biased",
            "religious",
            "lottery",
            "scam",
            "spam",
            "data_poisoning",
            "unusable",
        ]
        rng = random.Random(20240611)
        for _case in range(1000):
            n = rng.randint(1, 200)
            flag_sets = []
            for _row in range(n):
                if rng.random() < 0.25:
                    flag_sets.append({"safe"})
                else:
                    flag_sets.append(set(rng.sample(vocab, rng.randint(1, 4))))
            rows, machine = make_corpus(flag_sets)
            decisions = {}
            for row in rows:
                roll = rng.random()
                if roll < 0.1:
                    decisions[row.id] = ReviewDecision(row.id, frozenset({"safe"}), reviewer="rv")
                elif roll < 0.2:
                    decisions[row.id] = ReviewDecision(row.id, frozenset({rng.choice(vocab)}), reviewer="rv")
            purge = finalize_purge(rows, machine, decisions)
            assert len(purge.removed) + len(purge.retained) == n
            assert sum(purge.reason_counts.values()) == len(purge.removed)
            final = final_flags_for(machine, decisions)
            for rid in purge.retained:
                assert final[rid] == frozenset({"safe"})
        elapsed = time.perf_counter() - start
        assert elapsed < 30.0
        _report(f"conservation over 1000 randomized corpora ({elapsed:.1f}s)")

    def test_prompt_fidelity(self, sample_rows):
        assert render_flag_prompt(sample_rows).encode("utf-8") == golden("prompt_flag_undesirable.txt").encode("utf-8")
        assert render_unusable_prompt(sample_rows).encode("utf-8") == golden("prompt_flag_unusable.txt").encode("utf-8")
        museum = "The city science museum opens a new planetarium wing on 3 February 2025 with nightly star shows."
        assert render_optimize_prompt(museum).encode("utf-8") == golden("prompt_optimize_text.txt").encode("utf-8")
        _report("prompt fidelity (templates byte-for-byte)")

    def test_parser_round_trips(self):
        rng = random.Random(20240612)
        alphabet = 'abcdefgh XYZ,\n"\r\'0123`~%-'
        texts = []
        while len(texts) < 1000:
            candidate = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 60)))
            if candidate.strip() and "```" not in candidate:
                texts.append(candidate)
        rows = [WebRow(id=assign_id(i), url="http://x.example/", text=t) for i, t in enumerate(texts)]
        rendered = to_prompt_csv(rows)
        parsed = list(csv.reader(io.StringIO(rendered, newline="")))
        assert [(p[0], p[1]) for p in parsed[1:]] == [(r.id, r.text) for r in rows]

        for text in texts[:500]:
            stripped = text.strip()
            assert extract_fenced(wrap_in_fence(stripped)) == stripped

        grammar = re.compile(r"\s*(safe|unsafe\s*\n\s*S\d+(\s*,\s*S\d+)*)\s*", re.IGNORECASE)
        samples = [
            "safe",
            " SAFE ",
            "unsafe\nS1",
            "Unsafe\nS1, S10",
            "unsafe\ns3",
            "unsafe",
            "unsafe\n",
            "unsafe\nS1,",
            "unsafe\nX2",
            "maybe?",
            "safe\nextra",
            "unsafe\nS1\nmore",
            "",
        ]
        for _ in range(500):
            samples.append("".join(rng.choice("saftenu\nS123,x ") for _ in range(rng.randint(1, 12))))
        for raw in samples:
            accepted = True
            try:
                parse_guard_output(raw)
            except VerdictParseError:
                accepted = False
            assert accepted == bool(grammar.fullmatch(raw)), f"grammar disagreement on {raw!r}"
        _report("parser round trips (csv inverse, fence identity, guard grammar)")

    @staticmethod
    def _brute_force_ranking(chunks, query):
        # independent full-ranking oracle: score every chunk, sort, no top-k shortcut
        import math

        from apd.ingest import id_sort_key

        query_norm = math.sqrt(sum(x * x for x in query))
        scored = []
        for chunk in chunks:
            dot = sum(a * b for a, b in zip(query, chunk.vector))
            chunk_norm = math.sqrt(sum(a * a for a in chunk.vector))
            scored.append((dot / (query_norm * chunk_norm), chunk.id))
        scored.sort(key=lambda pair: (-pair[0], id_sort_key(pair[1])))
        return [cid for _sim, cid in scored], {cid: sim for sim, cid in scored}

    def test_retrieval_oracle(self):
        start = time.perf_counter()
        embedder = HashEmbedder()
        rng = random.Random(20240613)
        words = [f"tok{i}" for i in range(300)]
        index = VectorIndex(embedder_name=embedder.name)
        chunks = []
        for i in range(100):
            text = " ".join(rng.choice(words) for _ in range(rng.randint(5, 25)))
            chunk = EmbeddedChunk(
                id=assign_id(i), text=text, url=f"http://c{i}.example/", vector=tuple(embedder.embed(text))
            )
            chunks.append(chunk)
            index.upsert(chunk)

        matrix = np.array([c.vector for c in chunks])
        norms = np.linalg.norm(matrix, axis=1)

        for _ in range(100):
            query_text = " ".join(rng.choice(words) for _ in range(rng.randint(3, 10)))
            query = tuple(embedder.embed(query_text))
            full_ranking, oracle_sims = self._brute_force_ranking(chunks, query)
            k = rng.choice([1, 3, 5, 10])
            hits = index.query(query, k=k)
            assert [h.chunk.id for h in hits] == full_ranking[:k]
            # cross-arithmetic check of the similarity values themselves
            np_sims = matrix @ np.array(query) / (norms * np.linalg.norm(query))
            for i, chunk in enumerate(chunks):
                assert abs(oracle_sims[chunk.id] - np_sims[i]) <= 1e-9

        for chunk in rng.sample(chunks, 20):
            hits = index.query(chunk.vector)
            assert len(hits) == 3  # default k
            assert hits[0].chunk.id == chunk.id
            assert abs(hits[0].similarity - 1.0) <= 1e-9
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0
        _report(f"retrieval oracle (100 chunks x 100 queries, {elapsed:.1f}s)")

    def test_persistence(self, tmp_path):
        embedder = HashEmbedder()
        rng = random.Random(20240614)
        index = VectorIndex(embedder_name=embedder.name)
        for i in range(100):
            text = " ".join(f"w{rng.randint(0, 400)}" for _ in range(12))
            index.upsert(
                EmbeddedChunk(id=assign_id(i), text=text, url=f"http://p{i}.example/", vector=tuple(embedder.embed(text)))
            )
        path = tmp_path / "index.apd"
        index.save(path)
        loaded = VectorIndex.load(path)
        assert len(loaded) == 100
        for chunk in index.chunks():
            other = loaded.get(chunk.id)
            assert other.text == chunk.text and other.url == chunk.url
            assert [x.hex() for x in other.vector] == [x.hex() for x in chunk.vector]

        versioned = tmp_path / "versioned.apd"
        versioned.write_text('{"format_version": "v99", "dimension": 64, "embedder_name": "x"}\n', encoding="utf-8")
        with pytest.raises(VersionError):
            VectorIndex.load(versioned)

        corrupt = tmp_path / "corrupt.apd"
        corrupt.write_text(path.read_text(encoding="utf-8").rstrip("\n")[:-15], encoding="utf-8")
        with pytest.raises(LoadError):
            VectorIndex.load(corrupt)
        _report("persistence (bit-exact round trip, version + corruption errors)")

    def test_end_to_end_determinism(self, tmp_path):
        golden_hashes = json.loads((Path(__file__).parent / "golden" / "manifest_hashes.json").read_text())
        runner = CliRunner()
        start = time.perf_counter()
        result = runner.invoke(cli_main, ["run-all", "--out", str(tmp_path / "one")])
        elapsed = time.perf_counter() - start
        assert result.exit_code == 0, result.output
        assert elapsed < 10.0
        manifest = json.loads((tmp_path / "one" / "manifest.json").read_text())
        assert {e["name"]: e["sha256"] for e in manifest["stages"]} == golden_hashes

        result = runner.invoke(cli_main, ["run-all", "--out", str(tmp_path / "two")])
        assert result.exit_code == 0
        manifest_two = json.loads((tmp_path / "two" / "manifest.json").read_text())
        assert {e["name"]: e["sha256"] for e in manifest_two["stages"]} == golden_hashes
        _report(f"end-to-end determinism (run-all in {elapsed:.1f}s, pinned hashes reproduced)")

    def test_rag_scenario(self):
        index, embedder = seeded_index()
        exchange = answer(GERMAN_QUERY, index, rewrite_fixture_backend(), embedder, model="m")
        assert HOCKEY_FACT in exchange.system_prompt
        assert len(exchange.hits) == 3
        assert "Rhett Halkett" in exchange.answer and "6th of May 2023" in exchange.answer

        baseline = answer(GERMAN_QUERY, index, RuleChatBackend(), embedder, model="m", use_rag=False)
        assert baseline.hits == ()
        assert baseline.system_prompt == ""
        _report("RAG scenario (seeded fact verbatim in system prompt, 3 hits, no-rag baseline 0 hits)")
