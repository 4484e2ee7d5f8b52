from __future__ import annotations

import random

import pytest

from apd.errors import VerdictParseError
from apd.gateway import ChatRequest
from apd.mockserver import RuleChatBackend, ScriptedChatBackend
from apd.safety import SafetyVerdict, classify, parse_guard_output


class TestParseGuardOutput:
    def test_safe(self):
        assert parse_guard_output("safe") == ("safe", frozenset())

    def test_unsafe_single_code(self):
        assert parse_guard_output("unsafe\nS5") == ("unsafe", frozenset({"S5"}))

    def test_unsafe_multiple_codes(self):
        assert parse_guard_output("unsafe\nS1,S10") == ("unsafe", frozenset({"S1", "S10"}))

    def test_case_and_whitespace_tolerated(self):
        assert parse_guard_output("  SAFE  ") == ("safe", frozenset())
        assert parse_guard_output("Unsafe\n s3 , S7 ") == ("unsafe", frozenset({"S3", "S7"}))

    def test_unsafe_without_categories(self):
        with pytest.raises(VerdictParseError):
            parse_guard_output("unsafe")

    def test_garbage_verdict(self):
        with pytest.raises(VerdictParseError):
            parse_guard_output("maybe?")

    def test_trailing_noise_rejected(self):
        with pytest.raises(VerdictParseError):
            parse_guard_output("safe\nbut actually")
        with pytest.raises(VerdictParseError):
            parse_guard_output("unsafe\nS1\nextra")

    def test_bad_category_codes(self):
        with pytest.raises(VerdictParseError):
            parse_guard_output("unsafe\nS1,X9")
        with pytest.raises(VerdictParseError):
            parse_guard_output("unsafe\nS1,,S2")

    def test_empty_reply(self):
        with pytest.raises(VerdictParseError):
            parse_guard_output("   ")

    def test_never_unsafe_with_empty_categories(self):
        rng = random.Random(13)
        corpus = ["safe", "unsafe\nS1", "unsafe\nS2,S3", "unsafe", "junk", "safe\nx", "unsafe\n"]
        for _ in range(500):
            raw = rng.choice(corpus)
            try:
                verdict, categories = parse_guard_output(raw)
            except VerdictParseError:
                continue
            if verdict == "unsafe":
                assert categories
            else:
                assert not categories


class TestClassify:
    def test_safe_reply(self):
        backend = ScriptedChatBackend(["safe"])
        verdict = classify("harmless text", "text", backend, model="guard-x")
        assert verdict == SafetyVerdict(verdict="safe", categories=frozenset(), subject="text")
        assert backend.requests[0].model == "guard-x"
        assert backend.requests[0].messages == [{"role": "user", "content": "harmless text"}]

    def test_unsafe_reply(self):
        backend = ScriptedChatBackend(["unsafe\nS1,S10"])
        verdict = classify("bad text", "text", backend, model="guard-x")
        assert verdict.is_unsafe and verdict.categories == frozenset({"S1", "S10"})

    def test_domain_subject_recorded(self):
        backend = ScriptedChatBackend(["safe"])
        verdict = classify("example.com", "domain", backend, model="guard-x")
        assert verdict.subject == "domain"

    def test_unparseable_verdict(self):
        backend = ScriptedChatBackend(["maybe?"])
        with pytest.raises(VerdictParseError):
            classify("text", "text", backend, model="guard-x")

    def test_empty_subject_rejected(self):
        with pytest.raises(ValueError):
            classify("   ", "text", ScriptedChatBackend([]), model="guard-x")

    def test_bad_subject_kind(self):
        with pytest.raises(ValueError):
            classify("text", "paragraph", ScriptedChatBackend([]), model="guard-x")

    def test_deterministic_with_deterministic_backend(self):
        one = classify("contains weapon plans", "text", RuleChatBackend(guard_model="g"), model="g")
        two = classify("contains weapon plans", "text", RuleChatBackend(guard_model="g"), model="g")
        assert one == two

    def test_conservation_over_fixture_corpus(self):
        # exactly the subjects carrying a guard marker come back unsafe
        backend = RuleChatBackend(guard_model="g")
        subjects = [f"plain document number {i} about gardening and weather" for i in range(17)]
        unsafe_subjects = [f"{i}: essay praising violence in the streets" for i in range(5)]
        verdicts = [classify(s, "text", backend, model="g") for s in subjects + unsafe_subjects]
        assert sum(v.is_unsafe for v in verdicts) == len(unsafe_subjects)
        assert len(verdicts) == len(subjects) + len(unsafe_subjects)


class TestGuardRequestShape:
    def test_single_user_turn(self):
        backend = ScriptedChatBackend(["safe"])
        classify("document body", "text", backend, model="g")
        request: ChatRequest = backend.requests[0]
        assert [m["role"] for m in request.messages] == ["user"]
        assert request.temperature == 0.0
