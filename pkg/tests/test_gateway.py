from __future__ import annotations

import csv
import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from apd.errors import (
    EmptyResponse,
    GatewayError,
    IncompleteOutput,
    MalformedCsv,
    NoFenceError,
    ParseError,
    UnknownFlag,
)
from apd.gateway import (
    ChatRequest,
    FlagRecord,
    GatewayConfig,
    chat,
    complete_with_repair,
    extract_fenced,
    parse_flag_csv,
    wrap_in_fence,
)
from apd.mockserver import ScriptedChatBackend


class _ScriptedHandler(BaseHTTPRequestHandler):
    def log_message(self, fmt, *args):
        pass

    def do_POST(self):
        self.rfile.read(int(self.headers.get("Content-Length", 0)))
        self.server.request_count += 1  # type: ignore[attr-defined]
        script = self.server.script  # type: ignore[attr-defined]
        status, content = script.pop(0) if script else (500, None)
        if status == 200:
            body = json.dumps({"choices": [{"message": {"content": content}}]}).encode()
        else:
            body = json.dumps({"error": {"message": "scripted failure"}}).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class ScriptedHttp:
    """HTTP stub returning a fixed sequence of (status, content) responses."""

    def __init__(self, script):
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), _ScriptedHandler)
        self.httpd.script = list(script)  # type: ignore[attr-defined]
        self.httpd.request_count = 0  # type: ignore[attr-defined]
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def base_url(self):
        return f"http://127.0.0.1:{self.httpd.server_address[1]}"

    @property
    def request_count(self):
        return self.httpd.request_count  # type: ignore[attr-defined]

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def scripted_http():
    servers = []

    def factory(script):
        server = ScriptedHttp(script)
        servers.append(server)
        return server

    yield factory
    for server in servers:
        server.stop()


def _request(text="ping"):
    return ChatRequest(model="m", messages=[{"role": "user", "content": text}])


def _config(base_url, retry_limit=3):
    return GatewayConfig(base_url=base_url, api_key="k", retry_limit=retry_limit, backoff_base=0.0)


class TestChat:
    def test_echo(self, scripted_http):
        server = scripted_http([(200, "pong")])
        assert chat(_request(), _config(server.base_url)) == "pong"
        assert server.request_count == 1

    def test_retry_on_429_then_success(self, scripted_http):
        server = scripted_http([(429, None), (429, None), (200, "ok")])
        assert chat(_request(), _config(server.base_url)) == "ok"
        assert server.request_count == 3

    def test_budget_exhausted_on_500(self, scripted_http):
        server = scripted_http([(500, None)] * 4)
        with pytest.raises(GatewayError):
            chat(_request(), _config(server.base_url, retry_limit=3))
        assert server.request_count == 4

    def test_hard_4xx_fails_immediately(self, scripted_http):
        server = scripted_http([(404, None)])
        with pytest.raises(GatewayError):
            chat(_request(), _config(server.base_url))
        assert server.request_count == 1

    def test_empty_content(self, scripted_http):
        server = scripted_http([(200, "")])
        with pytest.raises(EmptyResponse):
            chat(_request(), _config(server.base_url))

    def test_transport_error_retried_then_raised(self):
        config = _config("http://127.0.0.1:9", retry_limit=1)
        with pytest.raises(GatewayError):
            chat(_request(), config)

    def test_never_more_than_limit_plus_one_requests(self, scripted_http):
        server = scripted_http([(500, None)] * 10)
        with pytest.raises(GatewayError):
            chat(_request(), _config(server.base_url, retry_limit=2))
        assert server.request_count == 3


class TestRequestValidation:
    def test_empty_messages(self):
        with pytest.raises(ValueError):
            ChatRequest(model="m", messages=[])

    def test_first_role(self):
        with pytest.raises(ValueError):
            ChatRequest(model="m", messages=[{"role": "assistant", "content": "x"}])

    def test_temperature_range(self):
        with pytest.raises(ValueError):
            ChatRequest(model="m", messages=[{"role": "user", "content": "x"}], temperature=1.5)

    def test_retry_limit_cap(self):
        with pytest.raises(ValueError):
            GatewayConfig(base_url="http://x", retry_limit=6)


class TestExtractFenced:
    def test_language_tag_stripped(self):
        assert extract_fenced("```csv\na1, safe\n```") == "a1, safe"

    def test_first_fence_wins(self):
        assert extract_fenced("noise ```x``` more ```y```") == "x"

    def test_no_fence(self):
        with pytest.raises(NoFenceError):
            extract_fenced("no fences here")

    def test_unclosed_fence(self):
        with pytest.raises(NoFenceError):
            extract_fenced("```abc")

    def test_csv_first_line_kept(self):
        inner = extract_fenced("```id, flags, flag_reason\na1, safe, ok\n```")
        assert inner.startswith("id, flags, flag_reason")

    @given(st.text(alphabet=st.sampled_from(list("abc \n,0")), max_size=80))
    def test_fence_wrap_identity(self, s):
        s = s.strip()
        assert extract_fenced(wrap_in_fence(s)) == s


class TestParseFlagCsv:
    def test_single_safe_line(self):
        records = parse_flag_csv('a1, "safe", "No flags"', {"a1"}, {"safe", "scam", "spam"})
        assert records == [FlagRecord(row_id="a1", stage="undesirable", flags=frozenset({"safe"}), reason="No flags")]

    def test_multi_flag_line(self):
        records = parse_flag_csv(
            'a2, "scam,spam", "Suggests a potential crime"', {"a2"}, {"safe", "scam", "spam"}
        )
        assert records[0].flags == frozenset({"scam", "spam"})
        assert records[0].reason == "Suggests a potential crime"

    def test_header_tolerated(self):
        records = parse_flag_csv('id, flags, flag_reason\na1, "safe", "No flags"', {"a1"}, {"safe"})
        assert len(records) == 1

    def test_missing_id(self):
        with pytest.raises(IncompleteOutput):
            parse_flag_csv('a1, "safe", "No flags"', {"a1", "a3"}, {"safe"})

    def test_duplicate_id(self):
        with pytest.raises(IncompleteOutput):
            parse_flag_csv('a1, "safe", "x"\na1, "safe", "x"', {"a1"}, {"safe"})

    def test_unexpected_id(self):
        with pytest.raises(IncompleteOutput):
            parse_flag_csv('a9, "safe", "x"', {"a1"}, {"safe"})

    def test_unknown_flag(self):
        with pytest.raises(UnknownFlag):
            parse_flag_csv('a1, "weird", "x"', {"a1"}, {"safe", "scam"})

    def test_wrong_field_count(self):
        with pytest.raises(MalformedCsv):
            parse_flag_csv("a1, safe", {"a1"}, {"safe"})

    def test_missing_reason_for_flagged_row(self):
        with pytest.raises(MalformedCsv):
            parse_flag_csv('a1, "scam", ""', {"a1"}, {"safe", "scam"})

    def test_flags_lowercased(self):
        records = parse_flag_csv('a1, "SCAM", "reason"', {"a1"}, {"safe", "scam"})
        assert records[0].flags == frozenset({"scam"})

    @given(
        st.dictionaries(
            st.integers(min_value=0, max_value=20).map(lambda i: f"a{i + 1}"),
            st.frozensets(st.sampled_from(["scam", "spam", "lottery", "biased"]), min_size=1, max_size=3),
            min_size=1,
            max_size=8,
        )
    )
    def test_round_trip_with_writer_quoting(self, assignment):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for row_id, flags in assignment.items():
            writer.writerow([row_id, ",".join(sorted(flags)), "some reason, quoted"])
        records = parse_flag_csv(
            buf.getvalue(), set(assignment), {"safe", "scam", "spam", "lottery", "biased"}
        )
        assert {r.row_id: r.flags for r in records} == {k: frozenset(v) for k, v in assignment.items()}


class TestFlagRecord:
    def test_safe_exclusive(self):
        with pytest.raises(ValueError):
            FlagRecord(row_id="a1", stage="undesirable", flags=frozenset({"safe", "scam"}), reason="r")

    def test_empty_flags(self):
        with pytest.raises(ValueError):
            FlagRecord(row_id="a1", stage="undesirable", flags=frozenset(), reason="r")

    def test_reason_required_when_flagged(self):
        with pytest.raises(ValueError):
            FlagRecord(row_id="a1", stage="undesirable", flags=frozenset({"scam"}))


class TestCompleteWithRepair:
    def _parse(self, reply):
        if reply != "good":
            raise MalformedCsv("not good")
        return "parsed"

    def test_repairs_then_succeeds(self):
        backend = ScriptedChatBackend(["bad", "bad", "good"])
        assert complete_with_repair(backend, _request(), self._parse) == "parsed"
        assert len(backend.requests) == 3
        # corrective turn names the violation and carries the bad reply
        last = backend.requests[-1].messages
        assert last[-2] == {"role": "assistant", "content": "bad"}
        assert "not good" in last[-1]["content"]

    def test_raises_after_exhausted_repairs(self):
        backend = ScriptedChatBackend(["bad", "bad", "bad"])
        with pytest.raises(ParseError):
            complete_with_repair(backend, _request(), self._parse)
        assert len(backend.requests) == 3

    def test_no_repair_needed(self):
        backend = ScriptedChatBackend(["good"])
        assert complete_with_repair(backend, _request(), self._parse) == "parsed"
        assert len(backend.requests) == 1
