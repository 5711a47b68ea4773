import json

import pytest
import requests

from segalign.textseg import (
    A_MAX,
    DECOMPOSE_PROMPT,
    LLM_URL_ENV_VAR,
    LlmEndpointConfig,
    MalformedResponseError,
    SegmentSource,
    SegmentValidationError,
    TransportError,
    fallback_decompose,
    llm_decompose,
    parse_segment_string,
)


class TestParseSegmentString:
    def test_two_actions(self):
        out = parse_segment_string("a person walks in a circle#a person runs quickly.")
        assert out.segments == ("a person walks in a circle", "a person runs quickly")

    def test_single_action_no_delimiter(self):
        out = parse_segment_string("a person is standing and waving the hands.")
        assert out.segments == ("a person is standing and waving the hands",)

    def test_too_many_segments(self):
        with pytest.raises(SegmentValidationError):
            parse_segment_string("#".join(f"a person acts {i}" for i in range(A_MAX + 1)))

    def test_max_segments_accepted(self):
        out = parse_segment_string("#".join(f"a person acts {i}" for i in range(A_MAX)))
        assert len(out.segments) == A_MAX

    def test_empty_piece_rejected(self):
        with pytest.raises(SegmentValidationError):
            parse_segment_string("a person walks##a person runs")

    def test_empty_string_rejected(self):
        with pytest.raises(SegmentValidationError):
            parse_segment_string("")

    def test_whitespace_trim_and_period(self):
        out = parse_segment_string("  a person walks . # a person sits  ")
        assert out.segments == ("a person walks", "a person sits")


class TestFallbackDecompose:
    def test_then_connective(self):
        out = fallback_decompose("a person walks forward, then turns around.")
        assert out.segments == ("a person walks forward", "a person turns around")
        assert out.source is SegmentSource.FALLBACK

    def test_after_swaps_order(self):
        out = fallback_decompose("a person runs quickly after walking in a circle.")
        assert out.segments == ("a person walking in a circle", "a person runs quickly")

    def test_single_action_passthrough(self):
        out = fallback_decompose("a person is bowing left and right.")
        assert out.segments == ("a person is bowing left and right",)

    def test_deterministic(self):
        raw = "a person jumps, and then walks, then sits down."
        assert fallback_decompose(raw) == fallback_decompose(raw)

    def test_empty_rejected(self):
        with pytest.raises(SegmentValidationError):
            fallback_decompose("")


def _ok_transport(answer):
    calls = []

    def transport(url, payload, timeout):
        calls.append((url, payload, timeout))
        return answer

    transport.calls = calls
    return transport


class TestLlmDecompose:
    CFG = LlmEndpointConfig(base_url="http://llm.example/v1/chat/completions",
                            model_name="test-model", max_retries=1)

    def test_prompt_and_payload(self):
        t = _ok_transport("a person walks#a person runs.")
        out = llm_decompose("a person walks then runs.", self.CFG, transport=t)
        assert out.segments == ("a person walks", "a person runs")
        assert out.source is SegmentSource.LLM
        url, payload, timeout = t.calls[0]
        assert url == self.CFG.base_url
        assert payload["model"] == "test-model"
        assert payload["messages"][0]["role"] == "user"
        assert payload["messages"][0]["content"] == DECOMPOSE_PROMPT + "a person walks then runs."
        assert timeout == self.CFG.timeout

    def test_env_var_overrides_url(self, monkeypatch):
        monkeypatch.setenv(LLM_URL_ENV_VAR, "http://other.example/chat")
        t = _ok_transport("a person waves.")
        llm_decompose("a person waves.", self.CFG, transport=t)
        assert t.calls[0][0] == "http://other.example/chat"

    def test_warm_cache_skips_network(self, tmp_path):
        cache = tmp_path / "cache.jsonl"
        cache.write_text(json.dumps({
            "model": "test-model",
            "input": "a person spins.",
            "output": "a person spins.",
        }) + "\n")

        def exploding(url, payload, timeout):
            raise AssertionError("network hit despite warm cache")

        out = llm_decompose("a person spins.", self.CFG, cache_path=str(cache),
                            transport=exploding)
        assert out.segments == ("a person spins",)

    def test_cache_written_on_success(self, tmp_path):
        cache = tmp_path / "cache.jsonl"
        t = _ok_transport("a person kicks#a person punches.")
        llm_decompose("a person kicks then punches.", self.CFG,
                      cache_path=str(cache), transport=t)
        entry = json.loads(cache.read_text().strip())
        assert entry == {
            "input": "a person kicks then punches.",
            "model": "test-model",
            "output": "a person kicks#a person punches.",
        }
        # second call replays from cache
        llm_decompose("a person kicks then punches.", self.CFG,
                      cache_path=str(cache), transport=t)
        assert len(t.calls) == 1

    def test_output_prefix_rejected(self):
        t = _ok_transport("Output: a person walks.")
        with pytest.raises(MalformedResponseError) as exc_info:
            llm_decompose("a person walks.", self.CFG, transport=t)
        assert exc_info.value.response_text == "Output: a person walks."

    def test_quoted_response_rejected(self):
        t = _ok_transport('"a person walks."')
        with pytest.raises(MalformedResponseError):
            llm_decompose("a person walks.", self.CFG, transport=t)

    def test_six_segments_rejected(self):
        t = _ok_transport("#".join(f"a person acts {i}" for i in range(6)))
        with pytest.raises(MalformedResponseError):
            llm_decompose("a person does many things.", self.CFG, transport=t)

    def test_retry_then_success(self):
        state = {"n": 0}

        def flaky(url, payload, timeout):
            state["n"] += 1
            if state["n"] == 1:
                raise requests.ConnectionError("boom")
            return "a person walks."

        out = llm_decompose("a person walks.", self.CFG, transport=flaky)
        assert out.segments == ("a person walks",)
        assert state["n"] == 2

    def test_unreachable_raises_transport_error(self):
        def dead(url, payload, timeout):
            raise requests.ConnectionError("refused")

        with pytest.raises(TransportError):
            llm_decompose("a person walks.", self.CFG, transport=dead)

    def test_malformed_not_cached(self, tmp_path):
        cache = tmp_path / "cache.jsonl"
        t = _ok_transport("Output: nope")
        with pytest.raises(MalformedResponseError):
            llm_decompose("a person walks.", self.CFG, cache_path=str(cache), transport=t)
        assert not cache.exists() or cache.read_text() == ""
