"""Decompose motion descriptions into ordered action segments.

Shows the deterministic rule-based decomposer (no network needed) and how
an LLM endpoint would be wired in with an on-disk cache.  The endpoint call
here uses an injected fake transport so the demo runs offline.
"""

import tempfile

from segalign.textseg import (
    LlmEndpointConfig,
    fallback_decompose,
    llm_decompose,
    parse_segment_string,
)

texts = [
    "a person walks forward, then turns around, then sits down.",
    "a person runs quickly after walking in a circle.",
    "a person is bowing left and right.",
]

print("rule-based decomposition:")
for raw in texts:
    seg = fallback_decompose(raw)
    print(f"  {raw!r}")
    for i, s in enumerate(seg.segments):
        print(f"    [{i}] {s}")

# the '#'-joined format used by the endpoint protocol
joined = "a person jumps two times#a person waves the hands."
print(f"\nparsing a delimited string: {joined!r}")
print(" ", parse_segment_string(joined).segments)

# endpoint path with a fake transport and a cache file
cfg = LlmEndpointConfig(base_url="http://localhost:11434/v1/chat/completions",
                        model_name="demo-model")


def fake_transport(url, payload, timeout):
    print(f"  (endpoint called: {url}, model {payload['model']})")
    return "a person takes a box off the table#a person puts a box on the floor."


with tempfile.NamedTemporaryFile(suffix=".jsonl") as cache:
    raw = "a person takes a box off the table and puts it on the floor."
    print(f"\nendpoint decomposition of {raw!r}:")
    seg = llm_decompose(raw, cfg, cache_path=cache.name, transport=fake_transport)
    print(" ", seg.segments)
    print("second call replays from the cache (no endpoint line below):")
    seg2 = llm_decompose(raw, cfg, cache_path=cache.name, transport=fake_transport)
    assert seg2.segments == seg.segments
    print(" ", seg2.segments)
