"""Backend contract: synthetic determinism, HTTP client behaviour, replay."""

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from lanefuse.backends import (
    DEFAULT_CATALOG,
    FACTOR_PROMPTS,
    LANE_CLARITY_PROMPT_ID,
    PROMPT_TEXTS,
    PromptCatalog,
    RemoteScorer,
    ReplayScorer,
    Scenario,
    ScorerRequest,
    SyntheticScorer,
    collect_assessment,
    parse_response,
    synthetic_score,
    write_replay_log,
)
from lanefuse.confidence import with_confidence
from lanefuse.errors import (
    ConfigError,
    ProtocolError,
    ReplayMissError,
    ResponseValidationError,
    TransportError,
)
from lanefuse.scoring import FactorKind

F = FactorKind

CLEAN = Scenario(name="clean", factor_ranges={F.LANE_VISIBILITY: (9, 10)})
DEGRADED = Scenario(
    name="degraded",
    factor_ranges={F.LANE_VISIBILITY: (2, 4), F.BLUR_DAY: (4, 6)},
    noise_sigma=0.5,
)


def test_catalog_invariants():
    assert len(DEFAULT_CATALOG.prompts) == 12
    assert set(DEFAULT_CATALOG.factor_binding) == set(FactorKind)
    assert "Q1" not in DEFAULT_CATALOG.factor_binding.values()
    assert len(set(DEFAULT_CATALOG.factor_binding.values())) == 11
    with pytest.raises(ConfigError):
        PromptCatalog(prompts={"Q1": "x"}, factor_binding=FACTOR_PROMPTS)
    bad_binding = dict(FACTOR_PROMPTS)
    bad_binding[F.RAIN] = "Q1"
    with pytest.raises(ConfigError):
        PromptCatalog(prompts=PROMPT_TEXTS, factor_binding=bad_binding)


def test_synthetic_clean_scenario_values():
    for k in range(20):
        resp = synthetic_score(CLEAN, 0, f"img{k}", FACTOR_PROMPTS[F.BLUR_DAY])
        assert resp.score == 0
        clarity = synthetic_score(CLEAN, 0, f"img{k}", LANE_CLARITY_PROMPT_ID, "clarity")
        assert clarity.l_clear is not None
        backend = SyntheticScorer(CLEAN, seed=0)
        assessment = collect_assessment(backend, f"img{k}")
        assert assessment.lane_visibility in (9, 10)
        assert all(v == 0 for v in assessment.factor_scores.values())


def test_synthetic_is_deterministic():
    a = synthetic_score(DEGRADED, 5, "img", "Q2")
    b = synthetic_score(DEGRADED, 5, "img", "Q2")
    assert a == b
    # distinct keys draw from distinct streams: across many images the
    # degraded blur range must show more than one value
    scores = {synthetic_score(DEGRADED, 5, f"img{k}", "Q2").score for k in range(60)}
    assert len(scores) > 1


def test_synthetic_respects_ranges_over_seed_sweep():
    for seed in range(100):
        resp = synthetic_score(DEGRADED, seed, "img", FACTOR_PROMPTS[F.BLUR_DAY])
        assert resp.score in (4, 5, 6)
        vis = synthetic_score(DEGRADED, seed, "img", LANE_CLARITY_PROMPT_ID, "clarity")
        backend = SyntheticScorer(DEGRADED, seed=seed)
        assessment = collect_assessment(backend, "img")
        assert assessment.lane_visibility in (2, 3, 4)
        assert assessment.factor_scores[F.BLUR_DAY] in (4, 5, 6)


def test_synthetic_logits_mode_flows_through_softmax():
    resp = synthetic_score(DEGRADED, 1, "img", "Q2", mode="logits")
    assert resp.logits is not None
    assert max(resp.logits.values) == 50.0


# --- remote client -----------------------------------------------------------


class _StubHandler(BaseHTTPRequestHandler):
    behaviors = {}  # prompt_id -> callable(body) -> (status, payload)
    calls = []

    def do_POST(self):
        n = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(n))
        type(self).calls.append(body)
        behavior = self.behaviors.get(body["prompt_id"], _default_behavior)
        status, payload = behavior(body)
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def _default_behavior(body):
    if body["mode"] == "direct":
        return 200, {"mode": "direct", "score": 7, "model": "stub"}
    if body["mode"] == "logits":
        return 200, {"mode": "logits", "logits": [0.0] * 8 + [50.0] + [0.0] * 2}
    return 200, {"mode": "clarity", "l_clear": 1.5}


@pytest.fixture
def stub_server():
    _StubHandler.behaviors = {}
    _StubHandler.calls = []
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/score", _StubHandler
    server.shutdown()


def test_remote_direct_roundtrip(stub_server):
    url, handler = stub_server
    scorer = RemoteScorer(url, backoff=0.01)
    resp = scorer.score(ScorerRequest(image="a.jpg", prompt_id="Q12", mode="direct"))
    assert resp.score == 7
    assert resp.model == "stub"
    sent = handler.calls[-1]
    assert sent["prompt"] == PROMPT_TEXTS["Q12"]


def test_remote_logits_forwarded_unmodified(stub_server):
    url, _ = stub_server
    scorer = RemoteScorer(url, backoff=0.01)
    resp = scorer.score(ScorerRequest(image="a.jpg", prompt_id="Q2", mode="logits"))
    assert resp.logits.values[8] == 50.0


def test_remote_out_of_range_score_is_validation_error(stub_server):
    url, handler = stub_server
    handler.behaviors["Q2"] = lambda body: (200, {"mode": "direct", "score": 14})
    scorer = RemoteScorer(url, backoff=0.01)
    with pytest.raises(ResponseValidationError):
        scorer.score(ScorerRequest(image="a.jpg", prompt_id="Q2"))


def test_remote_malformed_response_is_protocol_error(stub_server):
    url, handler = stub_server
    handler.behaviors["Q3"] = lambda body: (200, {"mode": "direct"})
    handler.behaviors["Q4"] = lambda body: (200, {"mode": "logits", "score": 3})
    scorer = RemoteScorer(url, backoff=0.01)
    with pytest.raises(ProtocolError):
        scorer.score(ScorerRequest(image="a.jpg", prompt_id="Q3"))
    with pytest.raises(ProtocolError):  # mode mismatch
        scorer.score(ScorerRequest(image="a.jpg", prompt_id="Q4"))


def test_remote_retries_transient_failures_then_succeeds(stub_server):
    url, handler = stub_server
    attempts = []

    def flaky(body):
        attempts.append(1)
        if len(attempts) < 3:
            return 503, {"error": "busy"}
        return 200, {"mode": "direct", "score": 4}

    handler.behaviors["Q5"] = flaky
    scorer = RemoteScorer(url, backoff=0.001)
    resp = scorer.score(ScorerRequest(image="a.jpg", prompt_id="Q5"))
    assert resp.score == 4
    assert len(attempts) == 3


def test_remote_gives_up_after_max_retries(stub_server):
    url, handler = stub_server
    handler.behaviors["Q6"] = lambda body: (500, {"error": "down"})
    scorer = RemoteScorer(url, max_retries=2, backoff=0.001)
    with pytest.raises(TransportError):
        scorer.score(ScorerRequest(image="a.jpg", prompt_id="Q6"))
    assert len([c for c in handler.calls if c["prompt_id"] == "Q6"]) == 3


def test_remote_unreachable_endpoint_is_transport_error():
    scorer = RemoteScorer("http://127.0.0.1:9/score", max_retries=1, backoff=0.001, timeout=0.2)
    with pytest.raises(TransportError):
        scorer.score(ScorerRequest(image="a.jpg", prompt_id="Q2"))


def test_remote_score_many_in_order(stub_server):
    url, handler = stub_server
    handler.behaviors["Q2"] = lambda body: (200, {"mode": "direct", "score": 2})
    handler.behaviors["Q3"] = lambda body: (200, {"mode": "direct", "score": 3})
    scorer = RemoteScorer(url, max_in_flight=3, backoff=0.01)
    reqs = [
        ScorerRequest(image="a.jpg", prompt_id="Q2"),
        ScorerRequest(image="a.jpg", prompt_id="Q3"),
        ScorerRequest(image="b.jpg", prompt_id="Q2"),
    ]
    out = scorer.score_many(reqs)
    assert [r.score for r in out] == [2, 3, 2]


# --- replay ------------------------------------------------------------------


def test_record_then_replay_matches_live(tmp_path, stub_server):
    url, _ = stub_server
    log = tmp_path / "log.jsonl"
    scorer = RemoteScorer(url, log_path=log, backoff=0.01)
    request = ScorerRequest(image="a.jpg", prompt_id="Q12", mode="direct")
    clarity_req = ScorerRequest(image="a.jpg", prompt_id=LANE_CLARITY_PROMPT_ID, mode="clarity")
    live = scorer.score(request)
    live_clarity = scorer.score(clarity_req)
    replay = ReplayScorer(log)
    assert replay.score(request) == live
    assert replay.score(clarity_req) == live_clarity
    with pytest.raises(ReplayMissError):
        replay.score(ScorerRequest(image="other.jpg", prompt_id="Q12"))


def test_full_pipeline_identical_live_vs_replay(tmp_path, stub_server):
    url, _ = stub_server
    log = tmp_path / "log.jsonl"
    live_backend = RemoteScorer(url, log_path=log, backoff=0.01)
    live = with_confidence(collect_assessment(live_backend, "img1"))
    replayed = with_confidence(collect_assessment(ReplayScorer(log), "img1"))
    assert replayed == live


def test_replay_log_preserves_bytes(tmp_path):
    request = ScorerRequest(image="x.jpg", prompt_id="Q2", mode="direct")
    write_replay_log(tmp_path / "log.jsonl", [(request, {"mode": "direct", "score": 3})])
    replay = ReplayScorer(tmp_path / "log.jsonl")
    assert replay.raw_body(request) == '{"mode": "direct", "score": 3}'
    assert replay.score(request).score == 3


def test_replay_missing_log_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        ReplayScorer(tmp_path / "nope.jsonl")


def test_parse_response_rejects_unknown_mode():
    with pytest.raises(ProtocolError):
        parse_response({"mode": "direct", "score": 3}, "logits")
    with pytest.raises(ProtocolError):
        parse_response({"score": 3}, "direct")
