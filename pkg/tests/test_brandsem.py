import json

import pytest

from sevi.brandsem import (OfflineFixtureClient, ReferenceDb, S2_PARAMS,
                           TierAssignment, VlmRequest, brand_counts,
                           build_prompts, classify, decode_corpus, evaluate,
                           harmonic_f1, load_corpus, load_labeled_pairs,
                           normalize_brand, parse_model_json,
                           report_from_tier_metrics, request_hash, tally_by_point)
from sevi.exceptions import ModelOutputError, TransportError, ValidationError
from sevi.geodata import BrandTally

DB = ReferenceDb.from_mapping({
    "Starbucks": {"tier": "International", "aliases": ["星巴克", "STARBUCKS COFFEE"]},
    "Jinling Teahouse": {"tier": "Local", "aliases": ["金陵茶馆"]},
    "Corner Grocery": {"tier": "Ordinary", "aliases": []},
})


class _ExplodingClient:
    def complete(self, request):
        raise AssertionError("client must not be called")


class _RecordingClient:
    def __init__(self, answer_json):
        self.answer = answer_json
        self.requests = []

    def complete(self, request):
        self.requests.append(request)
        return self.answer


# ---------------------------------------------------------------------------
# prompts
# ---------------------------------------------------------------------------

def test_prompts_deterministic():
    a = build_prompts("img1", DB, ["X", "Y"])
    b = build_prompts("img1", DB, ["X", "Y"])
    assert a == b


def test_empty_db_marker():
    _, s2 = build_prompts("img1", ReferenceDb(), ["X"])
    assert "(reference database is empty)" in s2


def test_db_names_appear_verbatim():
    _, s2 = build_prompts("img1", DB, [])
    for name in ("Starbucks", "Jinling Teahouse", "Corner Grocery"):
        assert name in s2


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def test_parse_s1_empty_list():
    resp = parse_model_json('{"brands_found": [], "summary": "none"}', "s1")
    assert resp.brands_found == []
    assert resp.summary == "none"


def test_parse_fenced_equals_unfenced():
    raw = '{"brands_found": ["A"], "summary": "s"}'
    fenced = f"```json\n{raw}\n```"
    assert parse_model_json(fenced, "s1").brands_found == \
           parse_model_json(raw, "s1").brands_found


def test_parse_s2_single_assignment():
    assert parse_model_json('{"Starbucks": "International"}', "s2") == \
           {"Starbucks": "International"}


def test_parse_rejects_unknown_keys():
    with pytest.raises(ModelOutputError):
        parse_model_json('{"brands_found": [], "summary": "s", "extra": 1}', "s1")


def test_parse_rejects_unknown_tier():
    with pytest.raises(ModelOutputError):
        parse_model_json('{"X": "Premium"}', "s2")


def test_parse_rejects_non_string_brands():
    with pytest.raises(ModelOutputError):
        parse_model_json('{"brands_found": [1], "summary": "s"}', "s1")


def test_parse_error_carries_raw_text():
    with pytest.raises(ModelOutputError) as err:
        parse_model_json("not json at all", "s1")
    assert err.value.raw == "not json at all"


# ---------------------------------------------------------------------------
# reference db
# ---------------------------------------------------------------------------

def test_alias_collision_rejected():
    with pytest.raises(ValidationError, match="maps to both"):
        ReferenceDb.from_mapping({
            "A": {"tier": "Local", "aliases": ["shared"]},
            "B": {"tier": "Ordinary", "aliases": ["SHARED"]},
        })


def test_normalization_rules():
    assert normalize_brand("  Star  Bucks  ") == "star bucks"
    assert DB.resolve("sTARBUCKS   coffee") == ("Starbucks", "International")
    assert DB.resolve("星巴克") == ("Starbucks", "International")
    assert DB.resolve("unknown thing") is None


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def test_alias_hit_skips_client():
    assignment = classify(["星巴克", "corner grocery"], DB, _ExplodingClient())
    assert assignment.tiers == {"星巴克": "International", "corner grocery": "Ordinary"}
    assert set(assignment.provenance.values()) == {"reference-db"}


def test_empty_input_skips_client():
    assignment = classify([], DB, _ExplodingClient())
    assert assignment.tiers == {}


def test_batched_model_call_and_fixture_match():
    answer = json.dumps({"New Cafe": "Local", "Mega Chain": "International",
                         "Side Stall": "Ordinary", "Odd Shop": "Ordinary",
                         "Fifth Brand": "Local"})
    client = _RecordingClient(answer)
    raw = ["New Cafe", "Mega Chain", "Side Stall", "Odd Shop", "Fifth Brand"]
    assignment = classify(raw, DB, client)
    assert len(client.requests) == 1  # one batched call
    assert client.requests[0].stage == "s2"
    assert client.requests[0].params == S2_PARAMS
    assert assignment.tiers == json.loads(answer)
    assert set(assignment.provenance.values()) == {"model"}


def test_unresolved_defaults_to_ordinary_with_flag():
    client = _RecordingClient(json.dumps({"Known": "Local"}))
    assignment = classify(["Known", "Ghost Sign"], DB, client)
    assert assignment.tiers["Ghost Sign"] == "Ordinary"
    assert assignment.provenance["Ghost Sign"] == "default"
    assert assignment.unresolved == ["Ghost Sign"]


def test_never_fewer_assignments_than_inputs():
    client = _RecordingClient(json.dumps({}))
    raw = ["A", "B", "C"]
    assignment = classify(raw, DB, client)
    assert set(assignment.tiers) == set(raw)


def test_fixture_miss_is_an_error():
    client = OfflineFixtureClient({})
    request = VlmRequest(image_ref="img", prompt="p", params=S2_PARAMS, stage="s2")
    with pytest.raises(TransportError, match="no offline fixture"):
        client.complete(request)


def test_request_hash_sensitive_to_prompt():
    a = VlmRequest(image_ref="img", prompt="p1", params=S2_PARAMS, stage="s2")
    b = VlmRequest(image_ref="img", prompt="p2", params=S2_PARAMS, stage="s2")
    assert request_hash(a) != request_hash(b)
    assert request_hash(a) == request_hash(a)


# ---------------------------------------------------------------------------
# tallies
# ---------------------------------------------------------------------------

def test_brand_counts_all_ordinary():
    assignment = TierAssignment(tiers={f"b{i}": "Ordinary" for i in range(4)})
    assert brand_counts(assignment) == BrandTally(n_ordinary=4)


def test_brand_counts_mixed_hand_tally():
    assignment = TierAssignment(tiers={"a": "Local", "b": "International",
                                       "c": "Local", "d": "Ordinary"})
    assert brand_counts(assignment) == BrandTally(n_local=2, n_international=1, n_ordinary=1)


def test_brand_counts_empty():
    assert brand_counts(TierAssignment()) == BrandTally()


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def test_perfect_predictions_score_one():
    gt = {"img1": {("starbucks", "International"), ("corner grocery", "Ordinary")},
          "img2": {("jinling teahouse", "Local")}}
    rep = evaluate(gt, gt)
    for tier in ("International", "Local", "Ordinary"):
        assert rep.per_tier[tier].precision == 1.0
        assert rep.per_tier[tier].recall == 1.0
        assert rep.per_tier[tier].f1 == 1.0
    assert rep.overall.f1 == 1.0


def test_image_id_mismatch_rejected():
    gt = {"img1": {("a", "Local")}}
    pred = {"img2": {("a", "Local")}}
    with pytest.raises(ValidationError, match="image id mismatch"):
        evaluate(pred, gt)


def test_f1_identity_and_paper_spot_check():
    assert harmonic_f1(0.802, 0.737) == pytest.approx(0.768, abs=1e-3)
    assert harmonic_f1(0.0, 0.0) == 0.0
    rep = report_from_tier_metrics({
        "International": (0.802, 0.737), "Ordinary": (1.000, 0.852),
        "Local": (0.939, 0.660)})
    for m in rep.per_tier.values():
        if m.precision + m.recall:
            assert m.f1 == pytest.approx(
                2 * m.precision * m.recall / (m.precision + m.recall), abs=1e-9)


def test_adding_correct_prediction_never_decreases_recall():
    gt = {"img1": {("a", "Local"), ("b", "Local")}}
    sparse = {"img1": {("a", "Local")}}
    fuller = {"img1": {("a", "Local"), ("b", "Local")}}
    assert evaluate(fuller, gt).per_tier["Local"].recall >= \
           evaluate(sparse, gt).per_tier["Local"].recall


def test_adding_incorrect_prediction_never_increases_precision():
    gt = {"img1": {("a", "Local")}}
    clean = {"img1": {("a", "Local")}}
    noisy = {"img1": {("a", "Local"), ("zzz", "Local")}}
    assert evaluate(noisy, gt).per_tier["Local"].precision <= \
           evaluate(clean, gt).per_tier["Local"].precision


def test_evaluation_normalizes_brand_names():
    gt = {"img1": {("Starbucks", "International")}}
    pred = {"img1": {("  STARBUCKS ", "International")}}
    rep = evaluate(pred, gt)
    assert rep.per_tier["International"].f1 == 1.0


# ---------------------------------------------------------------------------
# corpus decoding over offline fixtures
# ---------------------------------------------------------------------------

def test_offline_decode_is_total_and_deterministic(corpus_dir):
    db = ReferenceDb.from_json(corpus_dir / "reference_db.json")
    client = OfflineFixtureClient.from_json(corpus_dir / "fixtures.json")
    corpus = load_corpus(corpus_dir / "corpus.csv")
    assert len(corpus) == 50

    decoded_a = decode_corpus(corpus, db, client)
    decoded_b = decode_corpus(corpus, db, client)
    assert decoded_a == decoded_b
    assert [d.image_id for d in decoded_a] == sorted(d.image_id for d in decoded_a)

    total_brands = sum(len(d.assignment.tiers) for d in decoded_a)
    assert total_brands > 0
    for d in decoded_a:
        for brand, tier in d.assignment.tiers.items():
            assert tier in ("International", "Local", "Ordinary")
    # the planted silent brand is defaulted and flagged, never dropped
    flagged = [b for d in decoded_a for b in d.assignment.unresolved]
    assert all(b == "Mystery Sign 9" for b in flagged)
    assert flagged  # the corpus plants at least one

    tally = tally_by_point(decoded_a)
    assert sum(t.n_local + t.n_international + t.n_ordinary
               for t in tally.values()) == total_brands


def test_malformed_fixture_never_silently_empty(corpus_dir):
    db = ReferenceDb.from_json(corpus_dir / "reference_db.json")
    client = OfflineFixtureClient.from_json(corpus_dir / "fixtures.json")
    # corrupt one fixture in memory
    key = sorted(client.fixtures)[0]
    client.fixtures[key] = "garbage {{{"
    with pytest.raises((ModelOutputError, TransportError)):
        decode_corpus(load_corpus(corpus_dir / "corpus.csv"), db, client)


def test_load_labeled_pairs_and_eval_against_plant(corpus_dir):
    gt = load_labeled_pairs(corpus_dir / "ground_truth.csv")
    pred = load_labeled_pairs(corpus_dir / "predictions.csv")
    for image_id in gt:
        pred.setdefault(image_id, set())
    rep = evaluate(pred, gt)
    # degraded predictions must score strictly between chance and perfection
    assert 0.3 < rep.overall.f1 < 1.0
    assert all(0.0 <= m.recall <= 1.0 and 0.0 <= m.precision <= 1.0
               for m in rep.per_tier.values())
