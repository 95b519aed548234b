"""Dual-stage brand decoding over an abstract remote-model client, tier
classification against a reference database, and pipeline evaluation.

Stage 1 transcribes visible signage text into a strict two-key JSON object;
stage 2 rectifies and classifies the raw strings into brand tiers. All
tests and the bundled pipelines run against the deterministic offline
fixture backend; the live HTTP backend reads its endpoint, token, and model
name from environment variables only.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .exceptions import ModelOutputError, TransportError, ValidationError
from .geodata import BrandTally

TIERS = ("International", "Local", "Ordinary")

ENV_ENDPOINT = "SEVI_BRAND_ENDPOINT"
ENV_TOKEN = "SEVI_BRAND_TOKEN"
ENV_MODEL = "SEVI_BRAND_MODEL"

PROMPT_VERSION = "v1"

_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*\n(.*?)\n?```\s*$", re.DOTALL)
_WS_RE = re.compile(r"\s+")


def normalize_brand(text: str) -> str:
    """Canonical form for matching: casefold, trim, collapse whitespace."""
    return _WS_RE.sub(" ", text.strip()).casefold()


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    top_p: float = 1.0
    max_new_tokens: int = 64
    do_sample: bool = False

    def as_dict(self) -> dict:
        return {"temperature": self.temperature, "top_p": self.top_p,
                "max_new_tokens": self.max_new_tokens, "do_sample": self.do_sample}


S1_PARAMS = GenerationParams(max_new_tokens=64)
S2_PARAMS = GenerationParams(max_new_tokens=128)


@dataclass(frozen=True)
class VlmRequest:
    image_ref: str
    prompt: str
    params: GenerationParams
    stage: str  # "s1" | "s2"


@dataclass
class VlmResponse:
    brands_found: list[str]
    summary: str


def request_hash(request: VlmRequest) -> str:
    payload = json.dumps(
        {"image_ref": request.image_ref, "prompt": request.prompt,
         "stage": request.stage, "params": request.params.as_dict(),
         "version": PROMPT_VERSION},
        sort_keys=True, separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# reference database
# ---------------------------------------------------------------------------

@dataclass
class ReferenceDb:
    """Canonical brand names with tiers and alias lists.

    Canonical names and aliases share one lookup namespace; an alias mapping
    to two canonical entries is a load error.
    """

    entries: dict[str, tuple[str, list[str]]] = field(default_factory=dict)
    _lookup: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ReferenceDb":
        db = cls()
        for canonical in sorted(mapping):
            spec = mapping[canonical]
            tier = spec.get("tier")
            if tier not in TIERS:
                raise ValidationError(
                    f"reference db entry {canonical!r}: unknown tier {tier!r}"
                )
            aliases = list(spec.get("aliases", []))
            db.entries[canonical] = (tier, aliases)
            for name in [canonical, *aliases]:
                key = normalize_brand(name)
                if not key:
                    raise ValidationError(f"reference db entry {canonical!r}: empty alias")
                if key in db._lookup and db._lookup[key] != canonical:
                    raise ValidationError(
                        f"alias {name!r} maps to both {db._lookup[key]!r} and {canonical!r}"
                    )
                db._lookup[key] = canonical
        return db

    @classmethod
    def from_json(cls, path) -> "ReferenceDb":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                mapping = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read reference db {path}: {exc}") from exc
        return cls.from_mapping(mapping)

    def resolve(self, raw: str) -> tuple[str, str] | None:
        """(canonical name, tier) for a raw brand string, or None."""
        canonical = self._lookup.get(normalize_brand(raw))
        if canonical is None:
            return None
        return canonical, self.entries[canonical][0]

    def __len__(self) -> int:
        return len(self.entries)


# ---------------------------------------------------------------------------
# prompts and parsing
# ---------------------------------------------------------------------------

def build_prompts(image_ref: str, reference_db: ReferenceDb,
                  raw_brands: list[str]) -> tuple[str, str]:
    """Deterministic stage-1 and stage-2 prompt texts."""
    s1 = (
        "You are a street-view signage recognition assistant.\n"
        f"Image: {image_ref}\n"
        "Extract only the brand names that are actually visible as text or logos "
        "in the image. Do not fabricate or guess names that are not clearly "
        "readable. If no clear brand is present, return an empty list.\n"
        "Respond with a single JSON object with exactly two keys:\n"
        '  "brands_found": list of visible brand name strings\n'
        '  "summary": one short sentence describing the signage\n'
        "No other keys and no text outside the JSON object."
    )
    if len(reference_db):
        db_lines = "\n".join(
            f"- {name}: {tier}" + (f" (aliases: {', '.join(aliases)})" if aliases else "")
            for name, (tier, aliases) in sorted(reference_db.entries.items())
        )
    else:
        db_lines = "(reference database is empty)"
    brand_list = json.dumps(raw_brands, ensure_ascii=False)
    s2 = (
        "You are a professional commercial classification assistant.\n"
        "Reference database of known brands:\n"
        f"{db_lines}\n"
        f"Observed brand strings: {brand_list}\n"
        "Classify every observed string into exactly one tier, reasoning in this "
        "strict order: (1) if it matches a reference entry or alias, use that "
        "tier; (2) a chain operating across countries is \"International\"; "
        "(3) a recognizable regional chain is \"Local\"; (4) anything else is "
        "\"Ordinary\".\n"
        "Respond with a single JSON object mapping each observed string to its "
        "tier. No other keys and no text outside the JSON object."
    )
    return s1, s2


def _strip_fences(text: str) -> str:
    stripped = text.strip()
    m = _FENCE_RE.match(stripped)
    if m:
        return m.group(1).strip()
    return stripped


def parse_model_json(text: str, schema: str):
    """Validate raw model output against the s1 or s2 contract.

    Code fences are tolerated; unknown keys and unknown tier strings are
    rejected. Failures raise with the raw text attached, never a silent
    empty result.
    """
    if schema not in ("s1", "s2"):
        raise ValidationError(f"unknown schema {schema!r}")
    body = _strip_fences(text)
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ModelOutputError(f"model output is not valid JSON: {exc}", text)
    if not isinstance(doc, dict):
        raise ModelOutputError(f"model output must be a JSON object, got {type(doc).__name__}", text)

    if schema == "s1":
        if set(doc.keys()) != {"brands_found", "summary"}:
            raise ModelOutputError(
                f"s1 output must have exactly the keys brands_found and summary, "
                f"got {sorted(doc.keys())}", text)
        brands = doc["brands_found"]
        if not isinstance(brands, list) or not all(isinstance(b, str) for b in brands):
            raise ModelOutputError("brands_found must be a list of strings", text)
        if not isinstance(doc["summary"], str):
            raise ModelOutputError("summary must be a string", text)
        return VlmResponse(brands_found=list(brands), summary=doc["summary"])

    for key, tier in doc.items():
        if not isinstance(key, str):
            raise ModelOutputError("s2 keys must be brand strings", text)
        if tier not in TIERS:
            raise ModelOutputError(f"unknown tier {tier!r} for brand {key!r}", text)
    return dict(doc)


# ---------------------------------------------------------------------------
# clients
# ---------------------------------------------------------------------------

class BrandModelClient(Protocol):
    def complete(self, request: VlmRequest) -> str: ...


class OfflineFixtureClient:
    """Deterministic backend keyed by request hash; a miss is an error so
    offline decodes are always total."""

    def __init__(self, fixtures: dict[str, str]):
        self.fixtures = dict(fixtures)

    @classmethod
    def from_json(cls, path) -> "OfflineFixtureClient":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                fixtures = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read fixtures {path}: {exc}") from exc
        return cls(fixtures)

    def complete(self, request: VlmRequest) -> str:
        key = request_hash(request)
        if key not in self.fixtures:
            raise TransportError(
                f"no offline fixture for {request.stage} request on "
                f"{request.image_ref!r} (hash {key[:12]}...)"
            )
        return self.fixtures[key]


class HttpChatClient:
    """Minimal chat-completion-style HTTP client with bounded retries.

    Endpoint, token, and model come from the environment, never the command
    line. Each request carries its hash as an idempotency key.
    """

    def __init__(self, endpoint: str, token: str, model: str,
                 timeout: float = 60.0, max_retries: int = 3):
        self.endpoint = endpoint
        self.token = token
        self.model = model
        self.timeout = timeout
        self.max_retries = max_retries

    @classmethod
    def from_env(cls) -> "HttpChatClient":
        endpoint = os.environ.get(ENV_ENDPOINT)
        token = os.environ.get(ENV_TOKEN)
        model = os.environ.get(ENV_MODEL)
        if not (endpoint and token and model):
            raise ValidationError(
                f"live brand backend needs {ENV_ENDPOINT}, {ENV_TOKEN} and "
                f"{ENV_MODEL} in the environment"
            )
        return cls(endpoint=endpoint, token=token, model=model)

    def complete(self, request: VlmRequest) -> str:
        import requests

        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "max_tokens": request.params.max_new_tokens,
        }
        headers = {
            "Authorization": f"Bearer {self.token}",
            "X-Idempotency-Key": request_hash(request),
        }
        last_err = None
        for attempt in range(self.max_retries):
            try:
                resp = requests.post(self.endpoint, json=payload, headers=headers,
                                     timeout=self.timeout)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_err = exc
                time.sleep(min(2.0 ** attempt, 8.0))
        raise TransportError(f"model call failed after {self.max_retries} attempts: {last_err}")


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass
class TierAssignment:
    """Exactly one tier per input brand string."""

    tiers: dict[str, str] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)  # reference-db | model | default

    @property
    def unresolved(self) -> list[str]:
        return sorted(b for b, src in self.provenance.items() if src == "default")


def classify(raw_brands: list[str], reference_db: ReferenceDb,
             client: BrandModelClient, image_ref: str = "batch") -> TierAssignment:
    """Reference database first, then one batched stage-2 model call for the
    remainder; anything still unresolved defaults to Ordinary with a flag."""
    assignment = TierAssignment()
    pending: list[str] = []
    for raw in raw_brands:
        if raw in assignment.tiers:
            continue
        hit = reference_db.resolve(raw)
        if hit is not None:
            assignment.tiers[raw] = hit[1]
            assignment.provenance[raw] = "reference-db"
        else:
            pending.append(raw)

    if pending:
        _, s2_prompt = build_prompts(image_ref, reference_db, pending)
        request = VlmRequest(image_ref=image_ref, prompt=s2_prompt,
                             params=S2_PARAMS, stage="s2")
        answer = parse_model_json(client.complete(request), "s2")
        by_norm = {normalize_brand(k): v for k, v in answer.items()}
        for raw in pending:
            tier = answer.get(raw) or by_norm.get(normalize_brand(raw))
            if tier is not None:
                assignment.tiers[raw] = tier
                assignment.provenance[raw] = "model"
            else:
                assignment.tiers[raw] = "Ordinary"
                assignment.provenance[raw] = "default"
    return assignment


def brand_counts(assignment: TierAssignment) -> BrandTally:
    """Tier tally feeding the weighted brand ratio."""
    n = {"International": 0, "Local": 0, "Ordinary": 0}
    for tier in assignment.tiers.values():
        n[tier] += 1
    return BrandTally(n_local=n["Local"], n_international=n["International"],
                      n_ordinary=n["Ordinary"])


# ---------------------------------------------------------------------------
# corpus decoding
# ---------------------------------------------------------------------------

@dataclass
class DecodedImage:
    image_id: str
    point_id: str
    summary: str
    assignment: TierAssignment


def load_corpus(path) -> list[tuple[str, str]]:
    """corpus.csv rows (image_id, point_id) in file order."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["image_id", "point_id"]:
            raise ValidationError(f"{path}: expected header image_id,point_id")
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}: expected 2 fields, got {len(row)}")
            rows.append((row[0].strip(), row[1].strip()))
    return rows


def _decode_one(image_id: str, point_id: str, reference_db: ReferenceDb,
                client: BrandModelClient) -> DecodedImage:
    s1_prompt, _ = build_prompts(image_id, reference_db, [])
    request = VlmRequest(image_ref=image_id, prompt=s1_prompt, params=S1_PARAMS, stage="s1")
    response = parse_model_json(client.complete(request), "s1")
    assignment = classify(response.brands_found, reference_db, client, image_ref=image_id)
    return DecodedImage(image_id=image_id, point_id=point_id,
                        summary=response.summary, assignment=assignment)


def decode_corpus(corpus: list[tuple[str, str]], reference_db: ReferenceDb,
                  client: BrandModelClient, parallelism: int = 1) -> list[DecodedImage]:
    """Run the full two-stage decode over a corpus, ordered by image id.

    Offline fixture clients always run sequentially; the live client may fan
    out over a bounded thread pool, with results reassembled in order.
    """
    ordered = sorted(corpus, key=lambda t: t[0])
    if parallelism > 1 and not isinstance(client, OfflineFixtureClient):
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(_decode_one, img, pt, reference_db, client)
                       for img, pt in ordered]
            return [f.result() for f in futures]
    return [_decode_one(img, pt, reference_db, client) for img, pt in ordered]


def tally_by_point(decoded: list[DecodedImage]) -> dict[str, BrandTally]:
    acc: dict[str, dict[str, int]] = {}
    for item in decoded:
        slot = acc.setdefault(item.point_id, {"International": 0, "Local": 0, "Ordinary": 0})
        for tier in item.assignment.tiers.values():
            slot[tier] += 1
    return {
        pid: BrandTally(n_local=c["Local"], n_international=c["International"],
                        n_ordinary=c["Ordinary"])
        for pid, c in acc.items()
    }


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class TierMetrics:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class EvalReport:
    per_tier: dict[str, TierMetrics]
    overall: TierMetrics
    gt_counts: dict[str, int]


def harmonic_f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _overall_mean(per_tier: dict[str, TierMetrics]) -> TierMetrics:
    ps = [per_tier[t].precision for t in TIERS]
    rs = [per_tier[t].recall for t in TIERS]
    fs = [per_tier[t].f1 for t in TIERS]
    return TierMetrics(precision=sum(ps) / len(ps), recall=sum(rs) / len(rs),
                       f1=sum(fs) / len(fs))


def report_from_tier_metrics(metrics: dict[str, tuple[float, float]]) -> EvalReport:
    """Build a report from per-tier (precision, recall) pairs; F1 and the
    unweighted overall row follow the same identities `evaluate` uses."""
    per_tier = {}
    for tier in TIERS:
        p, r = metrics[tier]
        per_tier[tier] = TierMetrics(precision=p, recall=r, f1=harmonic_f1(p, r))
    return EvalReport(per_tier=per_tier, overall=_overall_mean(per_tier), gt_counts={})


def load_labeled_pairs(path) -> dict[str, set[tuple[str, str]]]:
    """CSV (image_id, brand, tier) -> per-image sets of normalized pairs."""
    out: dict[str, set[tuple[str, str]]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["image_id", "brand", "tier"]:
            raise ValidationError(f"{path}: expected header image_id,brand,tier")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}: row {lineno}: expected 3 fields")
            image_id, brand, tier = (c.strip() for c in row)
            if tier not in TIERS:
                raise ValidationError(f"{path}: row {lineno}: unknown tier {tier!r}")
            out.setdefault(image_id, set()).add((normalize_brand(brand), tier))
    return out


def evaluate(predictions: dict[str, set[tuple[str, str]]],
             ground_truth: dict[str, set[tuple[str, str]]]) -> EvalReport:
    """Per-tier set matching of (canonical brand, tier) pairs per image.

    The overall row is the unweighted mean of the three tier rows. The two
    inputs must cover exactly the same image ids.
    """
    if set(predictions) != set(ground_truth):
        only_pred = sorted(set(predictions) - set(ground_truth))[:5]
        only_gt = sorted(set(ground_truth) - set(predictions))[:5]
        raise ValidationError(
            f"image id mismatch between predictions and ground truth "
            f"(only in predictions: {only_pred}, only in ground truth: {only_gt})"
        )
    counts = {t: {"tp": 0, "fp": 0, "fn": 0} for t in TIERS}
    gt_counts = {t: 0 for t in TIERS}
    for image_id in ground_truth:
        pred = {(normalize_brand(b), t) for b, t in predictions[image_id]}
        gt = {(normalize_brand(b), t) for b, t in ground_truth[image_id]}
        for tier in TIERS:
            p_set = {b for b, t in pred if t == tier}
            g_set = {b for b, t in gt if t == tier}
            counts[tier]["tp"] += len(p_set & g_set)
            counts[tier]["fp"] += len(p_set - g_set)
            counts[tier]["fn"] += len(g_set - p_set)
            gt_counts[tier] += len(g_set)

    per_tier = {}
    for tier in TIERS:
        tp, fp, fn = counts[tier]["tp"], counts[tier]["fp"], counts[tier]["fn"]
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_tier[tier] = TierMetrics(precision=precision, recall=recall,
                                     f1=harmonic_f1(precision, recall),
                                     tp=tp, fp=fp, fn=fn)
    return EvalReport(per_tier=per_tier, overall=_overall_mean(per_tier),
                      gt_counts=gt_counts)
