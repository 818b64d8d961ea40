"""Shared fixtures."""

import json

import numpy as np
import pytest

from vulnscore.cvss import base_score, parse_vector
from vulnscore.tokenizer import SPECIAL_TOKENS, Vocabulary


WORDS = [
    "buffer", "overflow", "remote", "attackers", "execute", "arbitrary", "code",
    "local", "users", "physical", "usb", "device", "kernel", "panic", "network",
    "via", "crafted", "request", "allows", "in", "the", "to",
]


@pytest.fixture
def vocab() -> Vocabulary:
    chars = sorted(set("abcdefghijklmnopqrstuvwxyz0123456789.,()-"))
    return Vocabulary(list(SPECIAL_TOKENS) + chars + ["##" + c for c in chars] + WORDS)


GENERATED_SIZE = 400

# code -> (weight, phrase), one table per metric that drives the wording
ATTACK_VECTORS = {
    "N": (0.5, "allows remote attackers to {effect} via a crafted HTTP request"),
    "A": (0.1, "allows attackers on the adjacent network segment to {effect} via crafted Bluetooth frames"),
    "L": (0.25, "allows local users to {effect} via a crafted ioctl call"),
    "P": (0.15, "allows physically proximate attackers to {effect} by inserting a malicious USB device"),
}
OTHER_METRICS = {
    "AC": {"L": 0.8, "H": 0.2},
    "PR": {"N": 0.6, "L": 0.3, "H": 0.1},
    "UI": {"N": 0.65, "R": 0.35},
    "S": {"U": 0.8, "C": 0.2},
    "C": {"H": 0.55, "L": 0.15, "N": 0.3},
    "I": {"H": 0.5, "L": 0.2, "N": 0.3},
    "A": {"H": 0.6, "L": 0.05, "N": 0.35},
}
PRODUCTS = ["OpenSSL", "the Linux kernel", "libxml2", "Apache Struts", "FFmpeg", "ImageMagick", "Jenkins"]
WEAKNESSES = ["A buffer overflow", "A use-after-free", "An integer overflow", "A NULL pointer dereference"]
EFFECTS = ["execute arbitrary code", "cause a denial of service", "obtain sensitive information"]


def _pick(rng: np.random.Generator, weights: dict) -> str:
    codes = list(weights)
    return codes[rng.choice(len(codes), p=[weights[c] for c in codes])]


def make_feed(size: int = GENERATED_SIZE, seed: int = 0) -> dict:
    """A seeded NVD JSON 1.1 document with skewed, realistic label mixes."""
    rng = np.random.default_rng(seed)
    items = []
    for n in range(size):
        av = _pick(rng, {code: weight for code, (weight, _) in ATTACK_VECTORS.items()})
        codes = [f"AV:{av}"] + [f"{m}:{_pick(rng, w)}" for m, w in OTHER_METRICS.items()]
        vector_string = "CVSS:3.1/" + "/".join(codes)
        description = "{} in {} {} {}.".format(
            WEAKNESSES[rng.integers(len(WEAKNESSES))],
            PRODUCTS[rng.integers(len(PRODUCTS))],
            f"{rng.integers(1, 9)}.{rng.integers(0, 20)}",
            ATTACK_VECTORS[av][1].format(effect=EFFECTS[rng.integers(len(EFFECTS))]),
        )
        items.append({
            "cve": {
                "CVE_data_meta": {"ID": f"CVE-{2018 + n % 3}-{1000 + n}"},
                "description": {"description_data": [{"lang": "en", "value": description}]},
            },
            "impact": {"baseMetricV3": {"cvssV3": {
                "version": "3.1",
                "vectorString": vector_string,
                "baseScore": base_score(parse_vector(vector_string)).score,
            }}},
        })
    return {"CVE_data_type": "CVE", "CVE_data_numberOfCVEs": str(size), "CVE_Items": items}


@pytest.fixture
def generated_feed(tmp_path):
    path = tmp_path / "nvdcve-generated.json"
    path.write_text(json.dumps(make_feed()), encoding="utf-8")
    return path
