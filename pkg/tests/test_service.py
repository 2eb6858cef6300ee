"""HTTP service contract: determinism, status codes, schema fuzzing."""

import base64
import io
import json
import string

import numpy as np
import pytest
from PIL import Image


def png_to_array(b64: str) -> np.ndarray:
    raw = base64.b64decode(b64)
    with Image.open(io.BytesIO(raw)) as im:
        return np.asarray(im.convert("L"))


class TestInfoAndSamples:
    def test_model_info_fields(self, service_client):
        r = service_client.get("/model/info")
        assert r.status_code == 200
        body = r.json()
        for key in ("labels", "m_c", "m_notc", "layout", "dataset"):
            assert key in body
        assert body["m_c"] == len(body["labels"])

    def test_samples_listing(self, service_client):
        r = service_client.get("/samples")
        assert r.status_code == 200
        body = r.json()
        assert len(body["ids"]) == len(body["thumbnails"]) == len(body["labels"])
        assert len(body["ids"]) > 0
        png_to_array(body["thumbnails"][0])


class TestEncodeDecode:
    def test_encode_shapes(self, service_client):
        info = service_client.get("/model/info").json()
        r = service_client.post("/encode", json={"sample_id": 0})
        assert r.status_code == 200
        body = r.json()
        m = info["m_c"] + info["m_notc"]
        assert len(body["mu"]) == m
        assert len(body["sigma"]) == m
        assert len(body["labels_pred"]) == len(info["labels"])

    def test_decode_of_encoded_mean_deterministic(self, service_client):
        mu = service_client.post("/encode", json={"sample_id": 0}).json()["mu"]
        a = service_client.post("/decode", json={"z": mu})
        b = service_client.post("/decode", json={"z": mu})
        assert a.status_code == 200
        assert a.json()["image"] == b.json()["image"]

    def test_decode_matches_reconstruct(self, service_client):
        mu = service_client.post("/encode", json={"sample_id": 1}).json()["mu"]
        dec = service_client.post("/decode", json={"z": mu}).json()["image"]
        rec = service_client.post("/reconstruct",
                                  json={"sample_id": 1}).json()["image"]
        assert dec == rec

    def test_decode_wrong_length(self, service_client):
        r = service_client.post("/decode", json={"z": [0.0, 1.0]})
        assert r.status_code == 422

    def test_encode_needs_exactly_one_source(self, service_client):
        assert service_client.post("/encode", json={}).status_code == 400
        info = service_client.get("/model/info").json()
        h, w = info["image_shape"]
        payload = {"sample_id": 0, "image": [0.0] * (h * w)}
        assert service_client.post("/encode", json=payload).status_code == 400

    def test_unknown_sample_404(self, service_client):
        r = service_client.post("/encode", json={"sample_id": 99999})
        assert r.status_code == 404


class TestIntervene:
    def test_noop_set_matches_reconstruct(self, service_client):
        rec = service_client.post("/reconstruct", json={"sample_id": 2}).json()
        z = rec["z"]
        r = service_client.post("/intervene", json={
            "sample_id": 2, "label": 0, "value": 1, "mode": "set",
            "set_value": z[0]})
        assert r.status_code == 200
        assert r.json()["image"] == rec["image"]

    def test_label_out_of_range_422(self, service_client):
        r = service_client.post("/intervene", json={
            "sample_id": 0, "label": 423, "value": 1})
        assert r.status_code == 422

    def test_replay_byte_identical(self, service_client):
        payload = {"sample_id": 3, "label": 1, "value": 1,
                   "mode": "resample", "seed": 17}
        a = service_client.post("/intervene", json=payload)
        b = service_client.post("/intervene", json=payload)
        assert a.content == b.content

    def test_reports_probability_movement(self, service_client):
        r = service_client.post("/intervene", json={
            "sample_id": 0, "label": 0, "value": 1, "mode": "mean"})
        body = r.json()
        assert len(body["probs_before"]) == len(body["probs_after"])


class TestTraverseGenerate:
    def test_traverse_grid(self, service_client):
        r = service_client.post("/traverse", json={
            "sample_id": 0, "dim_i": 0, "dim_j": 1, "lo": -2, "hi": 2,
            "grid": 3})
        assert r.status_code == 200
        img = png_to_array(r.json()["image"])
        info = service_client.get("/model/info").json()
        h, w = info["image_shape"]
        assert img.shape == (3 * h + 2 * 2, 3 * w + 2 * 2)

    def test_traverse_bad_dim(self, service_client):
        r = service_client.post("/traverse", json={
            "sample_id": 0, "dim_i": 0, "dim_j": 99})
        assert r.status_code == 422

    def test_generate_deterministic_by_seed(self, service_client):
        info = service_client.get("/model/info").json()
        y = [1.0] * len(info["labels"])
        payload = {"y": y, "n": 3, "seed": 5}
        a = service_client.post("/generate", json=payload)
        b = service_client.post("/generate", json=payload)
        assert a.status_code == 200
        assert a.json()["images"] == b.json()["images"]
        c = service_client.post("/generate", json={**payload, "seed": 6})
        assert c.json()["images"] != a.json()["images"]

    def test_generate_bad_labels(self, service_client):
        r = service_client.post("/generate", json={"y": [0.5, 1.0], "n": 1})
        assert r.status_code == 422


class TestSchemaFuzz:
    def test_malformed_json_400(self, service_client):
        r = service_client.post("/encode", content=b"{not json",
                                headers={"content-type": "application/json"})
        assert r.status_code == 400

    def test_unknown_field_rejected(self, service_client):
        r = service_client.post("/decode", json={"z": [0.0], "hack": 1})
        assert r.status_code == 400

    def test_fuzz_never_crashes_or_500s(self, service_client):
        rng = np.random.default_rng(0)
        endpoints = ["/encode", "/decode", "/reconstruct", "/intervene",
                     "/traverse", "/generate"]
        chars = string.printable
        for i in range(1000):
            ep = endpoints[int(rng.integers(len(endpoints)))]
            kind = int(rng.integers(4))
            if kind == 0:
                # random junk bytes
                body = bytes(rng.integers(0, 256, size=int(rng.integers(0, 60)),
                                          dtype=np.uint8))
                r = service_client.post(
                    ep, content=body,
                    headers={"content-type": "application/json"})
            elif kind == 1:
                # random printable string
                s = "".join(chars[int(rng.integers(len(chars)))]
                            for _ in range(int(rng.integers(0, 40))))
                r = service_client.post(
                    ep, content=s.encode(),
                    headers={"content-type": "application/json"})
            elif kind == 2:
                # schema-shaped garbage
                payload = {
                    "sample_id": int(rng.integers(-5, 600)),
                    "z": rng.normal(size=int(rng.integers(0, 9))).tolist(),
                    "label": int(rng.integers(-3, 9)),
                    "dim_i": int(rng.integers(-3, 9)),
                    "dim_j": int(rng.integers(-3, 9)),
                    "y": rng.normal(size=int(rng.integers(0, 5))).tolist(),
                    "mode": ["resample", "warp", "", "set"][int(rng.integers(4))],
                    "n": int(rng.integers(-2, 100)),
                    "grid": int(rng.integers(-2, 40)),
                    "seed": int(rng.integers(0, 10)),
                }
                keep = list(payload)
                for key in keep:
                    if rng.random() < 0.5:
                        del payload[key]
                r = service_client.post(ep, json=payload)
            else:
                # wrong JSON types
                r = service_client.post(ep, json=[1, 2, 3])
            assert r.status_code < 500, f"{ep} returned {r.status_code} (iter {i})"
