"""Tests for the HTTP job API using the in-process test client."""

import base64
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from curvemrf.core import bank_with_specials
from curvemrf.pnm import decode_pgm, encode_pgm, encode_ppm
from curvemrf.server import create_app
from curvemrf.tasks import BACKGROUND, FOREGROUND, FREE


@pytest.fixture(scope="module")
def bank():
    return bank_with_specials([], side=4, f_max=2.0)


def job_body(side=12, passes=10, prior_weight=1.0):
    rng = np.random.default_rng(0)
    img = np.zeros((side, side, 3))
    img[:, : side // 2] = [0.2, 0.3, 0.7]
    img[:, side // 2:] = [0.8, 0.6, 0.2]
    img = np.clip(img + rng.normal(0, 0.02, img.shape), 0, 1)
    tags = np.full((side, side), FREE, dtype=np.uint8)
    mid = side // 2
    tags[mid - 2: mid + 1, side - 3: side - 1] = FOREGROUND
    tags[mid - 2: mid + 1, 1:3] = BACKGROUND
    return {
        "image": base64.b64encode(
            encode_ppm((img * 255).astype(np.uint8))
        ).decode("ascii"),
        "strokes": base64.b64encode(encode_pgm(tags)).decode("ascii"),
        "lambda": prior_weight,
        "passes": passes,
    }


def wait_for(client, job_id, states, timeout=30.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        doc = client.get(f"/jobs/{job_id}").json()
        if doc["status"] in states:
            return doc
        time.sleep(0.05)
    raise AssertionError(f"job {job_id} never reached {states}: {doc}")


class TestLifecycle:
    def test_submit_poll_result(self, bank):
        with TestClient(create_app(bank)) as client:
            response = client.post("/jobs", json=job_body())
            assert response.status_code == 202
            job_id = response.json()["id"]
            doc = wait_for(client, job_id, ("done", "failed"))
            assert doc["status"] == "done"
            assert doc["pass"] == 10
            assert doc["lower_bound"] is not None
            result = client.get(f"/jobs/{job_id}/result")
            assert result.status_code == 200
            body = result.json()
            labeling = decode_pgm(base64.b64decode(body["labeling"]))
            assert labeling.shape == (12, 12)
            assert set(np.unique(labeling)) <= {0, 255}
            marginal = decode_pgm(
                base64.b64decode(body["min_marginal_map"])
            )
            assert marginal.shape == (12, 12)
            assert body["lower_bound"] <= body["energy"] + 1e-6

    def test_result_before_done_and_cancel(self, bank):
        with TestClient(create_app(bank)) as client:
            slow = job_body(side=24, passes=2000)
            job_id = client.post("/jobs", json=slow).json()["id"]
            early = client.get(f"/jobs/{job_id}/result")
            assert early.status_code == 409
            cancel = client.delete(f"/jobs/{job_id}")
            assert cancel.status_code == 200
            doc = wait_for(client, job_id, ("cancelled", "done"))
            assert doc["status"] == "cancelled"
            assert client.delete(f"/jobs/{job_id}").status_code == 409

    def test_queue_depth_limit(self, bank):
        with TestClient(create_app(bank, queue_depth=2)) as client:
            slow = job_body(side=24, passes=2000)
            ids = [client.post("/jobs", json=slow).json()["id"]]
            wait_for(client, ids[0], ("running",), timeout=10.0)
            for _ in range(2):
                response = client.post("/jobs", json=slow)
                assert response.status_code == 202
                ids.append(response.json()["id"])
            rejected = client.post("/jobs", json=slow)
            assert rejected.status_code == 429
            for job_id in ids:
                client.delete(f"/jobs/{job_id}")
            for job_id in ids:
                wait_for(client, job_id, ("cancelled",))


class TestValidation:
    def cases(self):
        base = job_body()
        missing = dict(base)
        del missing["image"]
        not_b64 = dict(base, image="@@@not-base64@@@")
        swapped = dict(base, image=base["strokes"])
        mismatched = dict(base, strokes=base64.b64encode(
            encode_pgm(np.full((5, 5), FREE, dtype=np.uint8))
        ).decode("ascii"))
        one_sided = dict(base, strokes=base64.b64encode(
            encode_pgm(np.full((12, 12), FOREGROUND, dtype=np.uint8))
        ).decode("ascii"))
        bad_lambda = dict(base)
        bad_lambda["lambda"] = 0
        bad_passes = dict(base, passes=0)
        huge = np.zeros((161, 161, 3), dtype=np.uint8)
        huge_mask = np.full((161, 161), FREE, dtype=np.uint8)
        huge_mask[0, 0] = FOREGROUND
        huge_mask[1, 1] = BACKGROUND
        oversized = dict(
            base,
            image=base64.b64encode(encode_ppm(huge)).decode("ascii"),
            strokes=base64.b64encode(encode_pgm(huge_mask)).decode("ascii"),
        )
        return [missing, not_b64, swapped, mismatched, one_sided,
                bad_lambda, bad_passes, oversized]

    def test_rejected_payloads(self, bank):
        with TestClient(create_app(bank)) as client:
            for payload in self.cases():
                assert client.post("/jobs", json=payload).status_code == 400

    def test_unknown_job(self, bank):
        with TestClient(create_app(bank)) as client:
            assert client.get("/jobs/nope").status_code == 404
            assert client.get("/jobs/nope/result").status_code == 404
            assert client.delete("/jobs/nope").status_code == 404


class TestBankEndpoint:
    def test_bank_round_trips(self, bank):
        with TestClient(create_app(bank)) as client:
            doc = client.get("/bank").json()
            assert doc["side"] == 4
            assert doc["f_max"] == 2.0
            assert len(doc["patterns"]) == 3
            assert doc["cutoff_index"] == 0
