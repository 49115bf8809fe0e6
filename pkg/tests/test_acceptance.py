"""Acceptance criteria, one test each.

Every test prints a single ``[PASS]`` / ``[FAIL]`` line with the measured
quantity next to its threshold, then asserts. Run on its own with

    pytest tests/test_acceptance.py -v

or ``python tests/test_acceptance.py``.
"""

import math
import random
import statistics
import sys
import time
from datetime import datetime, timedelta, timezone
from urllib.parse import urlsplit

import pytest
from fastapi.testclient import TestClient

from conftest import FakeClock, mac, random_fingerprint
from oracles import count_oracle, first_oracle, knn_oracle

from ctxqr.errors import UnknownContext
from ctxqr.fingerprint import (
    ApObservation,
    Fingerprint,
    KnnConfig,
    RadioMapEntry,
    knn_locate,
    rank_correlation,
    rank_transform,
    rank_values,
    spearman_correlation,
)
from ctxqr.qr import parse_context_params, rewrite_url_inline, rewrite_url_stored
from ctxqr.rules import EvalContext, evaluate_all, parse_rules
from ctxqr.service import ProximityService, create_app
from ctxqr.sim import SimConfig, detection_probability, eval_accuracy, generate_radio_map, grid_points
from ctxqr.store import ScanStore

UTC = timezone.utc
EXAMPLE_RULE = "IF COUNTER(3)>2 AND FIRST(2) THEN { deliver coupon info message }"


@pytest.fixture
def verdict(capsys):
    """Print one pass/fail line outside pytest's capture, then assert."""

    def _verdict(label: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        assert ok, f"{label}: {detail}"

    return _verdict


def test_ac01_spearman_worked_example(verdict):
    r, r_prime = (1.0, 3.0, 2.0), (3.0, 2.0, 1.0)
    rank_correlation(r, r_prime)  # warm-up
    t0 = time.perf_counter()
    rho = rank_correlation(r, r_prime)
    elapsed = time.perf_counter() - t0
    # tie-free closed form: 1 - 6 * sum(d^2) / (n (n^2 - 1))
    n = 3
    direct = 1 - 6 * sum((a - b) ** 2 for a, b in zip(r, r_prime)) / (n * (n * n - 1))
    err = max(abs(rho - (-0.5)), abs(rho - direct))
    ok = err <= 1e-12 and elapsed < 1e-3
    verdict("AC1 Spearman (1,3,2) vs (3,2,1)", ok,
            f"rho={rho!r} direct={direct!r} |err|={err:.1e} (tol 1e-12) time={elapsed * 1e3:.4f} ms (limit 1 ms)")


def _affine(rng):
    slope, offset = rng.uniform(0.01, 50.0), rng.uniform(-500.0, 500.0)
    return f"affine({slope:.3g}x{offset:+.3g})", lambda x: slope * x + offset


def _cubic_linear(rng):
    # x -> a (x - c)^3 + b x with a, b > 0 is strictly increasing
    a, b, c = rng.uniform(0.001, 2.0), rng.uniform(0.01, 5.0), rng.uniform(-120.0, 0.0)
    return f"cubic+linear(a={a:.3g},b={b:.3g},c={c:.3g})", lambda x: a * (x - c) ** 3 + b * x


def _integer_affine(rng, values):
    # stays inside the integer dBm domain so the mapped scan is itself a Fingerprint
    lo, hi = min(values), max(values)
    slope = rng.randint(1, max(1, 120 // max(1, hi - lo + 1)))
    offset = rng.randint(-120 - slope * lo, -slope * hi)
    return lambda x: slope * x + offset


def test_ac02_monotone_invariance(verdict):
    rng = random.Random(2002)
    failures = 0
    checked = 0
    for i in range(1000):
        fp = random_fingerprint(rng, rng.randint(2, 20), distinct_rssi=True)
        partner = Fingerprint(tuple(ApObservation(o.bssid, rng.randint(-110, -10)) for o in fp
                                    if rng.random() < 0.8) + (ApObservation(mac(0xFFFF00 + i), -55),))
        base_ranks = rank_transform(fp)
        shared = sorted(fp.bssids & partner.bssids)
        try:
            base_rho = spearman_correlation(fp, partner)
        except ValueError:
            base_rho = None
        partner_ranks = rank_transform(partner.restricted_to(shared)) if len(shared) >= 2 else None
        for name, f in (_affine(rng), _cubic_linear(rng)):
            mapped = {o.bssid: f(o.rssi) for o in fp}
            checked += 1
            ok = rank_values(mapped) == base_ranks
            if ok and base_rho is not None:
                mapped_shared = rank_values({b: mapped[b] for b in shared})
                rho = rank_correlation([mapped_shared[b] for b in shared], [partner_ranks[b] for b in shared])
                ok = rho == base_rho  # bit-identical, not approximately equal
            failures += not ok
        g = _integer_affine(rng, [o.rssi for o in fp])
        mapped_fp = Fingerprint(tuple(ApObservation(o.bssid, g(o.rssi)) for o in fp))
        checked += 1
        ok = rank_transform(mapped_fp) == base_ranks
        if ok and base_rho is not None:
            ok = spearman_correlation(mapped_fp, partner) == base_rho
        failures += not ok
    verdict("AC2 monotone invariance", failures == 0,
            f"{checked - failures}/{checked} transformed fingerprints unchanged (1000 fingerprints, "
            f"affine, cubic+linear and in-range integer affine maps)")


def test_ac03_knn_matches_brute_force(verdict):
    rng = random.Random(3003)
    mismatches = 0
    t0 = time.perf_counter()
    for _ in range(500):
        n = rng.randint(1, 20)
        entries = [RadioMapEntry(random_fingerprint(rng, rng.randint(1, 8), pool=16),
                                 rng.uniform(-80, 80), rng.uniform(-170, 170), f"e{j}") for j in range(n)]
        # duplicate a fingerprint sometimes so exact distance ties occur
        if n > 2 and rng.random() < 0.3:
            entries[-1] = RadioMapEntry(entries[0].fingerprint, 1.0, 2.0, "dup")
        query = random_fingerprint(rng, rng.randint(1, 8), pool=16)
        k = rng.randint(1, 25)
        floor = rng.choice([-100, -110, -120, -95])
        est = knn_locate(query, entries, KnnConfig(k, floor))
        expected = knn_oracle(query.rssi_map(), [(e.fingerprint.rssi_map(), e.latitude, e.longitude)
                                                  for e in entries], k, floor)
        got = [entries.index(nb.entry) for nb in est.neighbors]  # labels are unique
        lat = statistics.fmean(entries[i].latitude for i in expected)
        lon = statistics.fmean(entries[i].longitude for i in expected)
        if got != expected or not (math.isclose(est.latitude, lat, abs_tol=1e-9)
                                   and math.isclose(est.longitude, lon, abs_tol=1e-9)):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    verdict("AC3 k-NN vs exhaustive sort", mismatches == 0 and elapsed < 5.0,
            f"{500 - mismatches}/500 maps match, {elapsed:.2f} s (limit 5 s)")


def test_ac04_localization_desk_scale(verdict):
    t0 = time.perf_counter()
    exact_cfg = SimConfig(width=45.0, height=45.0, grid_spacing=5.0, sigma=0.0, seed=4)
    exact_map = generate_radio_map(exact_cfg)
    exact = eval_accuracy(exact_map, 0, exact_cfg, k=1, positions=grid_points(exact_cfg))
    noisy_cfg = SimConfig(width=45.0, height=45.0, grid_spacing=5.0, sigma=2.0, seed=4)
    noisy = eval_accuracy(generate_radio_map(noisy_cfg), 500, noisy_cfg, k=4)
    elapsed = time.perf_counter() - t0
    ok = (len(exact_map) == 100 and len(exact_cfg.sites) == 9 and exact.mean_err == 0.0
          and noisy.median_err <= 10.0 and elapsed < 10.0)
    verdict("AC4 desk-scale localization", ok,
            f"sigma=0 k=1 mean_err={exact.mean_err} (need 0); sigma=2 k=4 median_err={noisy.median_err:.3f} m "
            f"over {noisy.n_located}/{noisy.n_queries} queries (limit 10 m); {elapsed:.2f} s (limit 10 s)")


BASE_URLS = [
    "http://some_domain.com",
    "http://some_domain.com/",
    "https://shop.example/p/item?sku=42",
    "https://shop.example/p/item?sku=42&ref=qr#reviews",
    "http://d.example/#frag",
    "http://user:pw@d.example:8080/a;b/c?x=%20y&x=z",
    "https://d.example/landing?",
]


def test_ac05_url_round_trip(verdict):
    rng = random.Random(5005)
    failures = 0
    for i in range(1000):
        fp = random_fingerprint(rng, rng.randint(1, 16), pool=4096)
        base = BASE_URLS[i % len(BASE_URLS)]
        out = rewrite_url_inline(base, fp)
        a, b = urlsplit(base), urlsplit(out)
        parts_kept = (a.scheme, a.netloc, a.path, a.fragment) == (b.scheme, b.netloc, b.path, b.fragment)
        query_kept = b.query.startswith(a.query)
        if not (parse_context_params(out).fingerprint == fp and parts_kept and query_kept):
            failures += 1
    verdict("AC5 inline URL round trip", failures == 0, f"{1000 - failures}/1000 URLs reproduce the scan exactly")


def test_ac06_stored_context_flow(verdict, tmp_path):
    rng = random.Random(6006)
    path = tmp_path / "events.jsonl"
    t0 = datetime(2024, 3, 1, tzinfo=UTC)
    originals = {}
    failures = 0
    with ScanStore(path) as store:
        for i in range(1000):
            fp = random_fingerprint(rng, rng.randint(1, 12), pool=512)
            base = BASE_URLS[i % len(BASE_URLS)]
            cid = store.store_scan(f"user{rng.randint(0, 30)}", fp, base, t0 + timedelta(seconds=rng.randrange(10**7)))
            url = rewrite_url_stored(base, cid)
            resolved = store.get_context(parse_context_params(url).context_id)
            originals[cid] = resolved
            if (resolved.id, resolved.fingerprint, resolved.target_url) != (cid, fp, base):
                failures += 1
    with ScanStore(path) as reopened:
        for cid, ev in originals.items():
            try:
                again = reopened.get_context(cid)
            except UnknownContext:
                failures += 1
                continue
            same = (again.id, again.user_token, again.timestamp, again.fingerprint, again.target_url) == (
                ev.id, ev.user_token, ev.timestamp, ev.fingerprint, ev.target_url)
            failures += not same
    verdict("AC6 stored-context flow", failures == 0 and len(originals) == 1000,
            f"{1000 - failures}/1000 events resolve field-for-field before and after reopening the store file")


def test_ac07_counter_first_oracle(verdict):
    rng = random.Random(7007)
    span = 100 * 86400  # a little over three calendar months
    mismatches = 0
    comparisons = 0
    t0 = time.perf_counter()
    fp = Fingerprint((ApObservation("AA-BB-CC-DD-EE-01", -40),))
    for _ in range(200):
        base = datetime(2023, 11, 1, tzinfo=UTC) + timedelta(days=rng.randrange(400))
        n = rng.randint(2, 1000)
        offsets = [0, span] + [rng.randrange(span + 1) for _ in range(n - 2)]
        store = ScanStore()
        log = []
        for off in offsets:
            user = rng.choice("abc")
            ts = base + timedelta(seconds=off)
            store.store_scan(user, fp, "http://d.example/", ts)
            log.append((user, ts))
        # query at random times, at event times and at window boundaries
        nows = [base + timedelta(seconds=rng.randrange(span + 1)) for _ in range(3)]
        nows.append(rng.choice(log)[1])
        nows.append(datetime(nows[0].year, nows[0].month, 1, tzinfo=UTC))
        for now in nows:
            for user in "abc":
                for code in range(4):
                    comparisons += 2
                    mismatches += store.count_scans(user, code, now) != count_oracle(log, user, code, now)
                    mismatches += store.is_first_scan(user, code, now) != first_oracle(log, user, code, now)
    elapsed = time.perf_counter() - t0
    verdict("AC7 COUNTER/FIRST vs recount", mismatches == 0 and elapsed < 10.0,
            f"{comparisons - mismatches}/{comparisons} agree over 200 logs, {elapsed:.2f} s (limit 10 s)")


def test_ac08_example_rule_timeline(verdict):
    (rule,) = parse_rules(EXAMPLE_RULE)
    store = ScanStore()
    fp = Fingerprint((ApObservation("AA-BB-CC-DD-EE-01", -40),))
    # all in May 2024; scans 1-3 fall in different ISO weeks, scan 4 repeats week 3
    times = [datetime(2024, 5, 6, 9, tzinfo=UTC), datetime(2024, 5, 14, 9, tzinfo=UTC),
             datetime(2024, 5, 21, 9, tzinfo=UTC), datetime(2024, 5, 23, 9, tzinfo=UTC)]
    observed, expected = [], []
    for ts in times:
        cid = store.store_scan("shopper", fp, "http://shop.example/", ts)
        ctx = EvalContext("shopper", ts, store, fp, event_id=cid)
        fires = store.count_scans("shopper", 3, ts) > 2 and store.is_first_scan("shopper", 2, ts, exclude_id=cid)
        expected.append(["deliver coupon info message"] if fires else [])
        observed.append(evaluate_all([rule], ctx))
    ok = observed == expected == [[], [], ["deliver coupon info message"], []]
    ok = ok and observed[2][0].encode() == b"deliver coupon info message"
    verdict("AC8 example rule over 4 scans", ok, f"fired per scan: {observed}")


def test_ac09_service_end_to_end(verdict):
    t0 = time.perf_counter()
    clock = FakeClock(datetime(2024, 5, 21, 9, tzinfo=UTC))
    rules_text = EXAMPLE_RULE + "\nIF FIRST(1) THEN { hello today }\nIF COUNTER(0) >= 1 THEN { seen before }\n"
    svc = ProximityService(clock=clock, rules_text=rules_text)
    client = TestClient(create_app(svc))
    aps = [{"bssid": "AA-BB-CC-DD-EE-01", "rssi": -40}, {"bssid": "AA-BB-CC-DD-EE-02", "rssi": -71}]
    ok = True
    details = []
    for day in (1, 8, 15):
        clock.now = datetime(2024, 5, day, 9, tzinfo=UTC)
        r = client.post("/api/scans", json={"user": "shopper", "url": "http://shop.example/", "aps": aps})
        ok = ok and r.status_code == 201
        cid = r.json()["context_id"]
        got = client.post("/api/evaluate", json={"context_id": cid}).json()["actions"]
        event = svc.store.get_context(cid)
        want = evaluate_all(parse_rules(rules_text),
                            EvalContext(event.user_token, clock.now, svc.store, event.fingerprint, event_id=cid))
        ok = ok and got == want
        details.append(got)
    ok = ok and details[-1] == ["deliver coupon info message", "hello today", "seen before"]
    missing = client.post("/api/evaluate", json={"context_id": "no-such-context"}).status_code
    missing_get = client.get("/api/contexts/no-such-context").status_code
    bad_put = client.put("/api/rules", content=b"IF COUNTER(3) > THEN { broken }").status_code
    still = client.post("/api/evaluate", json={"context_id": cid}).json()["actions"]
    ok = ok and missing == 404 and missing_get == 404 and bad_put == 422 and still == details[-1]
    ok = ok and client.get("/api/rules").text == rules_text
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 2.0
    verdict("AC9 service end to end", ok,
            f"actions={details[-1]} unknown id -> {missing}/{missing_get}, bad rules PUT -> {bad_put}, "
            f"old rules still serve: {still == details[-1]}; {elapsed:.2f} s (limit 2 s)")


PARAMETERIZATIONS = [(r, s) for r in (5.0, 30.0, 80.0, 250.0) for s in (0.5, 1.0, 2.0, 4.0, 8.0)] + [(None, 4.0)]


def test_ac10_detection_monotone(verdict):
    rng = random.Random(1010)
    violations = 0
    for max_range, shape in PARAMETERIZATIONS:
        reach = 2.0 * (max_range or 100.0)
        for _ in range(10_000):
            d1, d2 = sorted((rng.uniform(0.0, reach), rng.uniform(0.0, reach)))
            p1 = detection_probability(d1, max_range, shape)
            p2 = detection_probability(d2, max_range, shape)
            violations += not (p1 >= p2 and 0.0 <= p2 <= p1 <= 1.0)
    total = 10_000 * len(PARAMETERIZATIONS)
    verdict("AC10 detection probability non-increasing", violations == 0,
            f"{total - violations}/{total} pairs ordered across {len(PARAMETERIZATIONS)} parameterizations")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
