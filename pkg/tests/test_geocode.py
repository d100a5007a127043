import json

import pytest

from geoclap.errors import GeocodeUnavailableError, InvalidCoordinateError
from geoclap.geocode import GeocodeClient

BERLIN = (52.509663, 13.376481)
BERLIN_ADDRESS = "Potsdamer Platz, Tiergarten, Mitte, Berlin, 10785, Germany"


class FakeResponse:
    def __init__(self, payload, status=200):
        self._payload = payload
        self.status_code = status

    def raise_for_status(self):
        if self.status_code >= 400:
            raise RuntimeError(f"HTTP {self.status_code}")

    def json(self):
        return self._payload


class FakeSession:
    """Scripted responses; records every request."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def get(self, url, params=None, timeout=None, headers=None):
        self.calls.append({"url": url, "params": params, "headers": headers})
        action = self.responses.pop(0)
        if isinstance(action, Exception):
            raise action
        return action


class FakeClock:
    def __init__(self):
        self.now = 0.0
        self.sleeps = []

    def time(self):
        return self.now

    def sleep(self, seconds):
        self.sleeps.append(seconds)
        self.now += seconds


def make_client(tmp_path, responses, **kwargs):
    clock = FakeClock()
    session = FakeSession(responses)
    client = GeocodeClient(
        cache_path=tmp_path / "cache.jsonl",
        base_url="http://geocoder.test",
        session=session,
        time_fn=clock.time,
        sleep_fn=clock.sleep,
        **kwargs,
    )
    return client, session, clock


def test_fetch_and_cache(tmp_path):
    client, session, _ = make_client(tmp_path, [FakeResponse({"display_name": BERLIN_ADDRESS})])
    assert client.reverse_geocode(*BERLIN) == BERLIN_ADDRESS
    assert len(session.calls) == 1
    assert session.calls[0]["headers"]["User-Agent"]
    assert session.calls[0]["params"]["format"] == "jsonv2"
    # second call: cache hit, no network
    assert client.reverse_geocode(*BERLIN) == BERLIN_ADDRESS
    assert len(session.calls) == 1


def test_cache_persists_across_clients(tmp_path):
    client, session, _ = make_client(tmp_path, [FakeResponse({"display_name": BERLIN_ADDRESS})])
    client.reverse_geocode(*BERLIN)

    fresh, fresh_session, _ = make_client(tmp_path, [])
    assert fresh.reverse_geocode(*BERLIN) == BERLIN_ADDRESS
    assert fresh_session.calls == []

    lines = (tmp_path / "cache.jsonl").read_text().strip().splitlines()
    row = json.loads(lines[0])
    assert row["address"] == BERLIN_ADDRESS
    assert row["lat"] == pytest.approx(BERLIN[0], abs=1e-6)
    assert "fetched_at" in row


def test_rounded_coordinates_share_cache_entry(tmp_path):
    client, session, _ = make_client(tmp_path, [FakeResponse({"display_name": BERLIN_ADDRESS})])
    client.reverse_geocode(*BERLIN)
    client.reverse_geocode(BERLIN[0] + 4e-7, BERLIN[1] - 4e-7)  # same to 1e-6
    assert len(session.calls) == 1


def test_invalid_coordinates(tmp_path):
    client, _, _ = make_client(tmp_path, [])
    with pytest.raises(InvalidCoordinateError):
        client.reverse_geocode(91.0, 0.0)
    with pytest.raises(InvalidCoordinateError):
        client.reverse_geocode(0.0, -181.0)


def test_unavailable_after_retries(tmp_path):
    errors = [ConnectionError("down"), ConnectionError("down"), ConnectionError("down")]
    client, session, clock = make_client(tmp_path, errors)
    with pytest.raises(GeocodeUnavailableError):
        client.reverse_geocode(*BERLIN)
    assert len(session.calls) == 3
    # exponential backoff between attempts: 1s then 2s
    assert clock.sleeps[0] == pytest.approx(1.0)
    assert 2.0 in [pytest.approx(s) for s in clock.sleeps] or any(
        abs(s - 2.0) < 1e-9 for s in clock.sleeps
    )


def test_retry_then_success(tmp_path):
    responses = [ConnectionError("down"), FakeResponse({"display_name": BERLIN_ADDRESS})]
    client, session, _ = make_client(tmp_path, responses)
    assert client.reverse_geocode(*BERLIN) == BERLIN_ADDRESS
    assert len(session.calls) == 2


def test_rate_limit_spacing(tmp_path):
    responses = [
        FakeResponse({"display_name": "A"}),
        FakeResponse({"display_name": "B"}),
    ]
    client, session, clock = make_client(tmp_path, responses)
    client.reverse_geocode(10.0, 10.0)
    client.reverse_geocode(20.0, 20.0)  # different key: real request, throttled
    assert len(session.calls) == 2
    assert clock.sleeps and clock.sleeps[-1] == pytest.approx(1.0)
