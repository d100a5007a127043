"""Reverse-geocoding client with a persistent cache and rate limiting.

Looks up addresses from a Nominatim-compatible endpoint (``<base>/reverse``
with ``format=jsonv2``). Coordinates are cached to an append-only JSON-lines
file keyed on 1e-6-degree rounding, and network access is serialized at one
request per second. When the endpoint stays unreachable the caller gets
GeocodeUnavailableError and should proceed without an address.
"""
from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import GeocodeUnavailableError, InvalidCoordinateError

GEOCODER_URL_ENV = "GEOCLAP_GEOCODER_URL"
DEFAULT_GEOCODER_URL = "https://nominatim.openstreetmap.org"
USER_AGENT = "geoclap/0.1 (soundscape research client)"

_COORD_DECIMALS = 6


@dataclass(frozen=True)
class GeocodeCacheEntry:
    lat: float
    lon: float
    address: str
    fetched_at: float


def _cache_key(lat: float, lon: float) -> tuple[float, float]:
    return round(lat, _COORD_DECIMALS), round(lon, _COORD_DECIMALS)


class GeocodeClient:
    """Cache-first reverse geocoder.

    ``time_fn``/``sleep_fn`` exist so tests can drive the rate limiter and
    backoff without real waiting.
    """

    def __init__(
        self,
        cache_path: str | Path | None = None,
        base_url: str | None = None,
        min_interval_s: float = 1.0,
        max_retries: int = 3,
        timeout_s: float = 10.0,
        session: requests.Session | None = None,
        time_fn=time.monotonic,
        sleep_fn=time.sleep,
    ):
        self.base_url = (base_url or os.environ.get(GEOCODER_URL_ENV, DEFAULT_GEOCODER_URL)).rstrip("/")
        self.cache_path = Path(cache_path) if cache_path else None
        self.min_interval_s = min_interval_s
        self.max_retries = max_retries
        self.timeout_s = timeout_s
        self.session = session or requests.Session()
        self._time = time_fn
        self._sleep = sleep_fn
        self._last_request_at: float | None = None
        self._lock = threading.Lock()
        self._cache: dict[tuple[float, float], GeocodeCacheEntry] = {}
        self.request_count = 0
        if self.cache_path and self.cache_path.exists():
            self._load_cache()

    def _load_cache(self) -> None:
        with open(self.cache_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                entry = GeocodeCacheEntry(row["lat"], row["lon"], row["address"], row["fetched_at"])
                self._cache[_cache_key(entry.lat, entry.lon)] = entry

    def _append_cache(self, entry: GeocodeCacheEntry) -> None:
        self._cache[_cache_key(entry.lat, entry.lon)] = entry
        if self.cache_path is None:
            return
        self.cache_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.cache_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "lat": entry.lat,
                "lon": entry.lon,
                "address": entry.address,
                "fetched_at": entry.fetched_at,
            }) + "\n")

    def _throttle(self) -> None:
        if self._last_request_at is None:
            return
        wait = self.min_interval_s - (self._time() - self._last_request_at)
        if wait > 0:
            self._sleep(wait)

    def reverse_geocode(self, lat: float, lon: float) -> str:
        """Address for a coordinate; one network request per distinct
        (rounded) coordinate, ever."""
        if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
            raise InvalidCoordinateError(f"({lat}, {lon}) outside world bounds")
        key = _cache_key(lat, lon)
        cached = self._cache.get(key)
        if cached is not None:
            return cached.address
        with self._lock:
            cached = self._cache.get(key)
            if cached is not None:
                return cached.address
            address = self._fetch(lat, lon)
            self._append_cache(GeocodeCacheEntry(key[0], key[1], address, time.time()))
            return address

    def _fetch(self, lat: float, lon: float) -> str:
        url = f"{self.base_url}/reverse"
        params = {"lat": f"{lat:.6f}", "lon": f"{lon:.6f}", "format": "jsonv2"}
        backoff = 1.0
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            if attempt:
                self._sleep(backoff)
                backoff *= 2.0
            self._throttle()
            self._last_request_at = self._time()
            self.request_count += 1
            try:
                resp = self.session.get(
                    url, params=params, timeout=self.timeout_s,
                    headers={"User-Agent": USER_AGENT},
                )
                resp.raise_for_status()
                display_name = resp.json().get("display_name")
                if not display_name:
                    raise ValueError("response missing display_name")
                return str(display_name)
            except Exception as exc:  # noqa: BLE001 - every failure means retry
                last_error = exc
        raise GeocodeUnavailableError(f"geocoder unreachable after {self.max_retries} attempts: {last_error}")
