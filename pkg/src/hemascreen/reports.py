"""Blood-report ingestion: haemoglobin (plus HCT/MCV) from report text.

Real OCR/NLP stays behind the ``OcrClient`` seam; the stub client plays that
role deterministically in tests, and an HTTP client can be dropped in via
configuration without touching the parser.
"""

from __future__ import annotations

import datetime
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass


class UnparseableReportError(ValueError):
    """The text contains no recognisable haemoglobin reading."""


class ReportRangeError(ValueError):
    def __init__(self, field: str, value: float, bounds: str):
        super().__init__(f"{field} value {value} outside plausible range {bounds}")
        self.field = field


class OcrTransportError(RuntimeError):
    """The OCR backend could not be reached; distinct from a parse failure."""


@dataclass
class LabReport:
    hb: float  # g/dL
    hct: float | None = None  # percent
    mcv: float | None = None  # fL
    timestamp: datetime.datetime | None = None
    source: str = "typed"

    def __post_init__(self):
        if not 0.0 < self.hb <= 25.0:
            raise ReportRangeError("hb", self.hb, "(0, 25] g/dL")
        if self.hct is not None and not 0.0 < self.hct <= 100.0:
            raise ReportRangeError("hct", self.hct, "(0, 100] %")
        if self.mcv is not None and not 30.0 < self.mcv <= 150.0:
            raise ReportRangeError("mcv", self.mcv, "(30, 150] fL")
        if self.source not in ("typed", "parsed_text", "ocr"):
            raise ValueError(f"unknown report source {self.source!r}")


_NUMBER = r"([0-9]+(?:\.[0-9]+)?)"
_HB_RE = re.compile(rf"\b(?:ha?emoglobin|hgb|hb)\b[.:=\s]*{_NUMBER}", re.IGNORECASE)
_HCT_RE = re.compile(rf"\b(?:ha?ematocrit|hct)\b[.:=\s]*{_NUMBER}", re.IGNORECASE)
_MCV_RE = re.compile(rf"\b(?:mcv)\b[.:=\s]*{_NUMBER}", re.IGNORECASE)


def parse_report_text(
    text: str, timestamp: datetime.datetime | None = None, source: str = "parsed_text"
) -> LabReport:
    """Extract Hb (required) and HCT/MCV (optional) from free-form report text.

    Haemoglobin values above 25 are taken to be g/L and divided by 10.
    """
    if not text or not text.strip():
        raise UnparseableReportError("empty report text")
    hb_match = _HB_RE.search(text)
    if hb_match is None:
        raise UnparseableReportError("no haemoglobin reading found")
    hb = float(hb_match.group(1))
    if hb > 25.0:
        hb /= 10.0
    hct = None
    hct_match = _HCT_RE.search(text)
    if hct_match:
        hct = float(hct_match.group(1))
    mcv = None
    mcv_match = _MCV_RE.search(text)
    if mcv_match:
        mcv = float(mcv_match.group(1))
    return LabReport(hb=hb, hct=hct, mcv=mcv, timestamp=timestamp, source=source)


# ------------------------------------------------------------------ OCR seam

@dataclass
class OcrConfig:
    endpoint: str = "stub:"
    timeout_s: float = 10.0
    retries: int = 2

    @classmethod
    def from_env(cls, env=None) -> "OcrConfig":
        env = os.environ if env is None else env
        return cls(
            endpoint=env.get("HEMASCREEN_OCR_ENDPOINT", "stub:"),
            timeout_s=float(env.get("HEMASCREEN_OCR_TIMEOUT_S", "10")),
            retries=int(env.get("HEMASCREEN_OCR_RETRIES", "2")),
        )


class StubOcrClient:
    """Returns canned text; can simulate a number of transport failures first."""

    def __init__(self, text: str = "", fail_times: int = 0, retries: int = 2):
        self.text = text
        self.fail_times = fail_times
        self.retries = retries
        self.calls = 0

    def submit(self, image_bytes: bytes) -> str:
        self.calls += 1
        if self.fail_times < 0 or self.calls <= self.fail_times:
            raise OcrTransportError("stub transport failure")
        return self.text


class HttpOcrClient:
    """POSTs image bytes to an OCR endpoint and expects plain text back."""

    def __init__(self, endpoint: str, timeout_s: float = 10.0, retries: int = 2):
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self.retries = retries

    def submit(self, image_bytes: bytes) -> str:
        request = urllib.request.Request(
            self.endpoint, data=image_bytes,
            headers={"Content-Type": "application/octet-stream"},
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_s) as resp:
                return resp.read().decode("utf-8", errors="replace")
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise OcrTransportError(f"OCR endpoint unreachable: {exc}") from exc


def make_ocr_client(config: OcrConfig):
    if config.endpoint.startswith("stub:"):
        return StubOcrClient(config.endpoint[len("stub:"):],
                             retries=config.retries)
    if config.endpoint.startswith(("http://", "https://")):
        return HttpOcrClient(config.endpoint, config.timeout_s, config.retries)
    raise ValueError(f"unsupported OCR endpoint {config.endpoint!r}")


def ingest_report_image(
    image_bytes: bytes, client, timestamp: datetime.datetime | None = None
) -> LabReport:
    """Run OCR (with the client's retry budget) and parse the resulting text."""
    attempts = getattr(client, "retries", 0) + 1
    last_error = None
    for _ in range(attempts):
        try:
            text = client.submit(image_bytes)
            break
        except OcrTransportError as exc:
            last_error = exc
    else:
        raise OcrTransportError(
            f"OCR failed after {attempts} attempts: {last_error}"
        ) from last_error
    return parse_report_text(text, timestamp=timestamp, source="ocr")
