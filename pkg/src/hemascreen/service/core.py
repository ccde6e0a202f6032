"""Domain service behind the HTTP app: records, screenings, calibration and
the active-learning retraining loop.

Retraining only swaps the live bundle when the candidate's held-out Spearman
rho does not regress by more than 0.02 against the current bundle on the same
fold; every decision lands in the event log either way.
"""

from __future__ import annotations

import os
import shutil
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import models, pipeline
from ..features import REGIONS
from ..imgio import ImageDecodeError, decode_bytes
from ..models import CalibrationParams
from ..reports import LabReport, OcrConfig, ingest_report_image, make_ocr_client
from .store import EventStore, parse_ts


class ServiceError(Exception):
    status = 500
    code = "internal"

    def __init__(self, message: str, stage: str = "service"):
        super().__init__(message)
        self.stage = stage

    def body(self) -> dict:
        return {"code": self.code, "message": str(self), "stage": self.stage}


class NotFoundError(ServiceError):
    status = 404
    code = "not_found"


class ConflictError(ServiceError):
    status = 409
    code = "conflict"


class ValidationError(ServiceError):
    status = 422
    code = "invalid"


class PipelineFailure(ServiceError):
    status = 500
    code = "pipeline"


@dataclass
class ServiceConfig:
    data_dir: Path
    bundle_path: Path | None = None
    pipeline_config_path: Path | None = None
    host: str = "127.0.0.1"
    port: int = 8000
    api_token: str | None = None
    retrain_min_new: int = 25
    pairing_window_h: float = 24.0
    ocr: OcrConfig = field(default_factory=OcrConfig)

    @classmethod
    def from_env(cls, env=None, **overrides) -> "ServiceConfig":
        env = os.environ if env is None else env
        listen = env.get("HEMASCREEN_LISTEN", "127.0.0.1:8000")
        host, _, port = listen.rpartition(":")
        kwargs = dict(
            data_dir=Path(env.get("HEMASCREEN_DATA_DIR", "./hemascreen-data")),
            bundle_path=Path(env["HEMASCREEN_BUNDLE"]) if "HEMASCREEN_BUNDLE" in env else None,
            pipeline_config_path=(
                Path(env["HEMASCREEN_CONFIG"]) if "HEMASCREEN_CONFIG" in env else None
            ),
            host=host or "127.0.0.1",
            port=int(port or 8000),
            api_token=env.get("HEMASCREEN_API_TOKEN"),
            retrain_min_new=int(env.get("HEMASCREEN_RETRAIN_MIN_NEW", "25")),
            ocr=OcrConfig.from_env(env),
        )
        kwargs.update(overrides)
        return cls(**kwargs)


class ScreeningService:
    def __init__(self, config: ServiceConfig, clock=None):
        self.config = config
        self.store = EventStore(config.data_dir, clock=clock)
        if config.pipeline_config_path:
            self.pipeline_config = pipeline.load_config(config.pipeline_config_path)
        else:
            self.pipeline_config = pipeline.PipelineConfig()
        self._bundle_lock = threading.Lock()
        self._bundle: models.ModelBundle | None = None
        self._bootstrap_bundle()

    # ------------------------------------------------------------ bundle

    def _bootstrap_bundle(self):
        if self.store.active_bundle is None:
            if self.config.bundle_path is None:
                raise ValidationError("no model bundle configured", stage="startup")
            bundle = models.load_bundle(self.config.bundle_path)
            bundle.bundle_version = 1
            target = self.store.bundle_path(1)
            models.save_bundle(bundle, target)
            self.store.append("bundle_swapped", {
                "version": 1,
                "path": str(target.relative_to(self.store.data_dir)),
                "reason": "bootstrap",
                "metrics": bundle.metrics,
                "clear_queue": False,
            })
            self._bundle = bundle
        else:
            path = self.store.data_dir / self.store.active_bundle["path"]
            self._bundle = models.load_bundle(path)

    @property
    def bundle(self) -> models.ModelBundle:
        with self._bundle_lock:
            return self._bundle

    def _swap_bundle(self, bundle: models.ModelBundle, reason: str, metrics: dict):
        target = self.store.bundle_path(bundle.bundle_version)
        models.save_bundle(bundle, target)
        self.store.append("bundle_swapped", {
            "version": bundle.bundle_version,
            "path": str(target.relative_to(self.store.data_dir)),
            "reason": reason,
            "metrics": metrics,
            "clear_queue": True,
        })
        with self._bundle_lock:
            self._bundle = bundle

    def bundle_info(self) -> dict:
        bundle = self.bundle
        return {
            "version": bundle.bundle_version,
            "feature_version": bundle.feature_version,
            "trained_at": bundle.trained_at,
            "metrics": bundle.metrics,
            "training_queue_size": len(self.store.training_queue),
        }

    # ------------------------------------------------------------ patients

    def create_patient(self, payload: dict) -> dict:
        required = {"id", "age_years", "sex"}
        missing = required - set(payload)
        if missing:
            raise ValidationError(f"missing fields: {sorted(missing)}", stage="patients")
        pid = str(payload["id"])
        if pid in self.store.patients:
            raise ConflictError(f"patient {pid} already exists", stage="patients")
        age = float(payload["age_years"])
        sex = payload["sex"]
        pregnant = bool(payload.get("pregnant", False))
        altitude = float(payload.get("altitude_m", 0.0))
        if age < 0:
            raise ValidationError("age must be >= 0", stage="patients")
        if sex not in ("female", "male"):
            raise ValidationError(f"sex must be female or male, got {sex!r}", stage="patients")
        if pregnant and sex != "female":
            raise ValidationError("pregnant flag requires sex=female", stage="patients")
        record = {
            "id": pid, "age_years": age, "sex": sex, "pregnant": pregnant,
            "altitude_m": altitude, "created_at": self.store.clock().isoformat(),
        }
        self.store.append("patient_created", record)
        return record

    def get_patient(self, patient_id: str) -> dict:
        record = self.store.patients.get(patient_id)
        if record is None:
            raise NotFoundError(f"unknown patient {patient_id}", stage="patients")
        calibration = self.store.calibrations.get(patient_id)
        return {
            **record,
            "calibration": {
                "gain": calibration["gain"] if calibration else 1.0,
                "offset": calibration["offset"] if calibration else 0.0,
                "n_points": calibration["n_points"] if calibration else 0,
            },
        }

    def list_patients(self) -> list:
        return [self.get_patient(pid) for pid in sorted(self.store.patients)]

    # ------------------------------------------------------------ captures

    def ingest_capture(self, patient_id: str, region: str, image_bytes: bytes) -> dict:
        if patient_id not in self.store.patients:
            raise NotFoundError(f"unknown patient {patient_id}", stage="captures")
        if region not in REGIONS:
            raise ValidationError(f"unknown region {region!r}", stage="captures")
        try:
            decode_bytes(image_bytes)
        except ImageDecodeError as exc:
            raise ValidationError(str(exc), stage="captures") from exc
        digest = self.store.store_blob(image_bytes)
        seq = self.store.append("capture_ingested", {
            "patient_id": patient_id, "region": region, "blob": digest,
        })
        return {"capture_id": f"cap-{seq}", "blob": digest, "region": region}

    # ------------------------------------------------------------ screening

    def run_screening(self, patient_id: str) -> dict:
        patient = self.store.patients.get(patient_id)
        if patient is None:
            raise NotFoundError(f"unknown patient {patient_id}", stage="screenings")
        latest = self.store.latest_captures(patient_id)
        if not latest:
            raise ValidationError("no captures for patient", stage="screenings")
        images = {}
        for region, capture in latest.items():
            images[region] = decode_bytes(self.store.load_blob(capture["blob"]))

        calibration = self._calibration(patient_id)
        bundle = self.bundle
        try:
            result = pipeline.screen_patient(
                images, bundle, self.pipeline_config,
                age_years=patient["age_years"], sex=patient["sex"],
                pregnant=patient["pregnant"], altitude_m=patient["altitude_m"],
                calibration=calibration,
            )
        except pipeline.PipelineError as exc:
            raise PipelineFailure(str(exc), stage=exc.stage) from exc

        vectors = {}
        for region in REGIONS:
            fv = result.vectors.get(region)
            if fv is not None and fv.valid:
                vectors[region] = [float(v) for v in fv.values]
            else:
                vectors[region] = None

        ts = self.store.clock().isoformat()
        payload = {
            "patient_id": patient_id,
            "ts": ts,
            "bundle_version": bundle.bundle_version,
            "raw_hb": result.raw_hb,
            "calibrated_hb": result.calibrated_hb,
            "severity": result.severity,
            "fused_class": result.fused_class,
            "flags": result.flags,
            "per_region": result.per_region,
            "vectors": vectors,
            "calibration": {"gain": calibration.gain, "offset": calibration.offset,
                            "n_points": calibration.n_points},
        }
        seq = self.store.append("screening_recorded", payload, ts=ts)
        return {**payload, "screening_id": f"scr-{seq}"}

    def _calibration(self, patient_id: str) -> CalibrationParams:
        stored = self.store.calibrations.get(patient_id)
        if stored is None:
            return CalibrationParams()
        return CalibrationParams(stored["gain"], stored["offset"], stored["n_points"])

    # ------------------------------------------------------------ reports

    def ingest_report(self, patient_id: str, payload: dict | None = None,
                      image_bytes: bytes | None = None) -> dict:
        patient = self.store.patients.get(patient_id)
        if patient is None:
            raise NotFoundError(f"unknown patient {patient_id}", stage="reports")
        ts = self.store.clock()
        if image_bytes is not None:
            client = make_ocr_client(self.config.ocr)
            report = ingest_report_image(image_bytes, client, timestamp=ts)
        else:
            if payload is None or "hb" not in payload:
                raise ValidationError("report needs an hb value or an image", stage="reports")
            try:
                report = LabReport(
                    hb=float(payload["hb"]),
                    hct=float(payload["hct"]) if payload.get("hct") is not None else None,
                    mcv=float(payload["mcv"]) if payload.get("mcv") is not None else None,
                    timestamp=parse_ts(payload["timestamp"]) if payload.get("timestamp") else ts,
                    source="typed",
                )
            except ValueError as exc:
                raise ValidationError(str(exc), stage="reports") from exc

        report_ts = (report.timestamp or ts).isoformat()
        self.store.append("report_ingested", {
            "patient_id": patient_id, "hb": report.hb, "hct": report.hct,
            "mcv": report.mcv, "source": report.source, "ts": report_ts,
        }, ts=report_ts)

        pairs, paired_screening = self._calibration_pairs(patient_id, report_ts)
        params = models.fit_calibration(pairs)
        self.store.append("calibration_updated", {
            "patient_id": patient_id, "gain": params.gain, "offset": params.offset,
            "n_points": params.n_points,
        })

        queued = False
        if paired_screening is not None and all(
            paired_screening["vectors"].get(r) for r in REGIONS
        ):
            self.store.append("training_sample_queued", {
                "patient_id": patient_id,
                "hb": report.hb,
                "class": models.diagnose(report.hb, patient["age_years"], patient["sex"],
                                         patient["pregnant"], self.bundle.thresholds),
                "age_years": patient["age_years"], "sex": patient["sex"],
                "pregnant": patient["pregnant"], "altitude_m": patient["altitude_m"],
                "vectors": paired_screening["vectors"],
            })
            queued = True

        return {
            "calibration": {"gain": params.gain, "offset": params.offset,
                            "n_points": params.n_points},
            "queued_for_training": queued,
            "paired_screening": (f"scr-{paired_screening['seq']}"
                                 if paired_screening is not None else None),
        }

    def _calibration_pairs(self, patient_id: str, new_report_ts: str):
        """(raw prediction, lab value) pairs inside the pairing window.

        Each report pairs with its nearest screening within the window.
        """
        window = self.config.pairing_window_h * 3600.0
        screenings = self.store.screenings.get(patient_id, [])
        pairs = []
        paired_for_new = None
        for report in self.store.reports.get(patient_id, []):
            report_time = parse_ts(report["ts"])
            best, best_dt = None, None
            for screening in screenings:
                dt = abs((parse_ts(screening["ts"]) - report_time).total_seconds())
                if dt <= window and (best_dt is None or dt < best_dt):
                    best, best_dt = screening, dt
            if best is not None:
                pairs.append((best["raw_hb"], report["hb"]))
                if report["ts"] == new_report_ts:
                    paired_for_new = best
        return pairs, paired_for_new

    # ------------------------------------------------------------ history

    def get_history(self, patient_id: str) -> dict:
        if patient_id not in self.store.patients:
            raise NotFoundError(f"unknown patient {patient_id}", stage="history")
        entries = []
        for screening in self.store.screenings.get(patient_id, []):
            entries.append({
                "kind": "screening",
                "timestamp": screening["ts"],
                "screening_id": f"scr-{screening['seq']}",
                "raw_hb": screening["raw_hb"],
                "calibrated_hb": screening["calibrated_hb"],
                "severity": screening["severity"],
                "fused_class": screening["fused_class"],
                "flags": screening["flags"],
                "bundle_version": screening["bundle_version"],
                "per_region": screening["per_region"],
            })
        for report in self.store.reports.get(patient_id, []):
            entries.append({
                "kind": "lab_report",
                "timestamp": report["ts"],
                "hb": report["hb"],
                "hct": report["hct"],
                "mcv": report["mcv"],
                "source": report["source"],
            })
        entries.sort(key=lambda e: (e["timestamp"],
                                    e.get("screening_id", ""), e["kind"]))
        return {"patient_id": patient_id, "entries": entries}

    # ------------------------------------------------------------ retrain

    def retrain(self, min_new: int | None = None) -> dict:
        min_new = self.config.retrain_min_new if min_new is None else min_new
        queue = list(self.store.training_queue)
        old = self.bundle
        if len(queue) < min_new:
            reason = f"queue has {len(queue)} samples, need {min_new}"
            self.store.append("retrain_skipped", {"reason": reason,
                                                  "queue_size": len(queue)})
            return {"status": "noop", "reason": reason, "version": old.bundle_version}

        try:
            base_rows = pipeline.training_rows_from_csv(old.training_csv)
            queue_rows = [
                pipeline.TrainingRow(
                    patient_id=s["patient_id"], hb=s["hb"], cls=s["class"],
                    age_years=s["age_years"], sex=s["sex"], pregnant=s["pregnant"],
                    altitude_m=s["altitude_m"],
                    vectors={r: np.asarray(s["vectors"][r], dtype=np.float64)
                             for r in REGIONS},
                )
                for s in queue
            ]
            rows = base_rows + queue_rows
            train_rows, heldout = pipeline.split_rows(rows, 0.2,
                                                      self.pipeline_config.seed)
            candidate = pipeline.train_bundle(train_rows, self.pipeline_config,
                                              bundle_version=old.bundle_version + 1)
            new_metrics = pipeline.evaluate_bundle(candidate, heldout)
            old_metrics = pipeline.evaluate_bundle(old, heldout)
            candidate.metrics = {
                "holdout_spearman": new_metrics["spearman_rho"],
                "holdout_mae": new_metrics["mae_g_dl"],
                "previous_spearman": old_metrics["spearman_rho"],
            }
        except Exception as exc:
            self.store.append("retrain_rejected", {
                "reason": f"training failed: {exc}",
                "candidate_version": old.bundle_version + 1,
            })
            return {"status": "rejected", "reason": str(exc),
                    "version": old.bundle_version}

        if new_metrics["spearman_rho"] < old_metrics["spearman_rho"] - 0.02:
            reason = (
                f"holdout rho regressed: {new_metrics['spearman_rho']:.4f} vs "
                f"{old_metrics['spearman_rho']:.4f}"
            )
            self.store.append("retrain_rejected", {
                "reason": reason, "candidate_version": candidate.bundle_version,
                "metrics": candidate.metrics,
            })
            return {"status": "rejected", "reason": reason,
                    "version": old.bundle_version}

        self._swap_bundle(candidate, "retrain", candidate.metrics)
        return {"status": "swapped", "version": candidate.bundle_version,
                "previous_version": old.bundle_version,
                "metrics": candidate.metrics}


def cleanup_data_dir(path):
    """Test helper: wipe a service data directory."""
    shutil.rmtree(path, ignore_errors=True)
