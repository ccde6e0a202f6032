"""
Patient-monitoring service session
==================================

The service persists everything as an append-only event log plus
content-addressed blobs; replaying the log after a restart reconstructs the
exact same state.  This script drives a session directly against the domain
service (the HTTP app wraps the same object).
"""

import tempfile
from pathlib import Path

from hemascreen import dataset, imgio, models, pipeline
from hemascreen.service.core import ScreeningService, ServiceConfig

workdir = Path(tempfile.mkdtemp(prefix="hemascreen-demo-"))
print(f"working under {workdir}")

# train a bundle for the service to bootstrap from
config = pipeline.PipelineConfig()
corpus = dataset.synth_corpus(30, seed=33)
rows, _ = pipeline.rows_from_patients(corpus, config, jobs=4)
bundle = pipeline.train_bundle(rows, config)
bundle_path = workdir / "bundle.zip"
models.save_bundle(bundle, bundle_path)

service = ScreeningService(ServiceConfig(data_dir=workdir / "data",
                                         bundle_path=bundle_path))

# register a patient and upload the three region photographs
subject = dataset.synth_corpus(31, seed=34)[30]
service.create_patient({"id": "demo-1", "age_years": subject.age_years,
                        "sex": subject.sex, "pregnant": subject.pregnant,
                        "altitude_m": subject.altitude_m})
for region, image in subject.images.items():
    service.ingest_capture("demo-1", region, imgio.encode_png(image))

screening = service.run_screening("demo-1")
print(f"screening: raw {screening['raw_hb']:.2f} g/dL, severity "
      f"{screening['severity']} (planted {subject.hb})")

# a lab report within the pairing window updates the personal calibration
response = service.ingest_report("demo-1", payload={"hb": subject.hb})
print("calibration after one paired report:", response["calibration"])
print("queued for retraining:", response["queued_for_training"])

# retraining is gated: the queue is far below the default threshold
print("retrain attempt:", service.retrain()["status"])

# a restart replays the event log into identical history
history_before = service.get_history("demo-1")
restarted = ScreeningService(ServiceConfig(data_dir=workdir / "data",
                                           bundle_path=bundle_path))
history_after = restarted.get_history("demo-1")
print("history identical after replay:", history_before == history_after)
print(f"{len(history_after['entries'])} history entries "
      f"({[e['kind'] for e in history_after['entries']]})")
