"""
End-to-end screening walk-through
=================================

Synthesize a corpus with planted haemoglobin values, train a model bundle on
80% of the patients, and screen a held-out patient through the full
photograph-to-diagnosis pipeline.
"""

import json

import numpy as np

from hemascreen import dataset, models, pipeline

config = pipeline.PipelineConfig()
corpus = dataset.synth_corpus(60, seed=21)

print("extracting features for 60 synthetic patients ...")
rows, skipped = pipeline.rows_from_patients(corpus, config, jobs=4)
train_rows, test_rows = pipeline.split_rows(rows, 0.2, seed=21)
print(f"{len(train_rows)} train / {len(test_rows)} held-out patients"
      + (f", {len(skipped)} skipped" if skipped else ""))

bundle = pipeline.train_bundle(train_rows, config)
metrics = pipeline.evaluate_bundle(bundle, test_rows)
print(f"held-out Spearman rho {metrics['spearman_rho']}, "
      f"MAE {metrics['mae_g_dl']} g/dL, "
      f"severity accuracy {metrics['class_accuracy']}")

# screen one held-out patient from raw photographs
held_ids = {r.patient_id for r in test_rows}
patient = next(p for p in corpus if p.patient_id in held_ids)
screening = pipeline.screen_patient(
    patient.images, bundle, config,
    age_years=patient.age_years, sex=patient.sex,
    pregnant=patient.pregnant, altitude_m=patient.altitude_m,
)
print(f"\npatient {patient.patient_id}: planted hb {patient.hb} g/dL, "
      f"age {patient.age_years}, {patient.sex}")
print(json.dumps(screening.to_dict(), indent=2))

error = abs(screening.raw_hb - patient.hb)
print(f"\nabsolute error: {error:.2f} g/dL")

# a personal calibration layers on top without retraining
params = models.fit_calibration([(screening.raw_hb, patient.hb)])
print(f"after one lab report the personal offset would be {params.offset:+.2f} g/dL")
