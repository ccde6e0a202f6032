"""
Feature vectors, classification and robust regression
=====================================================

Each region image becomes a fixed 28-slot colour-statistics vector; a
3-class classifier routes the patient to a severity band, and a per-class
Huber regressor produces the haemoglobin estimate.  Personal calibration is
a clamped affine correction fitted against lab values.
"""

import numpy as np

from hemascreen import dataset, features, models, pipeline

# extract the feature vector for one region
patient = dataset.synth_corpus(1, seed=9)[0]
fv = features.extract(patient.images["nailbed"], patient.roi_masks["nailbed"],
                      "nailbed", altitude_m=patient.altitude_m,
                      age_years=patient.age_years)
named = dict(zip(features.FEATURE_NAMES, np.round(fv.values, 2)))
print(f"planted hb {patient.hb} g/dL -> a* mean {named['a_star_mean']}, "
      f"erythema {named['erythema']}, R-G {named['rg_diff']}")

# robust regression shrugs off gross outliers that wreck least squares
rng = np.random.default_rng(10)
x = rng.normal(size=(200, 3))
y = x @ np.array([2.0, -1.0, 0.5]) + 11.0
y[:20] += 40.0  # 10% corrupted lab values
huber = models.train_regressor(x, y, "mild")
ols, *_ = np.linalg.lstsq(np.hstack([x, np.ones((200, 1))]), y, rcond=None)
print("planted coefficients:  [ 2.  -1.   0.5]")
print("huber recovers:       ", np.round(huber.coefficients, 3))
print("plain OLS drifts to:  ", np.round(ols[:3], 3))

# the classifier separates the three severity bands by colour statistics
corpus = dataset.synth_corpus(40, seed=12)
config = pipeline.PipelineConfig()
rows, _ = pipeline.rows_from_patients(corpus, config)
region_rows = np.array([r.vectors[reg] for r in rows for reg in features.REGIONS])
region_labels = [r.cls for r in rows for _ in features.REGIONS]
clf = models.train_classifier(region_rows, region_labels)
hits = sum(models.classify(clf, row)[0] == lab
           for row, lab in zip(region_rows, region_labels))
print(f"classifier training accuracy: {hits / len(region_rows):.2%}")

# calibration: two lab values against two raw predictions fit a line
params = models.fit_calibration([(10.0, 11.0), (12.0, 13.0)])
print(f"calibration gain={params.gain}, offset={params.offset} "
      f"-> raw 11.0 becomes {params.apply(11.0)}")

# diagnosis is a pure threshold lookup keyed by demographic group
for hb in (6.5, 10.0, 14.0):
    print(f"hb {hb:4.1f} g/dL, adult man ->",
          models.diagnose(hb, 40, "male", False, models.DEFAULT_THRESHOLDS))
