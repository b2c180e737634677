"""The end-to-end synthetic run behind the acceptance suite.

Run: python demos/full_experiment.py [separation] [seed]
200 development and 200 blind subjects, five fold models per category.
Takes roughly 10-15 minutes on one core; prints the blind-set metrics JSON.
"""
import logging
import sys
import tempfile

from covid_acoustics.pipeline import ExperimentConfig, metrics_json, run_experiment

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
cfg = ExperimentConfig()
if len(sys.argv) > 1:
    cfg = ExperimentConfig(separation=float(sys.argv[1]), seed=int(sys.argv[2]) if len(sys.argv) > 2 else 0)
report = run_experiment(tempfile.mkdtemp(), cfg)
print(metrics_json(report))
print(f"runtime {report['runtime_s'] / 60:.1f} min")
