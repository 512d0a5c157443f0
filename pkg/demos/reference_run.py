"""Full reference pipeline with the published IoT-23 numbers alongside.

Equivalent to ``advlab run --out out/reference --reference IoT-23``. The
published columns are annotations for comparing the shape of the results;
synthetic blobs are not expected to reproduce them.
"""

import sys

from advlab import harness

out = sys.argv[1] if len(sys.argv) > 1 else "out/reference"
report = harness.run_experiment(harness.ExperimentConfig(seed=0))
harness.emit_report(report, out, reference="IoT-23")

published = harness.REFERENCE_TABLE["IoT-23"]
print(f"{'phase':<16} {'view':<9} {'accuracy':>8} {'f1':>7} {'auc_paper':>9}   published f1/auc")
for row in report.rows:
    rec = row.metrics.to_record()
    f1, auc = published[row.label]
    print(f"{row.label:<16} {row.view:<9} {rec['accuracy']:>8} {rec['f1']:>7} {rec['auc_paper']:>9}"
          f"   {f1:.2f}/{auc:.2f}")
print(f"total {report.timing['total']:.0f}s; files in {out}")
