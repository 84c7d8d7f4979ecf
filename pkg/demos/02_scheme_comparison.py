"""Passive, inhale-only and dog-nose sampling side by side.

All three runs share the same source and pose; only the motor schedules
differ. Durations above threshold are compared at one common threshold
(10% of the largest peak) so that a weak run is not judged against its own
tiny maximum.
"""
from _common import parser, preset
from dognose.metrics import compare_schemes, compute_metrics
from dognose.scenarios import run_scenario

args = parser(__doc__.splitlines()[0]).parse_args()
names = ["passive_h5.08cm", "inhale_h5.08cm", "dognose_h5.08cm"]
traces = {n: run_scenario(preset(n, args.full)).trace for n in names}
threshold = 0.1 * max(t.reading.max() for t in traces.values())
reports = {n: compute_metrics(t, threshold=threshold) for n, t in traces.items()}

for n, r in reports.items():
    print(f"{n:18s} peak {r.peak:10.4g}  above {threshold:.3g}: {r.duration_above:5g} s")
cmp_ = compare_schemes(reports)
for metric in ("peak", "duration_above", "auc"):
    print(f"{metric:15s} {cmp_.ordering_text(metric)}")
