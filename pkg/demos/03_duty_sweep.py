"""Sweep the inhale PWM duty at 60, 80 and 100 percent.

This is the three-speed motor test redone as a grid sweep. Whether 80%
really underperforms both neighbours is an open question; the sweep simply
reports what the model does.
"""
from _common import parser, preset
from dognose.optimizer import Objective, ObjectiveKind, Param, ParamSpace, grid_sweep

ap = parser(__doc__.splitlines()[0])
ap.add_argument("--workers", type=int, default=1)
args = ap.parse_args()

base = preset("dognose_h5.08cm", args.full)
space = ParamSpace([Param("inhale_duty", 0.6, 1.0, 0.2)])
for kind in (ObjectiveKind.PEAK, ObjectiveKind.AUC):
    res = grid_sweep(space, base, Objective(kind), workers=args.workers)
    print(kind.value)
    for row in res.rows:
        print(f"  duty {row.values['inhale_duty']:.1f}: {row.objective:.5g}")
