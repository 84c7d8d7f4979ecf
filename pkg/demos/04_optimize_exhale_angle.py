"""Search the exhale jet angle that maximises the captured peak.

The jet angle was never characterised on the hardware, which makes it a
natural first target for a derivative-free search. Each evaluation is a
full simulation, so the budget is kept small; the log in
runs/demo_angle/evaluations.jsonl lets an interrupted search resume.
"""
import math
from pathlib import Path

from _common import parser, preset
from dognose.optimizer import Objective, Param, ParamSpace, nelder_mead

ap = parser(__doc__.splitlines()[0])
ap.add_argument("--budget", type=int, default=12)
args = ap.parse_args()

out = Path("runs/demo_angle")
out.mkdir(parents=True, exist_ok=True)
space = ParamSpace([Param("exhale_angle", math.radians(15), math.radians(75))])
res = nelder_mead(space, preset("dognose_h5.08cm", args.full, duration=30.0), Objective(),
                  budget=args.budget, seed=0, log_path=out / "evaluations.jsonl")
best = math.degrees(res.best_params["exhale_angle"])
print(f"best angle {best:.1f} deg, peak {res.best_value:.4g} ug/m^3 "
      f"after {res.evaluations} runs ({'converged' if res.converged else 'budget spent'})")
