"""Train the planner on PlanarStand with and without the stabilizing reward.

Both runs share everything but lambda. Pass a step budget to shorten:
    python3 demos/03_train_stand.py 8000
"""
import sys
from pathlib import Path

from stabshape import config
from stabshape.trainer import run

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
here = Path(__file__).parent
for lam in (1.0, 0.0):
    cfg = config.load_config(here / "stand.cfg", [f"reward.lambda={lam}", f"trainer.total_steps={steps}",
                                                  "trainer.target_return_fraction=0.8", "run.output_root=runs/demo"])
    res = run(cfg)
    best = max(res.episode_returns) if res.episode_returns else float("nan")
    print(f"lambda={lam}: {res.steps} steps, {res.episodes} episodes, best return {best:.1f}, "
          f"first reach of 80%: {res.first_reach_step}, {res.wall_time_s:.0f} s -> {res.run_dir}")
