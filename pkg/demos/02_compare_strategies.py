"""Train the dual-level models briefly and compare them with the baselines.

Defaults keep the run to a few minutes; raise ITERATIONS toward 300 to
reproduce the acceptance-suite comparison.

    python demos/02_compare_strategies.py [iterations]
"""
import sys
import tempfile
import time
from pathlib import Path

from vwapx.evaluation import evaluate, format_summary
from vwapx.synth import GeneratorConfig, synth_series
from vwapx.trainer import MarketData, TrainConfig, build_models, train

ITERATIONS = int(sys.argv[1]) if len(sys.argv) > 1 else 20

data = MarketData.from_synthetic(synth_series(GeneratorConfig(), 80, seed=2024))
train_days, test_days = data.split(60, 20)
out = Path(tempfile.mkdtemp(prefix="vwapx_demo_"))

for mode in ("oracle", "naive", "ppo", "hul", "tul"):
    cfg = TrainConfig(mode=mode, outer_iterations=ITERATIONS)
    t0 = time.perf_counter()
    if mode in ("hul", "tul", "ppo"):
        models = train(cfg, train_days, out / mode)
    else:
        models = build_models(cfg, train_days.ratios)
    s = evaluate(models, cfg, test_days, seed=0)
    print(f"{format_summary(s)}  [{time.perf_counter() - t0:.0f}s]")
print(f"checkpoints and training logs under {out}")
