"""Ad-hoc experiment sweep used while calibrating desk-scale defaults."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")
from palseg.core_types import Hyperparams
from palseg.datagen import DatasetConfig, generate_dataset
from palseg.metrics import evaluate
from palseg.scheduler import run_experiment


def run(tag, hard_contrast, mode="pal", **hp_kw):
    config = DatasetConfig(hard_contrast=hard_contrast)
    easy_spec, hard_spec = config.specs()
    records, store, metas = generate_dataset(200, 0.5, easy_spec, hard_spec,
                                             seed=42)
    hp = Hyperparams(total_epochs=60, seed=42, **hp_kw)
    t0 = time.time()
    rep = run_experiment(records, store, hp, mode=mode)
    final = rep.final
    # per-difficulty breakdown of final predictions
    preds = {}
    net = rep.predictor
    for start in range(0, len(rep.records), 16):
        chunk = rep.records[start:start + 16]
        probs = net.forward(np.stack([r.image.data for r in chunk]))
        for rec, prob in zip(chunk, probs):
            preds[rec.id] = prob > 0.5
    by_diff = {}
    for diff in ("easy", "hard"):
        ids = [m.id for m in metas if m.difficulty == diff]
        res = evaluate([preds[i] for i in ids],
                       [store.eval_mask(i) for i in ids])
        by_diff[diff] = res.iou
    print(f"[{tag}] {time.time()-t0:.0f}s final iou={final['iou']:.3f} "
          f"pd={final['pd']:.3f} fa={final['fa']:.2e} "
          f"labq={final['label_iou_gt']:.3f} easy_iou={by_diff['easy']:.3f} "
          f"hard_iou={by_diff['hard']:.3f}", flush=True)
    return rep


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "all"
    if which in ("all", "a"):
        run("full hc(0.18,0.4)", (0.18, 0.4), mode="full-supervision")
        run("pal  hc(0.18,0.4) r=def", (0.18, 0.4))
    if which in ("all", "b"):
        run("pal  hc(0.18,0.4) r=0.02", (0.18, 0.4), r=0.02)
        run("full hc(0.25,0.45)", (0.25, 0.45), mode="full-supervision")
    if which in ("all", "c"):
        run("pal  hc(0.25,0.45) r=def", (0.25, 0.45))
        run("pal  hc(0.25,0.45) r=0.02", (0.25, 0.45), r=0.02)
