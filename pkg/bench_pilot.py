"""Pilot run for the paired ppce-vs-semeda benchmark (scratch, not shipped)."""
import sys
import time

import numpy as np

from semeda.datasets import gen_synthetic
from semeda.losses import LossConfig
from semeda.maskops import extract_edge_map, one_hot, perturb_mask
from semeda.metrics import edge_accuracy, trimap_miou
from semeda.networks import edge_net_forward, predict_labels
from semeda.training import TrainConfig, train_edge_net, train_seg_net

SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 0
SEG_EPOCHS = int(sys.argv[2]) if len(sys.argv) > 2 else 15
EDGE_EPOCHS = int(sys.argv[3]) if len(sys.argv) > 3 else 10

train = gen_synthetic(500, 64, 5, 100)
val = gen_synthetic(100, 64, 5, 200)
t0 = time.time()

edge_cfg = TrainConfig(edge_epochs=EDGE_EPOCHS, seed=SEED)
edge_params, _ = train_edge_net([s.mask for s in train], edge_cfg, n_classes=5)
accs = [edge_accuracy(edge_net_forward(edge_params,
                                       perturb_mask(one_hot(s.mask, 5), 0.0, 0)).edge_probs.value,
                      extract_edge_map(s.mask)) for s in val]
print(f"seed {SEED}: edge acc {np.mean(accs):.4f} ({time.time()-t0:.0f}s)", flush=True)

results = {}
for strategy, lams in (("ppce", (0, 0, 0)), ("semeda", (0, 1, 0))):
    t1 = time.time()
    loss = LossConfig(strategy=strategy, lambda1=lams[0], lambda2=lams[1],
                      lambda3=lams[2], match_point="before_relu")
    cfg = TrainConfig(seg_epochs=SEG_EPOCHS, seed=SEED, loss=loss)
    params, history = train_seg_net(train, edge_params if strategy != "ppce" else None,
                                    cfg, n_classes=5, val_samples=val)
    preds = [predict_labels(params, s.image) for s in val]
    rows = trimap_miou(preds, [s.mask for s in val], [1, 2, 5], 5)
    boundary = {r["width"]: r["miou"] for r in rows if r["region"] == "boundary"}
    interior = {r["width"]: r["miou"] for r in rows if r["region"] == "interior"}
    results[strategy] = (history[-1]["val_miou"], boundary, interior)
    print(f"seed {SEED} {strategy}: mIoU {history[-1]['val_miou']:.4f} "
          f"b1 {boundary[1]:.4f} b2 {boundary[2]:.4f} i1 {interior[1]:.4f} "
          f"({time.time()-t1:.0f}s)  curve={[f'{h[\"val_miou\"]:.3f}' for h in history]}",
          flush=True)

miou_d = results["semeda"][0] - results["ppce"][0]
b_d = np.mean([results["semeda"][1][w] - results["ppce"][1][w] for w in (1, 2)])
print(f"seed {SEED}: dmIoU {miou_d:+.4f}  dBoundary12 {b_d*100:+.2f}pts  "
      f"total {time.time()-t0:.0f}s", flush=True)
