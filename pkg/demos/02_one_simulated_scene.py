# %% One simulated scene end to end on the calibrated config.
import numpy as np

from ssod3d.analysis import SUBREGIONS, assignment_pr, loss_mass_report, u_histogram
from ssod3d.config import load_config
from ssod3d.simulator import prepare_scene, score_scene

cfg = load_config("configs/paper_noise.json")
draw = prepare_scene(cfg, seed=0, scene_id=0)
scene = draw.scene
print(len(scene.ground_truths), "objects,", len(draw.pseudo_labels), "pseudo-labels survive the confidence filter")

# %% Score the scene: match, assign, sample, weight and compute the losses.
ep = score_scene(draw, cfg, 0)
rec = ep.records
print(len(rec), "sampled proposals; cls loss", round(ep.loss.cls_loss, 4), "reg loss", round(ep.loss.reg_loss, 4))

# %% u is measured against pseudo-labels, v against the hidden ground truth.
print("mean |u - v|:", float(np.mean(np.abs(rec.u - rec.v))))

# %% Where the proposals fall in the six cells, per class.
for c, name in enumerate(cfg.classes.names):
    mine = rec.cls == c
    counts = np.bincount(rec.subregion[mine], minlength=6)
    print(f"{name:<11}", dict(zip(SUBREGIONS, counts.tolist())))

# %% Assignment precision and recall, then the effect of the weights on error loss.
print(assignment_pr(rec, cfg.classes))
rep = loss_mass_report(rec, cfg.classes.names)
print("suppressed_error_fraction", rep.suppressed_error_fraction, "raw", rep.suppressed_error_fraction_raw)
print("mean weight  FP", rep.mean_weight_fp, " TP", rep.mean_weight_tp, " FN", rep.mean_weight_fn)

# %% u histogram of true objects (plot-ready bins).
hist = u_histogram(rec, cfg.classes)
print({k: v for k, v in hist.items() if k != "edges"})
