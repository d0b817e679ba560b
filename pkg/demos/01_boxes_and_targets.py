# %% Rotated IoU, soft targets and reliability weights on hand-built boxes.
import math

import numpy as np

from ssod3d.assignment import assign_targets, match_max_iou
from ssod3d.config import ClassConfig
from ssod3d.detections import Detections
from ssod3d.geometry import Box3D, iou_3d, iou_bev, iou_matrix, nms_rotated
from ssod3d.reliability import SCHEME_ORDER, compute_weights

# %% A 2 m cube against itself turned by 45 degrees: overlap is an octagon.
a = Box3D(0, 0, 0, 2, 2, 2, 0)
b = Box3D(0, 0, 0, 2, 2, 2, math.pi / 4)
print("bev", iou_bev(a, b), "3d", iou_3d(a, b), "expected", 1 / math.sqrt(2))

# %% Shifting vertically only changes the 3D number.
c = Box3D(0, 0, 1, 2, 2, 2, 0)
print("bev", iou_bev(a, c), "3d", iou_3d(a, c))

# %% One pseudo-label per class and a fan of proposals sliding away from each.
pls = Detections(
    [[0, 0, 0, 3.9, 1.6, 1.56, 0], [10, 0, 0, 0.8, 0.6, 1.73, 0], [20, 0, 0, 1.76, 0.6, 1.73, 0]],
    labels=[0, 1, 2],
    scores=[0.97, 0.9, 0.88],
)
shifts = np.linspace(0.0, 0.6, 7)
props = np.array([box + [s * box[3], 0, 0, 0, 0, 0, 0] for box in pls.boxes for s in shifts])
u, idx = match_max_iou(props, pls)
asg = assign_targets((u, idx), pls, ClassConfig())
for i in range(len(asg)):
    r = asg[i]
    print(f"class {r.assigned_class}  u={r.u:.3f}  {r.category.name}  t={r.t:.3f}")

# %% The same pedestrian overlap under one shared 0.75 threshold lands in the uncertain band.
agnostic = assign_targets((u, idx), pls, ClassConfig().with_fg(0.75))
flipped = [i for i in range(len(asg)) if asg.category[i] != agnostic.category[i]]
print("proposals whose category changes:", flipped)

# %% Weights for three proposals, one per category, with a moderately confident teacher.
cats = np.array([asg.category[0], asg.category[3], asg.category[6]])
for scheme in SCHEME_ORDER:
    print(f"{scheme:<12}", compute_weights(cats, [0.6, 0.6, 0.6], scheme))

# %% Class-wise NMS keeps the best box of each overlapping pile.
scores = np.linspace(1.0, 0.5, len(props))
keep = nms_rotated(props, 0.1, scores=scores, labels=np.repeat([0, 1, 2], len(shifts)))
print("kept", keep)
print(np.round(iou_matrix(props[keep], pls.boxes), 3))
