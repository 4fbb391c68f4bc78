"""Shared fixtures-as-functions for the test modules."""
import numpy as np

from gradsample.sim.config import RunConfig, apply_overrides, with_toggles
from gradsample.solver import solve_direct


def dominant_system(rng, size):
    """Gradient-matrix-shaped system, diagonally dominant, with a strictly positive solution.

    Off-diagonals are nonnegative (negative gradients), the diagonal negative
    and larger than its row's off-diagonal mass. The background column is
    scaled up, as background proposals dominate real batches. Draws are
    repeated until the direct solution lies inside the clamp range.
    """
    while True:
        G = rng.uniform(0.0, 1.0, (size, size))
        G[:, -1] *= 5.0
        np.fill_diagonal(G, 0.0)
        np.fill_diagonal(G, -G.sum(axis=1) * rng.uniform(1.1, 2.0, size))
        w = solve_direct(G)
        if np.all(w > 0.01) and np.all(w < 0.99 * size):
            return G, w


def tiny_config(toggles=(), seed=0, **overrides):
    """A seconds-scale run config; overrides use dotted keys with ``__`` for dots."""
    cfg = RunConfig(seed=seed)
    items = [
        "task.n_majority=4", "task.n_minority=2", "task.labeled_per_majority=60",
        "task.labeled_per_minority=5", "task.n_unlabeled_images=150", "task.eval_per_class=30",
        "train.generations=3", "train.steps_per_generation=40", "train.burn_in_steps=60",
        "thresholds.refresh_every=10",
    ]
    items += [f"{k.replace('__', '.')}={v}" for k, v in overrides.items()]
    return with_toggles(apply_overrides(cfg, items), toggles)


def reference_self_training(cfg):
    """Plain fixed-threshold self-training written against the library primitives.

    No ledger, no weights, no resampling: weights 1, thresholds at the base,
    every image once per pass. Returns per-generation
    ``(mean loss, eval accuracy dict, precision, recall)`` tuples.
    """
    from gradsample.losses import CROSS_ENTROPY
    from gradsample.sim.data import generate_task, substream
    from gradsample.sim.harness import IGNORE, ImageStream, teacher_predictions
    from gradsample.sim.metrics import eval_balanced_accuracy, pseudo_label_pr
    from gradsample.sim.model import LinearClassifier, TeacherState, teacher_ema_update, weighted_loss
    from gradsample.thresholds import ThresholdTable, filter_pseudo_labels

    task = generate_task(cfg.task, substream(cfg.seed, "data"))
    rng = substream(cfg.seed, "sampler")
    n, tr = task.n, cfg.train
    model = LinearClassifier(n + 1, cfg.task.dim, substream(cfg.seed, "init"), lr=tr.lr,
                             momentum=tr.momentum, weight_decay=tr.weight_decay, init_scale=tr.init_scale)
    table = ThresholdTable.fixed(n, cfg.thresholds.theta_base)
    dim = cfg.task.dim

    def step(lab_idx, unl_idx, targets, teacher):
        X = np.concatenate([task.labeled.features[lab_idx].reshape(-1, dim),
                            task.unlabeled.features[unl_idx].reshape(-1, dim)])
        y = np.concatenate([task.labeled.labels[lab_idx].reshape(-1), targets[unl_idx].reshape(-1)])
        keep = y != IGNORE
        X, y = X[keep], y[keep]
        scale = 1.0 / (len(lab_idx) + len(unl_idx))
        loss, _, _, gW, gb = weighted_loss(model.W, model.b, X, y, np.ones(len(y)), CROSS_ENTROPY, scale)
        model.step(gW, gb)
        if teacher is not None:
            teacher_ema_update(teacher, model)
        return loss

    stream = ImageStream(np.ones(len(task.labeled), dtype=np.int64), rng)
    empty = np.zeros(0, dtype=np.int64)
    no_targets = np.zeros(task.unlabeled.labels.shape, dtype=np.int64)
    for _ in range(tr.burn_in_steps):
        step(stream.take(tr.labeled_images_per_step), empty, no_targets, None)
    teacher = TeacherState.from_student(model, tr.eta_p)

    out = []
    for _ in range(tr.generations):
        preds = teacher_predictions(teacher, task.unlabeled)
        pseudo = filter_pseudo_labels(preds, table)
        targets = np.full(task.unlabeled.labels.shape, n, dtype=np.int64)
        if tr.uncertain_unlabeled == "ignore":
            low = preds.score < table.theta[preds.cls]
            targets[preds.image[low], preds.proposal[low]] = IGNORE
        targets[pseudo.image, pseudo.proposal] = pseudo.cls
        precision, recall, *_ = pseudo_label_pr(pseudo, task.unlabeled.labels, n)
        lab = ImageStream(np.ones(len(task.labeled), dtype=np.int64), rng)
        unl = ImageStream(np.ones(len(task.unlabeled), dtype=np.int64), rng)
        losses = [step(lab.take(tr.labeled_images_per_step), unl.take(tr.unlabeled_images_per_step), targets, teacher)
                  for _ in range(tr.steps_per_generation)]
        acc = eval_balanced_accuracy(teacher.logits, task.eval_features, task.eval_labels, task.majority, task.minority)
        out.append((float(np.mean(losses)), acc, precision, recall))
    return out


def coco_fixture(n_images=200, seed=0, n_majority=6, n_minority=4):
    """Synthetic COCO detection annotations with frequent and rare categories.

    Category ids start at 1 (COCO style); the first ``n_majority`` ids are
    common, the rest appear in about one image in sixteen each.
    """
    rng = np.random.default_rng(seed)
    n_cat = n_majority + n_minority
    categories = [{"id": c + 1, "name": f"class_{c + 1:02d}", "supercategory": "thing"} for c in range(n_cat)]
    images, annotations = [], []
    ann_id = 1
    for i in range(n_images):
        img_id = 1000 + i
        images.append({"id": img_id, "file_name": f"{img_id:012d}.jpg", "width": 640, "height": 480})
        cats = list(rng.choice(n_majority, size=rng.integers(1, 4)) + 1)
        if rng.random() < 0.25:
            cats.append(int(rng.integers(n_majority, n_cat)) + 1)
            cats.extend([cats[-1]] * int(rng.integers(0, 3)))
        for c in cats:
            x, y = rng.uniform(0, 500, 2).round(1)
            w, h = rng.uniform(10, 120, 2).round(1)
            annotations.append({"id": ann_id, "image_id": img_id, "category_id": int(c),
                                "bbox": [float(x), float(y), float(w), float(h)],
                                "area": float(round(w * h, 2)), "iscrowd": 0})
            ann_id += 1
    return {"images": images, "annotations": annotations, "categories": categories}


# criterion number -> PASS/FAIL line, filled by the acceptance suite
ACCEPTANCE = {}
