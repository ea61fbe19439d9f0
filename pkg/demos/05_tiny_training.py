"""A few epochs of the desk-scale hybrid model on a handful of synthetic sources.

Takes a couple of minutes on one core. Expect rough numbers: real convergence
needs the full desk run (see the acceptance tests).
"""
from binloc.dataset import build_dataset, split_by_source, split_validation, synthetic_sources
from binloc.dataset import source_length_for_segments
from binloc.evaluation import evaluate
from binloc.models import build_hybrid
from binloc.spatial import speaker_positions
from binloc.training import TrainConfig, train

array = speaker_positions()
n = source_length_for_segments(1)
sources = (synthetic_sources(3, n, kinds=["white", "pink"], prefix="train", seed=1)
           + synthetic_sources(1, n, kinds=["white"], prefix="test", seed=2))
full = build_dataset(sources, array)
train_set, test_set = split_by_source(full, ["test-000-white"])
fit, val = split_validation(train_set, 0.125, seed=0)
print(len(fit), "fit /", len(val), "val /", len(test_set), "held-out examples")

model = build_hybrid("desk", seed=0)
result = train(model, fit, val, TrainConfig(lr=3e-4, batch_size=8, max_epochs=3, seed=0))
for row in result.history:
    print(f"epoch {row['epoch']}: train {row['train_angular']:.1f} deg, "
          f"val {row['val_angular']:.1f} deg / {row['val_euclidean']:.2f} m")

report = evaluate(model, test_set)
print(f"held-out: {report.mean_angular:.1f} deg, {report.mean_euclidean:.2f} m")
