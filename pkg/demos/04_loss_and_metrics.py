"""What the combined loss reports for a few hand-picked predictions."""
import numpy as np

from binloc.training import angular_errors, combined_loss

front = [[1.0, 0.0, 0.0]]
for name, pred in [("exact", front), ("left", [[0.0, 1.0, 0.0]]),
                   ("behind", [[-1.0, 0.0, 0.0]]), ("front, 3x too far", [[3.0, 0.0, 0.0]])]:
    lb = combined_loss(pred, front)
    print(f"{name:>18}: euclidean {lb.euclidean:.3f} m  angular {lb.angular:8.4f} deg")

# the cosine is clamped, so even a perfect guess reports a sliver of angle
print("floor:", np.degrees(np.arccos(1 - 1e-7)), "deg")

# guessing uniformly at random is off by 90 degrees on average
rng = np.random.default_rng(0)
targets = np.tile([1.8, 0.0, 0.0], (10000, 1))
print("random guesses:", angular_errors(rng.standard_normal((10000, 3)), targets).mean(), "deg")
