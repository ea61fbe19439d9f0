"""Layer-by-layer shapes of the full-size hybrid network, and where short inputs break it."""
from binloc.models import HybridModelConfig, ShapeValidationError, minimal_segment_len, validate_shapes

cfg = HybridModelConfig.from_profile("paper")
for entry in validate_shapes(cfg, 8192):
    print(entry)

try:
    validate_shapes(cfg, 4096)
except ShapeValidationError as exc:
    print("\n4096 samples:")
    print(exc.format_trace())

print("\nshortest segment the network accepts:", minimal_segment_len(cfg))

desk = HybridModelConfig.from_profile("desk")
print("desk-scale head input:", [t.shape_out for t in validate_shapes(desk, 8192)
                                 if t.layer == "concat"][0])
