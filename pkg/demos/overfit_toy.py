"""
Overfitting a tiny shift network
================================

A two-stage multi-shift network on 8x8 inputs should memorize 64 noisy
samples from four Gaussian prototypes. The run is deterministic per seed.
"""

from shiftnet.netspec import build, toy_spec
from shiftnet.training import OptimizerState, accuracy, gradcheck, synthetic_dataset, train_loop

spec = toy_spec("multi_shift", "4c", width=16, classes=4, size=8, maxpool=False)
x, y = synthetic_dataset(64, 4, spec.input, seed=0)
net = build(spec, seed=0)
print(sum(p.data.size for p in net.parameters()), "parameters")

# before doing anything long, make sure the gradients are right (64-bit)
report = gradcheck(spec)
print(f"gradcheck: {report.checked} entries, worst {report.max_rel_error:.1e} in {report.worst}")

state = OptimizerState(lr=0.1, momentum=0.9, weight_decay=5e-4, step_epochs=30)
history = train_loop(net, x, y, 60, state, batch_size=16, seed=0)
for row in history[::10]:
    print(f"epoch {row.epoch:3d}  loss {row.loss:.4f}  acc {row.acc:.3f}  lr {row.lr:g}")

# batch statistics during training, running statistics here
print("eval accuracy", accuracy(net, x, y))
