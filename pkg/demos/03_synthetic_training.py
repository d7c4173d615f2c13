"""A short end-to-end training run on generated CIFAR-format data.

No download needed: a small learnable stand-in dataset is written in the
CIFAR-10 binary layout, an FP-ResNet-20 "001" is trained for a few epochs,
the run is interrupted and resumed from its checkpoint, and the metrics are
compared with an uninterrupted run. Takes a few minutes on one core.

    python demos/03_synthetic_training.py [workdir]
"""
import sys
import tempfile
from pathlib import Path

from fpnet import ModelSpec
from fpnet.data import load_cifar10, subset_per_class, synthetic_cifar10
from fpnet.models import CifarResNet
from fpnet.trainer import TrainConfig, evaluate, load_checkpoint, metrics_without_wall, train

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="fpnet_demo_"))
root = synthetic_cifar10(work / "data", n_train=2000, n_test=500, seed=0)
train_set = subset_per_class(load_cifar10(root, "train", strict=False), 40)
test_set = load_cifar10(root, "test", strict=False)
print(f"data in {root}: {len(train_set)} training images, {len(test_set)} test images")

spec = ModelSpec("resnet20", "001")
config = TrainConfig(epochs=6, lr=0.05, milestones=(4,), batch_size=50, seed=1)
untrained = CifarResNet(spec, seed=1)
print(f"{spec.name}: {untrained.num_parameters():,} parameters, "
      f"untrained test error {evaluate(untrained, test_set):.3f}")


def show(rec):
    print(f"  epoch {rec.epoch}  loss {rec.train_loss:.3f}  acc {rec.train_acc:.3f}  "
          f"test error {rec.test_error:.3f}  lr {rec.lr:g}")


print("\nuninterrupted run")
full = train(CifarResNet(spec, seed=1), train_set, test_set, config, out_dir=work / "full", progress=show)

# Stop after 3 epochs, then continue from last.ckpt with the full schedule.
print("\nrun stopped after epoch 2 ...")
part_cfg = TrainConfig(**{**config.__dict__, "epochs": 3})
train(CifarResNet(spec, seed=1), train_set, test_set, part_cfg, out_dir=work / "resumed", progress=show)
ckpt = load_checkpoint(work / "resumed" / "last.ckpt")
print(f"... resumed from checkpoint at epoch {ckpt.epoch}")
train(CifarResNet(spec, seed=1), train_set, test_set, config, out_dir=work / "resumed",
      resume=ckpt, progress=show)

same = metrics_without_wall(work / "full" / "metrics.csv") == metrics_without_wall(work / "resumed" / "metrics.csv")
print(f"\nresumed metrics identical to the uninterrupted run: {same}")
print(f"minimum test error {full.min_test_error:.3f}, final {full.final_test_error:.3f}")
print(f"outputs: {work}")
