"""Train and export the MNIST fixture classifier shipped in src/onnxflow/fixtures.

Topology: two blocks of Conv -> MaxPool -> BatchNorm -> ReLU followed by one
fully connected layer. Requires torch and onnx (not runtime dependencies):

    python scripts/train_fixture.py --mnist data/mnist --out src/onnxflow/fixtures
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch
from torch import nn

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from onnxflow import mnist  # noqa: E402
from onnxflow.onnx_ingest import decode_onnx, encode_json_mirror  # noqa: E402


class FixtureNet(nn.Module):
    def __init__(self, c1: int = 8, c2: int = 16):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(1, c1, 3),
            nn.MaxPool2d(2, 2),
            nn.BatchNorm2d(c1),
            nn.ReLU(),
            nn.Conv2d(c1, c2, 3),
            nn.MaxPool2d(2, 2),
            nn.BatchNorm2d(c2),
            nn.ReLU(),
        )
        self.fc = nn.Linear(c2 * 5 * 5, 10)

    def forward(self, x):
        return self.fc(torch.flatten(self.features(x), 1))


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--mnist", default="data/mnist")
    ap.add_argument("--out", default="src/onnxflow/fixtures")
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    train = mnist.load_split(args.mnist, "train")
    test = mnist.load_split(args.mnist, "test")
    x = torch.from_numpy(train.normalized())
    y = torch.from_numpy(train.labels.astype(np.int64))

    net = FixtureNet()
    opt = torch.optim.Adam(net.parameters(), lr=2e-3)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, args.epochs * (len(y) // 128))
    loss_fn = nn.CrossEntropyLoss()
    for epoch in range(args.epochs):
        net.train()
        perm = torch.randperm(len(y))
        for i in range(0, len(y) - 127, 128):
            idx = perm[i:i + 128]
            opt.zero_grad()
            loss = loss_fn(net(x[idx]), y[idx])
            loss.backward()
            opt.step()
            sched.step()
        net.eval()
        with torch.no_grad():
            pred = net(torch.from_numpy(test.normalized())).argmax(1).numpy()
        print(f"epoch {epoch}: loss {loss.item():.4f} test acc {(pred == test.labels).mean():.4f}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    onnx_path = out / "mnist_cnn.onnx"
    torch.onnx.export(
        net, (torch.zeros(1, 1, 28, 28),), str(onnx_path),
        input_names=["input"], output_names=["logits"],
        opset_version=13, dynamo=False, do_constant_folding=True,
    )
    raw = decode_onnx(onnx_path.read_bytes())
    (out / "mnist_cnn.json").write_text(encode_json_mirror(raw), encoding="utf-8")
    print("nodes:", [n.op_type for n in raw.nodes])


if __name__ == "__main__":
    main()
