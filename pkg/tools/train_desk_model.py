"""Train the small binary MNIST network used as a test fixture.

Not part of the package: training is done once, offline, with PyTorch and
the 5000-digit MNIST subset bundled with mlxtend. The script writes the
model in the package's weight-file format plus an IDX test split.

    PYTHONPATH=src python tools/train_desk_model.py tests/data/desk_mnist [noise] [width]
"""

import gzip
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from mlxtend.data import mnist_data

from fecim.bnn import BnnLayer, BnnModel, fold_batchnorm, reference_infer, save_model


class SignSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return torch.where(x >= 0, 1.0, -1.0)

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        return g * (x.abs() <= 1).float()


sign = SignSTE.apply


# Variation-aware training: during training every pre-activation gets
# Gaussian noise of std NOISE * sqrt(rows), roughly what capacitor mismatch
# of relative std NOISE does to a charge-shared column of that many rows.
NOISE = float(sys.argv[2]) if len(sys.argv) > 2 else 0.6
WIDTH = int(sys.argv[3]) if len(sys.argv) > 3 else 1


def noisy(s, rows, training):
    if not training:
        return s
    level = torch.rand(()) * NOISE
    return s + torch.randn_like(s) * level * rows**0.5


class BinConv(nn.Conv2d):
    def forward(self, x):
        s = F.conv2d(x, sign(self.weight), None, self.stride, self.padding)
        return noisy(s, self.weight[0].numel(), self.training)


class BinLinear(nn.Linear):
    def forward(self, x):
        return noisy(F.linear(x, sign(self.weight)), self.in_features, self.training)


class Net(nn.Module):
    def __init__(self):
        super().__init__()
        c1, c2, h = 16 * WIDTH, 32 * WIDTH, 128 * WIDTH
        self.c1 = BinConv(1, c1, 5, bias=False)
        self.b1 = nn.BatchNorm2d(c1)
        self.c2 = BinConv(c1, c2, 5, bias=False)
        self.b2 = nn.BatchNorm2d(c2)
        self.f1 = BinLinear(16 * c2, h, bias=False)
        self.b3 = nn.BatchNorm1d(h)
        self.f2 = BinLinear(h, 10, bias=False)
        self.scale = nn.Parameter(torch.tensor(0.05))

    def forward(self, x):
        x = F.max_pool2d(sign(self.b1(self.c1(x))), 2)
        x = F.max_pool2d(sign(self.b2(self.c2(x))), 2)
        x = sign(self.b3(self.f1(x.flatten(1))))
        return self.f2(x) * self.scale


def folded(bn):
    sigma = torch.sqrt(bn.running_var + bn.eps).detach().numpy()
    return fold_batchnorm(bn.weight.detach().numpy(), bn.bias.detach().numpy(),
                          bn.running_mean.detach().numpy(), sigma, sigma_mode="std")


def conv_matrix(conv):
    w = torch.where(conv.weight >= 0, 1, -1).detach().numpy()
    return w.reshape(w.shape[0], -1).T


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(0)
    X, y = mnist_data()
    X = X.reshape(-1, 28, 28).astype(np.uint8)
    idx = np.arange(len(y))
    test = np.concatenate([idx[y == k][-100:] for k in range(10)])
    train = np.setdiff1d(idx, test)
    threshold = float(X[train].mean())
    xb = torch.tensor(np.where(X >= threshold, 1.0, -1.0)[:, None], dtype=torch.float32)
    yt = torch.tensor(y, dtype=torch.long)

    net = Net()
    opt = torch.optim.Adam(net.parameters(), lr=3e-3)
    for epoch in range(60):
        net.train()
        perm = torch.tensor(np.random.default_rng(epoch).permutation(train))
        for i in range(0, len(perm), 100):
            b = perm[i:i + 100]
            loss = F.cross_entropy(net(xb[b]), yt[b])
            opt.zero_grad()
            loss.backward()
            opt.step()
        net.eval()
        with torch.no_grad():
            acc = (net(xb[test]).argmax(1) == yt[test]).float().mean().item()
        print(f"epoch {epoch} loss {loss.item():.3f} test {acc:.3f}")

    a1, f1 = folded(net.b1)
    a2, f2 = folded(net.b2)
    a3, f3 = folded(net.b3)
    model = BnnModel(
        [
            BnnLayer("conv", conv_matrix(net.c1), a1, f1, in_shape=(1, 28, 28), kernel=5, pool=2),
            BnnLayer("conv", conv_matrix(net.c2), a2, f2, in_shape=(16 * WIDTH, 12, 12), kernel=5, pool=2),
            BnnLayer("fully_connected", torch.where(net.f1.weight >= 0, 1, -1).numpy().T, a3, f3),
            BnnLayer("fully_connected", torch.where(net.f2.weight >= 0, 1, -1).numpy().T),
        ],
        input_shape=(1, 28, 28),
        input_threshold=threshold,
        sigma_mode="std",
    )
    save_model(model, out / "model.json")
    ref = reference_infer(model, X[test][:, None])
    print("reference accuracy", float(np.mean(ref.labels == y[test])))

    def idx_gz(path, arr):
        header = bytes([0, 0, 8, arr.ndim]) + b"".join(int(d).to_bytes(4, "big") for d in arr.shape)
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(header + arr.astype(np.uint8).tobytes())

    idx_gz(out / "t10k-images-idx3-ubyte.gz", X[test])
    idx_gz(out / "t10k-labels-idx1-ubyte.gz", y[test])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/desk_mnist")
