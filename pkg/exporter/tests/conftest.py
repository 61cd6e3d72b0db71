import torch
from torch import nn


class ResidualToy(nn.Module):
    """Five convolutions, one identity-skip block over the middle two."""

    def __init__(self):
        super().__init__()
        self.stem1 = nn.Conv2d(3, 8, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(8)
        self.stem2 = nn.Conv2d(8, 4, 1)
        self.bn2 = nn.BatchNorm2d(4)
        self.c1 = nn.Conv2d(4, 6, 3, padding=1)
        self.bn3 = nn.BatchNorm2d(6)
        self.c2 = nn.Conv2d(6, 4, 1)
        self.bn4 = nn.BatchNorm2d(4)
        self.tail = nn.Conv2d(4, 10, 1)
        self.bn5 = nn.BatchNorm2d(10)
        self.act = nn.ReLU()

    def forward(self, x):
        x = self.act(self.bn1(self.stem1(x)))
        x = self.act(self.bn2(self.stem2(x)))
        y = self.act(self.bn3(self.c1(x)))
        y = self.bn4(self.c2(y))
        x = self.act(x + y)
        return self.act(self.bn5(self.tail(x)))


class ProjectionToy(nn.Module):
    """One block guarded by a projection shortcut, then a pooled head."""

    def __init__(self):
        super().__init__()
        self.stem = nn.Conv2d(3, 4, 3, padding=1)
        self.bn0 = nn.BatchNorm2d(4)
        self.down = nn.Conv2d(4, 8, 1)
        self.bnd = nn.BatchNorm2d(8)
        self.c1 = nn.Conv2d(4, 6, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(6)
        self.c2 = nn.Conv2d(6, 8, 1)
        self.bn2 = nn.BatchNorm2d(8)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.flat = nn.Flatten()
        self.head = nn.Linear(8, 2)
        self.act = nn.ReLU()

    def forward(self, x):
        x = self.act(self.bn0(self.stem(x)))
        skip = self.bnd(self.down(x))
        y = self.act(self.bn1(self.c1(x)))
        y = self.bn2(self.c2(y))
        x = self.act(skip + y)
        return self.head(self.flat(self.pool(x)))


class ForkedToy(nn.Module):
    """Residual add joining two multi-conv paths: not a skip connection."""

    def __init__(self):
        super().__init__()
        self.a = nn.Conv2d(3, 4, 1)
        self.b1 = nn.Conv2d(4, 4, 1)
        self.b2 = nn.Conv2d(4, 4, 1)
        self.c1 = nn.Conv2d(4, 4, 1)
        self.c2 = nn.Conv2d(4, 4, 1)

    def forward(self, x):
        x = self.a(x)
        return self.b2(self.b1(x)) + self.c2(self.c1(x))


def set_bn(bn, weight, bias, g_weight, g_bias):
    with torch.no_grad():
        bn.weight.copy_(torch.tensor(weight, dtype=torch.float32))
        bn.bias.copy_(torch.tensor(bias, dtype=torch.float32))
    bn.weight.grad = torch.tensor(g_weight, dtype=torch.float32)
    bn.bias.grad = torch.tensor(g_bias, dtype=torch.float32)
