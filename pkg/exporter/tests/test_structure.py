import pytest
import torch
from torch import nn

from chanexport import UnsupportedTopology, structure_to_network_dict, trace_structure

from conftest import ForkedToy, ProjectionToy, ResidualToy


def test_identity_skip_block():
    s = trace_structure(ResidualToy(), (1, 3, 16, 16))
    data = structure_to_network_dict(s)
    assert [l["layer_id"] for l in data["layers"]] == [1, 2, 3, 4, 5]
    assert [l["name"] for l in data["layers"]] == ["stem1", "stem2", "c1", "c2", "tail"]
    assert data["blocks"] == [{"block_id": 1, "member_layers": [3, 4], "skip_source_layer": 2}]
    by_id = {l["layer_id"]: l for l in data["layers"]}
    assert by_id[2]["coupling_group"] == by_id[4]["coupling_group"]
    assert by_id[2]["max_out_channels"] == by_id[4]["max_out_channels"] == 4
    assert by_id[1]["spatial_h"] == 16
    assert data["input_channels"] == 3


def test_projection_shortcut_linearized_before_block():
    s = trace_structure(ProjectionToy(), (1, 3, 8, 8))
    data = structure_to_network_dict(s)
    assert [l["name"] for l in data["layers"]] == ["stem", "down", "c1", "c2"]
    assert data["blocks"] == [{"block_id": 1, "member_layers": [3, 4], "skip_source_layer": 2}]
    by_name = {l["name"]: l for l in data["layers"]}
    assert by_name["down"]["coupling_group"] == by_name["c2"]["coupling_group"]


def test_block_count_matches_residual_adds():
    class TwoBlocks(nn.Module):
        def __init__(self):
            super().__init__()
            self.stem = nn.Conv2d(3, 4, 1)
            self.bn0 = nn.BatchNorm2d(4)
            self.c1 = nn.Conv2d(4, 4, 1)
            self.bn1 = nn.BatchNorm2d(4)
            self.c2 = nn.Conv2d(4, 4, 1)
            self.bn2 = nn.BatchNorm2d(4)

        def forward(self, x):
            x = self.bn0(self.stem(x))
            x = x + self.bn1(self.c1(x))
            x = x + self.bn2(self.c2(x))
            return x

    s = trace_structure(TwoBlocks(), (1, 3, 4, 4))
    assert len(s.blocks) == 2
    data = structure_to_network_dict(s)
    assert data["blocks"][0]["member_layers"] == [2]
    assert data["blocks"][1]["member_layers"] == [3]
    # the whole stage shares one coupling group: 1 is skip of block 1,
    # 2 closes block 1 and is skip of block 2, 3 closes block 2
    groups = {l["layer_id"]: l.get("coupling_group") for l in data["layers"]}
    assert groups[1] == groups[2] == groups[3] is not None


def test_two_deep_paths_rejected():
    with pytest.raises(UnsupportedTopology, match="multi-layer paths"):
        trace_structure(ForkedToy(), (1, 3, 4, 4))


def test_non_residual_fanout_rejected():
    class FanOut(nn.Module):
        def __init__(self):
            super().__init__()
            self.a = nn.Conv2d(3, 4, 1)
            self.b = nn.Conv2d(4, 4, 1)
            self.c = nn.Conv2d(4, 4, 1)

        def forward(self, x):
            x = self.a(x)
            return torch.cat([self.b(x), self.c(x)], dim=1)

    with pytest.raises(UnsupportedTopology):
        trace_structure(FanOut(), (1, 3, 4, 4))


def test_mismatched_residual_widths_rejected():
    class BadWidths(nn.Module):
        def __init__(self):
            super().__init__()
            self.stem = nn.Conv2d(3, 4, 1)
            self.down = nn.Conv2d(4, 8, 1)
            self.c1 = nn.Conv2d(4, 6, 1)

        def forward(self, x):
            x = self.stem(x)
            return self.down(x) + self.c1(x)

    with pytest.raises(UnsupportedTopology):
        trace_structure(BadWidths(), (1, 3, 4, 4))


def test_grouped_convolution_rejected():
    class Grouped(nn.Module):
        def __init__(self):
            super().__init__()
            self.a = nn.Conv2d(4, 4, 3, padding=1, groups=4)

        def forward(self, x):
            return self.a(x)

    with pytest.raises(UnsupportedTopology, match="grouped"):
        trace_structure(Grouped(), (1, 4, 4, 4))
