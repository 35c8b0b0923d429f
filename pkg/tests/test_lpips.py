import numpy as np
import pytest
import torch
import torch.nn as nn

from csgan.lpips import TorchvisionProvider, load_provider, perceptual_distance


class ConvProvider:
    """Two random conv layers standing in for a pretrained backbone."""

    def __init__(self, seed=0):
        g = torch.Generator().manual_seed(seed)
        self.c1 = nn.Conv2d(3, 4, 3, padding=1)
        self.c2 = nn.Conv2d(4, 6, 3, stride=2, padding=1)
        with torch.no_grad():
            for m in (self.c1, self.c2):
                m.weight.copy_(torch.randn(m.weight.shape, generator=g))
                m.bias.zero_()
        self.weights = [torch.rand(4, generator=g), torch.rand(6, generator=g)]

    def features(self, x):
        h1 = torch.relu(self.c1(x))
        return [h1, torch.relu(self.c2(h1))]


def distance_oracle(a, b, provider):
    # per-pixel loops over channel vectors
    total = 0.0
    for fa, fb, w in zip(provider.features(a[None]), provider.features(b[None]), provider.weights):
        fa, fb, w = fa[0].double().numpy(), fb[0].double().numpy(), w.double().numpy()
        _, h, wd = fa.shape
        acc = 0.0
        for i in range(h):
            for j in range(wd):
                va, vb = fa[:, i, j], fb[:, i, j]
                na = va / (np.sqrt((va * va).sum()) + 1e-10)
                nb = vb / (np.sqrt((vb * vb).sum()) + 1e-10)
                acc += float((w * (na - nb) ** 2).sum())
        total += acc / (h * wd)
    return total


@pytest.fixture
def provider():
    return ConvProvider()


def test_identical_inputs_zero(provider):
    x = torch.rand(3, 16, 16) * 2 - 1
    assert perceptual_distance(x, x, provider) == 0.0


def test_symmetric_and_nonnegative(provider):
    a, b = torch.rand(3, 16, 16) * 2 - 1, torch.rand(3, 16, 16) * 2 - 1
    d = perceptual_distance(a, b, provider)
    assert d > 0
    assert d == pytest.approx(perceptual_distance(b, a, provider), rel=1e-6)


def test_matches_oracle(provider):
    torch.manual_seed(0)
    a, b = torch.rand(3, 12, 12) * 2 - 1, torch.rand(3, 12, 12) * 2 - 1
    with torch.no_grad():
        ref = distance_oracle(a, b, provider)
    assert perceptual_distance(a, b, provider) == pytest.approx(ref, rel=1e-5)


def test_batch_mean(provider):
    a, b = torch.rand(2, 3, 8, 8), torch.rand(2, 3, 8, 8)
    each = [perceptual_distance(a[i], b[i], provider) for i in range(2)]
    assert perceptual_distance(a, b, provider) == pytest.approx(sum(each) / 2, rel=1e-6)


def test_absent_provider_is_unavailable():
    x = torch.zeros(3, 8, 8)
    assert perceptual_distance(x, x, None) is None
    assert load_provider(None) is None
    assert load_provider("") is None


def test_torchvision_provider_from_weights_file(tmp_path):
    channels = [64, 192, 384, 256, 256]
    lin = {f"lin{i}.model.1.weight": torch.rand(1, c, 1, 1) for i, c in enumerate(channels)}
    path = tmp_path / "lin.pth"
    torch.save(lin, path)
    provider = load_provider(str(path), "alexnet")
    assert isinstance(provider, TorchvisionProvider)
    x = torch.rand(1, 3, 64, 64) * 2 - 1
    feats = provider.features(x)
    assert [f.shape[1] for f in feats] == channels
    assert perceptual_distance(x, x, provider) == 0.0


def test_wrong_layer_count_rejected():
    with pytest.raises(ValueError, match="linear layers"):
        TorchvisionProvider("alexnet", {"lin0.model.1.weight": torch.rand(1, 64, 1, 1)})
