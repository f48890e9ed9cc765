import numpy as np
import pytest

from crowdcount.models import build_csrnet_lite, build_mcnn
from crowdcount.nn import Conv2d, Network, ReLU, Sequential, gradient_check


def tiny_net(dtype=np.float64, seed=0):
    rng = np.random.default_rng(seed)
    col = Sequential([
        Conv2d(1, 2, 3, padding=1, dtype=dtype, rng=rng),
        ReLU(),
        Conv2d(2, 1, 1, dtype=dtype, rng=rng),
    ])
    return Network("tiny", [col], Sequential([]), output_stride=1)


class TestGradientCheck:
    def test_one_by_one_conv_net_is_exact(self):
        rng = np.random.default_rng(5)
        col = Sequential([Conv2d(1, 1, 1, dtype=np.float64, rng=rng)])
        net = Network("one", [col], Sequential([]), output_stride=1)
        x = rng.normal(size=(1, 1, 4, 4))
        target = rng.normal(size=(1, 1, 4, 4))
        report = gradient_check(net, x, target)
        assert report.max_rel_error < 1e-8
        assert report.n_checked == 2  # one weight, one bias

    def test_small_net_passes(self):
        rng = np.random.default_rng(7)
        net = tiny_net(seed=7)
        x = rng.normal(size=(2, 1, 6, 6))
        target = rng.normal(size=(2, 1, 6, 6))
        report = gradient_check(net, x, target)
        assert report.max_rel_error < 1e-6

    def test_mini_architectures_pass(self):
        # deep 1-channel stacks die almost surely (zero bias + ReLU), which
        # parks pre-activations exactly on the kink; check off the kink set
        from conftest import smooth_instances

        for build, width in ((build_csrnet_lite, 1 / 32), (build_mcnn, 1 / 8)):
            (net, x, target), = smooth_instances(build, width, 1, rng_key=7)
            report = gradient_check(net, x, target)
            assert report.max_rel_error < 1e-4, str(report)

    def test_rejects_float32(self):
        net = build_mcnn(1 / 64, in_channels=1, seed=0, dtype=np.float32)
        x = np.zeros((1, 1, 8, 8))
        with pytest.raises(ValueError, match="float64"):
            gradient_check(net, x, np.zeros((1, 1, 2, 2)))

    def test_detects_broken_gradient(self):
        net = tiny_net(seed=3)
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 1, 6, 6))
        target = rng.normal(size=(1, 1, 6, 6))
        clean = gradient_check(net, x, target)
        assert clean.max_rel_error < 1e-6
        # sabotage the backward pass and expect the check to notice
        conv = net.columns[0].layers[0]
        original = conv.backward
        conv.backward = lambda g: original(g * 1.001)
        broken = gradient_check(net, x, target)
        assert broken.max_rel_error > 1e-4

    def test_report_is_informative(self):
        net = tiny_net(seed=9)
        rng = np.random.default_rng(9)
        report = gradient_check(net, rng.normal(size=(1, 1, 4, 4)),
                                rng.normal(size=(1, 1, 4, 4)))
        text = str(report)
        assert "max rel error" in text
        assert str(report.n_checked) in text
