"""Non-invertible building blocks: MLPs, coupling subnets, baseline convnet."""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def he_init(rng, fan_in, shape):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class MLP:
    """Fully connected ReLU network. Optionally zero-initialized final layer."""

    def __init__(self, sizes, rng, zero_init_last=False):
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        for i in range(len(sizes) - 1):
            last = i == len(sizes) - 2
            if last and zero_init_last:
                w = np.zeros((sizes[i], sizes[i + 1]))
            else:
                w = he_init(rng, sizes[i], (sizes[i], sizes[i + 1]))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(sizes[i + 1]), requires_grad=True))

    def __call__(self, x):
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if i < len(self.weights) - 1:
                h = ad.relu(h)
        return h

    def params(self):
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"w{i}", w))
            out.append((f"b{i}", b))
        return out


class ConvSubnet:
    """3x3 conv -> ReLU -> 3x3 conv -> ReLU -> 3x3 conv, zero-init final."""

    def __init__(self, c_in, c_out, width, rng):
        self.c_in, self.c_out, self.width = c_in, c_out, width
        def conv_w(ci, co, zero=False):
            if zero:
                return Tensor(np.zeros((co, ci, 3, 3)), requires_grad=True)
            return Tensor(he_init(rng, ci * 9, (co, ci, 3, 3)), requires_grad=True)
        self.w1 = conv_w(c_in, width)
        self.b1 = Tensor(np.zeros(width), requires_grad=True)
        self.w2 = conv_w(width, width)
        self.b2 = Tensor(np.zeros(width), requires_grad=True)
        self.w3 = conv_w(width, c_out, zero=True)
        self.b3 = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x):
        h = ad.relu(ad.conv2d(x, self.w1, self.b1))
        h = ad.relu(ad.conv2d(h, self.w2, self.b2))
        return ad.conv2d(h, self.w3, self.b3)

    def params(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2),
                ("b2", self.b2), ("w3", self.w3), ("b3", self.b3)]


class BaselineNet:
    """Small non-invertible classifier: conv/pool/conv/pool/dense."""

    def __init__(self, input_shape, num_classes, rng, width=8):
        c, h, w = input_shape
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.width = width
        self.w1 = Tensor(he_init(rng, c * 9, (width, c, 3, 3)), requires_grad=True)
        self.b1 = Tensor(np.zeros(width), requires_grad=True)
        self.w2 = Tensor(he_init(rng, width * 9, (2 * width, width, 3, 3)), requires_grad=True)
        self.b2 = Tensor(np.zeros(2 * width), requires_grad=True)
        feat = 2 * width * (h // 4) * (w // 4)
        self.w3 = Tensor(he_init(rng, feat, (feat, num_classes)), requires_grad=True)
        self.b3 = Tensor(np.zeros(num_classes), requires_grad=True)

    def logits(self, x):
        h = ad.relu(ad.conv2d(x, self.w1, self.b1))
        h = ad.avg_pool2d(h, 2)
        h = ad.relu(ad.conv2d(h, self.w2, self.b2))
        h = ad.avg_pool2d(h, 2)
        h = ad.flatten(h)
        return ad.add(ad.matmul(h, self.w3), self.b3)

    __call__ = logits

    def classify(self, x_arr):
        z = self.logits(Tensor(x_arr)).data
        return np.argmax(z, axis=1)

    def params(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2),
                ("b2", self.b2), ("w3", self.w3), ("b3", self.b3)]


class FlatBaselineNet:
    """MLP baseline for flat (non-image) inputs such as the spheres task."""

    def __init__(self, input_dim, num_classes, rng, width=128):
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.width = width
        self.mlp = MLP([input_dim, width, width, num_classes], rng)

    def logits(self, x):
        return self.mlp(x)

    __call__ = logits

    def classify(self, x_arr):
        z = self.logits(Tensor(x_arr)).data
        return np.argmax(z, axis=1)

    def params(self):
        return self.mlp.params()
