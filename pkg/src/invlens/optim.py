"""SGD-with-momentum and Adam over lists of parameter Tensors."""

import numpy as np


class SGDMomentum:
    def __init__(self, params, lr, momentum=0.0, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self):
        self.step_count += 1
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                raise RuntimeError("optimizer step with missing gradient")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data = p.data - self.lr * v

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, epsilon=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise RuntimeError("optimizer step with missing gradient")
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            mhat = m / bc1
            vhat = v / bc2
            if self.weight_decay:
                # decoupled decay: applied to the weights, not the moments
                p.data = p.data * (1.0 - self.lr * self.weight_decay)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.epsilon)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def make_optimizer(kind, params, lr, momentum=0.9, beta1=0.9, beta2=0.999,
                   epsilon=1e-8, weight_decay=0.0):
    if kind == "sgd-momentum":
        return SGDMomentum(params, lr, momentum=momentum, weight_decay=weight_decay)
    if kind == "adam":
        return Adam(params, lr, beta1=beta1, beta2=beta2, epsilon=epsilon,
                    weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer kind {kind!r} (allowed: sgd-momentum, adam)")
