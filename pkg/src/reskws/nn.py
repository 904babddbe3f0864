"""A small numpy engine: functional ops with hand-written backward passes, and
layer objects that cache what their backward needs.

Layout is NCHW throughout. H is the time axis of a feature matrix, W the
coefficient axis. Every convolution is 3x3, bias-free, zero-padded to keep
H and W, with dilation ``(d_h, d_w)``.
"""

import numpy as np


class Tensor:
    """A named parameter or buffer with a gradient slot."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name=""):
        self.data = np.asarray(data)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor({self.name!r}, shape={self.data.shape}, dtype={self.data.dtype})"


def _pair(d):
    return (d, d) if np.isscalar(d) else tuple(d)


def _acc_dtype(dtype):
    # reductions run in double; float64 inputs stay float64 end to end
    return np.float64 if dtype != np.float64 else dtype


def _check_conv_shapes(x, w):
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be (N, C, H, W), got shape {x.shape}")
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ValueError(f"conv2d weights must be (n_out, n_in, 3, 3), got shape {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input has C={x.shape[1]}, weights expect n_in={w.shape[1]}")


def conv2d(x, w, dilation=1):
    """Same-padded 3x3 dilated convolution.

    out[n, o, y, x] = sum_{c,i,j} w[o, c, i, j] * in[n, c, y + (i-1) d_h, x + (j-1) d_w]
    with taps outside the input reading zero.
    """
    _check_conv_shapes(x, w)
    dh, dw = _pair(dilation)
    if dh < 1 or dw < 1:
        raise ValueError(f"dilation must be >= 1, got {(dh, dw)}")
    n, c, h, wd = x.shape
    acc = _acc_dtype(x.dtype)
    # channel-major so each tap is one GEMM over all batch positions
    xp = np.pad(x.astype(acc).transpose(1, 0, 2, 3), ((0, 0), (0, 0), (dh, dh), (dw, dw)))
    wa = np.ascontiguousarray(w.astype(acc).transpose(2, 3, 0, 1))  # strided slices miss BLAS
    out = np.zeros((w.shape[0], n * h * wd), dtype=acc)
    for i in range(3):
        for j in range(3):
            tap = xp[:, :, i * dh : i * dh + h, j * dw : j * dw + wd].reshape(c, -1)
            out += wa[i, j] @ tap
    return out.reshape(w.shape[0], n, h, wd).transpose(1, 0, 2, 3).astype(x.dtype)


def conv2d_backward(grad_out, x, w, dilation=1):
    """Gradients of a scalar loss w.r.t. the conv input and weights."""
    if x is None:
        raise RuntimeError("conv2d_backward called without the saved forward input")
    _check_conv_shapes(x, w)
    if grad_out.shape != (x.shape[0], w.shape[0]) + x.shape[2:]:
        raise ValueError(f"grad_out shape {grad_out.shape} does not match conv output")
    dh, dw = _pair(dilation)
    n, c, h, wd = x.shape
    acc = _acc_dtype(x.dtype)
    g = grad_out.astype(acc).transpose(1, 0, 2, 3).reshape(w.shape[0], -1)
    xp = np.pad(x.astype(acc).transpose(1, 0, 2, 3), ((0, 0), (0, 0), (dh, dh), (dw, dw)))
    wa = np.ascontiguousarray(w.astype(acc).transpose(2, 3, 1, 0))
    gxp = np.zeros_like(xp)
    gw = np.zeros(w.shape, dtype=acc)
    for i in range(3):
        for j in range(3):
            ys, xs = slice(i * dh, i * dh + h), slice(j * dw, j * dw + wd)
            tap = xp[:, :, ys, xs].reshape(c, -1)
            gw[:, :, i, j] = g @ tap.T
            gxp[:, :, ys, xs] += (wa[i, j] @ g).reshape(c, n, h, wd)
    gx = gxp[:, :, dh : dh + h, dw : dw + wd].transpose(1, 0, 2, 3)
    return gx.astype(x.dtype), gw.astype(w.dtype)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def batch_norm(x, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """Affine-free per-channel batch norm on NCHW input.

    In train mode normalizes with batch statistics and updates the running
    buffers in place (unbiased variance, like most frameworks). Returns
    ``(y, cache)``; cache is None in eval mode.
    """
    if x.shape[1] != running_mean.shape[0]:
        raise ValueError(f"batch_norm expects {running_mean.shape[0]} channels, got {x.shape[1]}")
    if not train:
        y = (x - running_mean[None, :, None, None]) / np.sqrt(running_var[None, :, None, None] + eps)
        return y.astype(x.dtype), None
    axes = (0, 2, 3)
    count = x.size // x.shape[1]
    acc = _acc_dtype(x.dtype)
    xa = x.astype(acc)
    mean = xa.mean(axis=axes)
    centered = xa - mean[None, :, None, None]
    var = (centered**2).mean(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    y = centered * inv_std[None, :, None, None]
    unbiased = var * count / max(count - 1, 1)
    running_mean *= 1 - momentum
    running_mean += momentum * mean.astype(running_mean.dtype)
    running_var *= 1 - momentum
    running_var += momentum * unbiased.astype(running_var.dtype)
    return y.astype(x.dtype), (y, inv_std)


def batch_norm_backward(grad_out, cache):
    if cache is None:
        raise RuntimeError("batch_norm_backward needs a train-mode forward cache")
    y, inv_std = cache
    g = grad_out.astype(y.dtype)
    axes = (0, 2, 3)
    g_mean = g.mean(axis=axes, keepdims=True)
    gy_mean = (g * y).mean(axis=axes, keepdims=True)
    gx = (g - g_mean - y * gy_mean) * inv_std[None, :, None, None]
    return gx.astype(grad_out.dtype)


def avg_pool(x, window):
    """Non-overlapping average pooling; trailing partial windows are dropped."""
    ph, pw = _pair(window)
    n, c, h, w = x.shape
    if ph > h or pw > w:
        raise ValueError(f"pool window {(ph, pw)} larger than input {(h, w)}")
    oh, ow = h // ph, w // pw
    blocks = x[:, :, : oh * ph, : ow * pw].reshape(n, c, oh, ph, ow, pw)
    return blocks.mean(axis=(3, 5))


def avg_pool_backward(grad_out, input_shape, window):
    ph, pw = _pair(window)
    n, c, h, w = input_shape
    oh, ow = grad_out.shape[2:]
    gx = np.zeros(input_shape, dtype=grad_out.dtype)
    spread = np.repeat(np.repeat(grad_out / (ph * pw), ph, axis=2), pw, axis=3)
    gx[:, :, : oh * ph, : ow * pw] = spread
    return gx


def global_avg_pool(x):
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(grad_out, input_shape):
    h, w = input_shape[2:]
    return np.broadcast_to(grad_out[:, :, None, None] / (h * w), input_shape).copy()


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch. Returns ``(loss, probs, grad_logits)``."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    probs = np.exp(log_p)
    idx = np.arange(len(labels))
    loss = -log_p[idx, labels].mean()
    grad = probs.copy()
    grad[idx, labels] -= 1.0
    return float(loss), probs, grad / len(labels)


def linear_softmax_xent(x, weights, labels):
    """Bias-free fully connected layer into softmax cross-entropy. Returns ``(loss, probs)``."""
    loss, probs, _ = softmax_cross_entropy(x @ weights, labels)
    return loss, probs


def linear_softmax_xent_backward(x, weights, labels):
    """Returns ``(grad_x, grad_weights)`` of the mean cross-entropy."""
    _, _, g = softmax_cross_entropy(x @ weights, labels)
    return g @ weights.T, x.T @ g


# Layers. forward(x, train) caches what backward(grad) needs; backward
# accumulates parameter gradients and returns the input gradient.


class Layer:
    def parameters(self):
        return []

    def buffers(self):
        return []


class Conv2d(Layer):
    def __init__(self, n_in, n_out, dilation=1, rng=None, name="conv"):
        rng = np.random.default_rng() if rng is None else rng
        fan_in = n_in * 9
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(n_out, n_in, 3, 3))
        self.weight = Tensor(w.astype(np.float32), f"{name}.weight")
        self.dilation = _pair(dilation)
        self._x = None

    def forward(self, x, train=False):
        # inputs are kept for backward only in training mode
        self._x = x if train else None
        return conv2d(x, self.weight.data, self.dilation)

    def backward(self, grad):
        gx, gw = conv2d_backward(grad, self._x, self.weight.data, self.dilation)
        self._x = None
        self.weight.grad = gw if self.weight.grad is None else self.weight.grad + gw
        return gx

    def parameters(self):
        return [self.weight]


class ReLU(Layer):
    def forward(self, x, train=False):
        self._x = x if train else None
        return relu(x)

    def backward(self, grad):
        if self._x is None:
            raise RuntimeError("backward called without a training-mode forward")
        gx, self._x = relu_backward(grad, self._x), None
        return gx


class BatchNorm2d(Layer):
    """Batch norm without learned scale or shift."""

    def __init__(self, n, momentum=0.1, eps=1e-5, name="bn"):
        self.running_mean = Tensor(np.zeros(n, dtype=np.float32), f"{name}.running_mean")
        self.running_var = Tensor(np.ones(n, dtype=np.float32), f"{name}.running_var")
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def forward(self, x, train=False):
        y, self._cache = batch_norm(
            x, self.running_mean.data, self.running_var.data, train, self.momentum, self.eps
        )
        return y

    def backward(self, grad):
        if self._cache is None:
            raise RuntimeError("backward called without a training-mode forward")
        gx, self._cache = batch_norm_backward(grad, self._cache), None
        return gx

    def buffers(self):
        return [self.running_mean, self.running_var]


class AvgPool2d(Layer):
    def __init__(self, window):
        self.window = _pair(window)

    def forward(self, x, train=False):
        self._shape = x.shape
        return avg_pool(x, self.window)

    def backward(self, grad):
        return avg_pool_backward(grad, self._shape, self.window)


class GlobalAvgPool(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return global_avg_pool(x)

    def backward(self, grad):
        return global_avg_pool_backward(grad, self._shape)


class Linear(Layer):
    """Bias-free dense layer, weights shaped (n_in, n_out)."""

    def __init__(self, n_in, n_out, rng=None, name="fc", scale=None):
        rng = np.random.default_rng() if rng is None else rng
        std = 1.0 / np.sqrt(n_in) if scale is None else scale
        self.weight = Tensor(rng.normal(0.0, std, size=(n_in, n_out)).astype(np.float32), f"{name}.weight")

    def forward(self, x, train=False):
        self._x = x if train else None
        return x @ self.weight.data.astype(x.dtype)

    def backward(self, grad):
        if self._x is None:
            raise RuntimeError("backward called without a training-mode forward")
        gw = self._x.T @ grad
        self._x = None
        self.weight.grad = gw if self.weight.grad is None else self.weight.grad + gw
        return grad @ self.weight.data.T.astype(grad.dtype)

    def parameters(self):
        return [self.weight]


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def buffers(self):
        return [b for layer in self.layers for b in layer.buffers()]


class ResidualBlock(Layer):
    """conv -> ReLU -> bn -> conv -> ReLU -> bn, then the block input is added."""

    def __init__(self, n, dilations=(1, 1), rng=None, name="res"):
        self.body = Sequential(
            [
                Conv2d(n, n, dilations[0], rng, f"{name}.conv1"),
                ReLU(),
                BatchNorm2d(n, name=f"{name}.bn1"),
                Conv2d(n, n, dilations[1], rng, f"{name}.conv2"),
                ReLU(),
                BatchNorm2d(n, name=f"{name}.bn2"),
            ]
        )

    def forward(self, x, train=False):
        return self.body.forward(x, train) + x

    def backward(self, grad):
        return self.body.backward(grad) + grad

    def parameters(self):
        return self.body.parameters()

    def buffers(self):
        return self.body.buffers()


class SGD:
    """Classical (heavy-ball) momentum with L2 weight decay folded into the gradient.

    v <- momentum * v + (grad + weight_decay * param);  param <- param - lr * v
    """

    def __init__(self, params, lr=0.1, momentum=0.9, weight_decay=1e-5):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        for p, g in zip(self.params, grads):
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {p.name or 'parameter'}; step aborted")
        sgd_step(
            [p.data for p in self.params], grads, self.lr, self.velocity, self.momentum, self.weight_decay
        )


def sgd_step(params, grads, lr, velocity, momentum=0.9, weight_decay=1e-5):
    """Functional form of one momentum step; updates ``params`` and ``velocity`` arrays in place."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; step aborted")
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v
    return params, velocity
