"""Shared test utilities: oracles kept independent of the library code."""

import numpy as np
import torch


def random_partition_mask(rng, batch, k, h, w):
    """Random one-hot partition with every component guaranteed non-empty
    when k <= h*w."""
    labels = rng.integers(0, k, size=(batch, h, w))
    flat = labels.reshape(batch, -1)
    for b in range(batch):
        # force each component to own at least one pixel
        idx = rng.permutation(h * w)[:k]
        flat[b, idx] = np.arange(k)
    mask = np.zeros((batch, k, h, w), dtype=np.float32)
    for c in range(k):
        mask[:, c] = labels == c
    return torch.from_numpy(mask)


def moments_oracle(x, mask):
    """Direct per-component loops over masked pixels (numpy, population var)."""
    x = x.numpy()
    mask = mask.numpy()
    b, c, h, w = x.shape
    k = mask.shape[1]
    mean = np.zeros((b, k, c))
    var = np.zeros((b, k, c))
    count = np.zeros((b, k), dtype=int)
    for bi in range(b):
        for ki in range(k):
            sel = mask[bi, ki] > 0
            count[bi, ki] = sel.sum()
            if count[bi, ki]:
                vals = x[bi, :, sel]  # (npix, c)
                mean[bi, ki] = vals.mean(axis=0)
                var[bi, ki] = vals.var(axis=0)
    return mean, var, count


def central_difference(f, x, eps=1e-6):
    """Central finite-difference gradient of scalar f at tensor x (float64)."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def assert_grad_close(analytic, numeric, rel_tol=1e-4):
    scale = max(float(numeric.abs().max()), 1e-8)
    err = float((analytic - numeric).abs().max()) / scale
    assert err < rel_tol, f"gradient mismatch: relative error {err:.3e}"


def conv_stack_oracle(image, weights, strides):
    """Straight-line numpy forward of a conv+ReLU stack (same padding).

    ``image`` is (C, H, W); ``weights`` is [(w, b), ...] with w of shape
    (out, in, kh, kw).  Returns the feature map after every layer.
    """
    x = np.asarray(image, dtype=np.float64)
    feats = []
    for (w, b), stride in zip(weights, strides):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        c_out, c_in, kh, kw = w.shape
        pad = kh // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
        h_out = (x.shape[1] - 1) // stride + 1
        w_out = (x.shape[2] - 1) // stride + 1
        y = np.zeros((c_out, h_out, w_out))
        for oc in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    patch = xp[:, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    y[oc, i, j] = (patch * w[oc]).sum() + b[oc]
        x = np.maximum(y, 0.0)
        feats.append(x)
    return feats


def lpips_oracle(x, y, weights, strides, eps=1e-10):
    """Independent normalize-diff-average over oracle conv features."""
    total = 0.0
    for fx, fy in zip(conv_stack_oracle(x, weights, strides),
                      conv_stack_oracle(y, weights, strides)):
        nx = fx / np.maximum(np.sqrt((fx ** 2).sum(axis=0, keepdims=True)), eps)
        ny = fy / np.maximum(np.sqrt((fy ** 2).sum(axis=0, keepdims=True)), eps)
        total += ((nx - ny) ** 2).sum(axis=0).mean()
    return total
