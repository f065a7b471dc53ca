"""Layer primitives with exact analytic gradients.

All ops are plain functions over numpy arrays and work in the dtype of
their inputs: float64 for verification, float32 for training speed.
Convolutions lower to an im2col patch buffer and one GEMM per sample; the
input gradient scatters back through a loop over kernel offsets, so both
directions stay vectorized. Reduction orders are fixed, making every op
deterministic for a given input.

Large intermediates (patch buffers, spatial-phase copies) come from a
thread-local workspace pool keyed by shape, which avoids re-faulting
hundreds of megabytes of fresh pages on every training step. Pooled
buffers never escape a single forward or backward call.

Output sizes follow the usual convention floor((D + 2p - k) / s) + 1;
trailing rows that the stride cannot reach are dropped.
"""

from __future__ import annotations

import threading

import numpy as np

_LOCAL = threading.local()


def _workspace(tag, shape, dtype) -> np.ndarray:
    bufs = getattr(_LOCAL, "bufs", None)
    if bufs is None:
        bufs = _LOCAL.bufs = {}
    key = (tag, tuple(shape), np.dtype(dtype).str)
    buf = bufs.get(key)
    if buf is None:
        buf = bufs[key] = np.empty(shape, dtype)
    return buf


class ShapeMismatch(ValueError):
    pass


class DegenerateBatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ShapeMismatch(f"expected an int or a length-3 tuple, got {v!r}")
    return t


# --------------------------------------------------------------------------
# 3D convolution (cross-correlation)
# --------------------------------------------------------------------------

def _conv_out_size(dims, kernel, stride, padding):
    out = []
    for d, k, s, p in zip(dims, kernel, stride, padding):
        o = (d + 2 * p - k) // s + 1
        if d + 2 * p < k or o < 1:
            raise ShapeMismatch(
                f"kernel {kernel} with stride {stride}, padding {padding} does not "
                f"fit input dims {tuple(dims)}"
            )
        out.append(o)
    return tuple(out)


def _phase_split(xpad, sh, sw, tag):
    """Contiguous copies of the (sh, sw) spatial subsampling phases.

    Strided spatial slices during the patch fill would copy element by
    element; splitting once into phase grids makes every later slice
    contiguous along the width axis.
    """
    phases = {}
    for a in range(sh):
        for b in range(sw):
            sub = xpad[:, :, :, a::sh, b::sw]
            buf = _workspace((tag, a, b), sub.shape, xpad.dtype)
            np.copyto(buf, sub)
            phases[a, b] = buf
    return phases


def _fill_cols(xpad, kernel, stride, out_dims, tag) -> np.ndarray:
    """Patch buffer (N, Cin, kt, kh, kw, To, Ho, Wo), filled per kernel offset."""
    n, cin = xpad.shape[:2]
    kt, kh, kw = kernel
    st, sh, sw = stride
    to, ho, wo = out_dims
    cols = _workspace((tag, "cols"), (n, cin, kt, kh, kw, to, ho, wo), xpad.dtype)
    if sh == 1 and sw == 1:
        for it in range(kt):
            for ih in range(kh):
                for iw in range(kw):
                    cols[:, :, it, ih, iw] = xpad[:, :,
                                                  it:it + st * to:st,
                                                  ih:ih + ho,
                                                  iw:iw + wo]
    else:
        phases = _phase_split(xpad, sh, sw, (tag, "phase"))
        for it in range(kt):
            for ih in range(kh):
                pa, qa = ih % sh, ih // sh
                for iw in range(kw):
                    pb, qb = iw % sw, iw // sw
                    cols[:, :, it, ih, iw] = phases[pa, pb][:, :,
                                                            it:it + st * to:st,
                                                            qa:qa + ho,
                                                            qb:qb + wo]
    return cols


def conv3d_forward(x, w, b, stride=(1, 1, 1), padding=(0, 0, 0), workspace_tag=None):
    """Cross-correlate (N,Cin,T,H,W) with (Cout,Cin,kt,kh,kw) weights.

    Returns (y, cache) with y of shape (N,Cout,T',H',W'). A caller that
    guarantees no other conv runs under the same tag before the matching
    backward (e.g. the network, tagging per layer) may pass workspace_tag
    so the patch buffer is kept in the cache instead of being refilled
    during the backward pass.
    """
    stride = _triple(stride)
    padding = _triple(padding)
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeMismatch(f"conv3d expects 5-d input and weights, got {x.shape}, {w.shape}")
    n, cin, *dims = x.shape
    cout, cin_w, *kernel = w.shape
    kernel = tuple(kernel)
    if cin != cin_w:
        raise ShapeMismatch(f"input has {cin} channels but weights expect {cin_w}")
    if b is not None and b.shape != (cout,):
        raise ShapeMismatch(f"bias must have shape ({cout},), got {b.shape}")
    out_dims = _conv_out_size(dims, kernel, stride, padding)
    to, ho, wo = out_dims
    st, sh, sw = stride
    length = to * ho * wo

    pt, ph, pw = padding
    if pt or ph or pw:
        xpad = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    else:
        xpad = x
    wmat = w.reshape(cout, -1)
    y = np.empty((n, cout) + out_dims, dtype=x.dtype)
    saved_cols = None
    if kernel == (1, 1, 1):
        # pointwise conv: one GEMM per sample over subsampled positions
        xs = np.ascontiguousarray(
            xpad[:, :, 0:st * to:st, 0:sh * ho:sh, 0:sw * wo:sw]
        )
        for i in range(n):
            np.matmul(wmat, xs[i].reshape(cin, length), out=y[i].reshape(cout, length))
    else:
        cols = _fill_cols(xpad, kernel, stride, out_dims, workspace_tag or "fwd")
        colmat = cols.reshape(n, -1, length)
        # (L, K) @ (K, Cout) is markedly faster than (Cout, K) @ (K, L) for
        # the skinny channel counts used here; transpose the result back
        yt = _workspace(("fwd", "yt"), (length, cout), x.dtype)
        for i in range(n):
            np.matmul(colmat[i].T, wmat.T, out=yt)
            np.copyto(y[i].reshape(cout, length), yt.T)
        if workspace_tag is not None:
            saved_cols = cols
    if b is not None:
        y += b.reshape(1, cout, 1, 1, 1)
    cache = (xpad, w, b is not None, stride, padding, out_dims, x.shape, saved_cols)
    return y, cache


def conv3d_backward(grad_out, cache):
    """Gradients of conv3d_forward: (grad_input, grad_weights, grad_bias)."""
    xpad, w, has_bias, stride, padding, out_dims, x_shape, saved_cols = cache
    n, cout = grad_out.shape[:2]
    if grad_out.shape != (n, cout) + out_dims or cout != w.shape[0]:
        raise ShapeMismatch(
            f"upstream gradient shape {grad_out.shape} does not match forward output"
        )
    kernel = w.shape[2:]
    kt, kh, kw = kernel
    st, sh, sw = stride
    to, ho, wo = out_dims
    cin = w.shape[1]
    length = to * ho * wo
    grad_out = np.ascontiguousarray(grad_out)

    wmat = w.reshape(cout, -1)
    gwmat = np.zeros_like(wmat)
    gxpad = np.zeros_like(xpad)
    if kernel == (1, 1, 1):
        xs = np.ascontiguousarray(
            xpad[:, :, 0:st * to:st, 0:sh * ho:sh, 0:sw * wo:sw]
        )
        dxs = np.empty_like(xs)
        for i in range(n):
            gy = grad_out[i].reshape(cout, length)
            gwmat += gy @ xs[i].reshape(cin, length).T
            np.matmul(wmat.T, gy, out=dxs[i].reshape(cin, length))
        # each output position maps to exactly one input position
        gxpad[:, :, 0:st * to:st, 0:sh * ho:sh, 0:sw * wo:sw] = dxs
    else:
        cols = saved_cols if saved_cols is not None else \
            _fill_cols(xpad, kernel, stride, out_dims, "bwd")
        colmat = cols.reshape(n, -1, length)
        dcols = _workspace(("bwd", "dcols"), cols.shape, cols.dtype)
        dcolmat = dcols.reshape(n, -1, length)
        for i in range(n):
            gy = grad_out[i].reshape(cout, length)
            gwmat += gy @ colmat[i].T
            np.matmul(wmat.T, gy, out=dcolmat[i])
        if sh == 1 and sw == 1:
            for it in range(kt):
                for ih in range(kh):
                    for iw in range(kw):
                        gxpad[:, :,
                              it:it + st * to:st,
                              ih:ih + ho,
                              iw:iw + wo] += dcols[:, :, it, ih, iw]
        else:
            # accumulate into contiguous phase grids, then scatter once
            gphases = {}
            for a in range(sh):
                for b_ in range(sw):
                    sub_shape = gxpad[:, :, :, a::sh, b_::sw].shape
                    buf = _workspace(("bwd", "gphase", a, b_), sub_shape, gxpad.dtype)
                    buf.fill(0)
                    gphases[a, b_] = buf
            for it in range(kt):
                for ih in range(kh):
                    pa, qa = ih % sh, ih // sh
                    for iw in range(kw):
                        pb, qb = iw % sw, iw // sw
                        gphases[pa, pb][:, :,
                                        it:it + st * to:st,
                                        qa:qa + ho,
                                        qb:qb + wo] += dcols[:, :, it, ih, iw]
            for (a, b_), buf in gphases.items():
                gxpad[:, :, :, a::sh, b_::sw] = buf
    pt, ph, pw = padding
    t, h, wd = x_shape[2:]
    if pt or ph or pw:
        gx = np.ascontiguousarray(gxpad[:, :, pt:pt + t, ph:ph + h, pw:pw + wd])
    else:
        gx = gxpad
    gb = grad_out.sum(axis=(0, 2, 3, 4)) if has_bias else None
    return gx, gwmat.reshape(w.shape), gb


# --------------------------------------------------------------------------
# Batch normalization over (N, T, H, W) per channel
# --------------------------------------------------------------------------

_BN_AXES = (0, 2, 3, 4)


def batchnorm3d_forward(x, gamma, beta, running_mean, running_var,
                        training, momentum=0.1, eps=1e-5):
    """Per-channel batch norm.

    Training mode normalizes with batch statistics (biased variance) and
    returns updated running statistics (unbiased variance, like the usual
    convention); eval mode normalizes with the running statistics. Returns
    (y, cache, new_running_mean, new_running_var).
    """
    if x.ndim != 5 or x.shape[1] != gamma.shape[0]:
        raise ShapeMismatch(
            f"batchnorm expects (N,C,T,H,W) with C={gamma.shape[0]}, got {x.shape}"
        )
    c = x.shape[1]
    shape = (1, c, 1, 1, 1)
    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3] * x.shape[4]
        if m <= 1:
            raise DegenerateBatch(
                "batch norm in training mode needs more than one element per channel"
            )
        mean = x.mean(axis=_BN_AXES)
        var = x.var(axis=_BN_AXES)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
        new_rm = (1.0 - momentum) * running_mean + momentum * mean
        new_rv = (1.0 - momentum) * running_var + momentum * var * (m / (m - 1.0))
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean.reshape(shape)) * inv.reshape(shape)
        new_rm = running_mean
        new_rv = running_var
    y = gamma.reshape(shape) * xhat + beta.reshape(shape)
    cache = (xhat, inv, gamma, training)
    return y, cache, new_rm, new_rv


def batchnorm3d_backward(grad_out, cache):
    """Gradients of batchnorm3d_forward: (grad_input, grad_gamma, grad_beta)."""
    xhat, inv, gamma, training = cache
    if grad_out.shape != xhat.shape:
        raise ShapeMismatch(
            f"upstream gradient shape {grad_out.shape} does not match {xhat.shape}"
        )
    c = xhat.shape[1]
    shape = (1, c, 1, 1, 1)
    dbeta = grad_out.sum(axis=_BN_AXES)
    dgamma = (grad_out * xhat).sum(axis=_BN_AXES)
    dxhat = grad_out * gamma.reshape(shape)
    if not training:
        return dxhat * inv.reshape(shape), dgamma, dbeta
    m = xhat.shape[0] * xhat.shape[2] * xhat.shape[3] * xhat.shape[4]
    sum_dxhat = dxhat.sum(axis=_BN_AXES).reshape(shape)
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=_BN_AXES).reshape(shape)
    dx = (inv.reshape(shape) / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return dx, dgamma, dbeta


# --------------------------------------------------------------------------
# Pointwise and pooling ops
# --------------------------------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out, mask):
    return grad_out * mask


def global_avg_pool(x):
    """(N,C,T,H,W) -> (N,C) mean over all positions."""
    if x.ndim != 5:
        raise ShapeMismatch(f"expected (N,C,T,H,W), got {x.shape}")
    return x.mean(axis=(2, 3, 4)), x.shape


def global_avg_pool_backward(grad_out, x_shape):
    n, c, t, h, w = x_shape
    if grad_out.shape != (n, c):
        raise ShapeMismatch(f"upstream gradient shape {grad_out.shape} != {(n, c)}")
    scale = 1.0 / (t * h * w)
    return np.broadcast_to(
        (grad_out * scale)[:, :, None, None, None], x_shape
    ).astype(grad_out.dtype, copy=True)


def linear_forward(x, w, b):
    """(N,Din) @ (Dout,Din)^T + (Dout,) -> (N,Dout)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"linear shapes do not align: x {x.shape}, w {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeMismatch(f"bias must have shape ({w.shape[0]},), got {b.shape}")
    y = x @ w.T
    if b is not None:
        y += b
    return y, (x, w, b is not None)


def linear_backward(grad_out, cache):
    x, w, has_bias = cache
    if grad_out.shape != (x.shape[0], w.shape[0]):
        raise ShapeMismatch(
            f"upstream gradient shape {grad_out.shape} != {(x.shape[0], w.shape[0])}"
        )
    gx = grad_out @ w
    gw = grad_out.T @ x
    gb = grad_out.sum(axis=0) if has_bias else None
    return gx, gw, gb


def mse_loss(predictions, labels):
    """Mean squared error and its gradient 2*(pred - label)/N."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise LengthMismatch(
            f"predictions {predictions.shape} and labels {labels.shape} must be "
            "1-d and equal length"
        )
    diff = predictions - labels
    loss = float((diff * diff).mean())
    grad = (2.0 / len(diff)) * diff
    return loss, grad
