"""Pure numpy implementation of the fused LSTM pointwise kernels.

Mirrors the compiled extension: same signatures, same gate layout (packed
[i, f, g, o] blocks along the last axis), same sigmoid-via-tanh
formulation. Results agree within floating-point rounding; numpy's
vectorized tanh and libm's tanh differ in the last bits.
"""

import numpy as np


def lstm_pointwise_forward(gates, c_prev, c_new, tanh_c, h_new):
    """Apply gate activations in place and fill the cell/hidden outputs.

    gates: (n, 4h) pre-activation affine output; overwritten with the
    activated gates. c_prev: (n, h). c_new, tanh_c, h_new: (n, h) outputs.
    """
    h = c_prev.shape[1]
    i = gates[:, 0 * h:1 * h]
    f = gates[:, 1 * h:2 * h]
    g = gates[:, 2 * h:3 * h]
    o = gates[:, 3 * h:4 * h]
    np.multiply(i, 0.5, out=i)
    np.tanh(i, out=i)
    i += 1.0
    i *= 0.5
    np.multiply(f, 0.5, out=f)
    np.tanh(f, out=f)
    f += 1.0
    f *= 0.5
    np.tanh(g, out=g)
    np.multiply(o, 0.5, out=o)
    np.tanh(o, out=o)
    o += 1.0
    o *= 0.5
    np.multiply(f, c_prev, out=c_new)
    c_new += i * g
    np.tanh(c_new, out=tanh_c)
    np.multiply(o, tanh_c, out=h_new)


def lstm_pointwise_backward(acts, c_prev, tanh_c, dh, dc, dgates_out, dc_prev_out):
    """Reverse the pointwise stage.

    acts: (n, 4h) activated gates from the forward pass. dh, dc: incoming
    gradients for the hidden and cell outputs. dgates_out: (n, 4h) receives
    gradients w.r.t. the pre-activation affine output. dc_prev_out: (n, h)
    receives the gradient w.r.t. the previous cell state.
    """
    h = c_prev.shape[1]
    i = acts[:, 0 * h:1 * h]
    f = acts[:, 1 * h:2 * h]
    g = acts[:, 2 * h:3 * h]
    o = acts[:, 3 * h:4 * h]
    dc_total = dc + dh * o * (1.0 - tanh_c * tanh_c)
    dgates_out[:, 0 * h:1 * h] = dc_total * g * i * (1.0 - i)
    dgates_out[:, 1 * h:2 * h] = dc_total * c_prev * f * (1.0 - f)
    dgates_out[:, 2 * h:3 * h] = dc_total * i * (1.0 - g * g)
    dgates_out[:, 3 * h:4 * h] = dh * tanh_c * o * (1.0 - o)
    np.multiply(dc_total, f, out=dc_prev_out)
