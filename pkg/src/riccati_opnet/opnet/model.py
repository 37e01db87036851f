"""DeepONet surrogates for matrix-valued Riccati solutions.

All models map a batch of encodings and a set of evaluation times to
symmetric matrices of shape ``(batch, times, n, n)``.  Time-invariant (ARE)
models ignore the time argument and feed the trunk the constant pair
``(0, 1)``; time-dependent models feed ``(t / T, 1 - t / T)``.
"""

import hashlib
import math

import numpy as np

from .mlp import GELU, TANH, Mlp, activate

FULL_THEN_SYMMETRIZE = "full_then_symmetrize"


def _sym_last2(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


class _Normalized:
    """Input standardization and output affine scaling shared by models."""

    def init_normalization(self, d_in, n):
        self.in_mean = np.zeros(d_in)
        self.in_std = np.ones(d_in)
        self.out_mean = np.zeros((n, n))
        self.out_scale = 1.0
        self.clear_inference_cache()

    def clear_inference_cache(self):
        """Drop precomputed inference plans; needed after in-place weight edits."""
        self._plans = {}

    def fit_normalization(self, encodings, targets):
        """Per-feature standardization of inputs; mean/RMS scaling of targets."""
        x = np.asarray(encodings, dtype=float)
        self.in_mean = x.mean(axis=0)
        std = x.std(axis=0)
        self.in_std = np.where(std > 1e-12, std, 1.0)
        y = np.asarray(targets, dtype=float)
        y = y.reshape((-1,) + y.shape[-2:])
        self.out_mean = _sym_last2(y.mean(axis=0))
        spread = math.sqrt(float(np.mean((y - self.out_mean) ** 2)))
        self.out_scale = spread if spread > 1e-12 else 1.0
        self.clear_inference_cache()

    def normalize(self, encodings):
        x = np.atleast_2d(np.asarray(encodings, dtype=float))
        return (x - self.in_mean) / self.in_std

    def normalization_state(self):
        return {"in_mean": self.in_mean, "in_std": self.in_std,
                "out_mean": self.out_mean, "out_scale": self.out_scale}

    def set_normalization(self, state):
        self.in_mean = np.asarray(state["in_mean"], dtype=float)
        self.in_std = np.asarray(state["in_std"], dtype=float)
        self.out_mean = np.asarray(state["out_mean"], dtype=float)
        self.out_scale = float(state["out_scale"])
        self.clear_inference_cache()


class DeepOnetModel(_Normalized):
    """Branch/trunk network with ``G(theta)(t)_c = sum_k beta_{k,c} tau_k(t)``.

    ``branch_widths`` runs from the encoding width to the latent width ``p``;
    a linear read-out ``p -> p * n^2`` is appended to the branch so every
    matrix entry (channel) gets its own coefficients.  ``trunk_widths`` runs
    from 2 to ``p``.  The head symmetrizes the ``n x n`` channel matrix.
    """

    kind = "deeponet"

    def __init__(self, n, branch_widths, trunk_widths, activation=TANH,
                 time_dependent=False, horizon=1.0, encoding=None, seed=0):
        if branch_widths[-1] != trunk_widths[-1]:
            raise ValueError("branch and trunk must end in the same latent width")
        if trunk_widths[0] != 2:
            raise ValueError("trunk input width must be 2")
        rng = np.random.default_rng(seed)
        self.n = int(n)
        self.p = int(trunk_widths[-1])
        self.channels = self.n * self.n
        self.branch_widths = [int(w) for w in branch_widths]
        self.trunk_widths = [int(w) for w in trunk_widths]
        self.activation = activation
        self.time_dependent = bool(time_dependent)
        self.horizon = float(horizon)
        self.encoding = encoding
        self.head = FULL_THEN_SYMMETRIZE
        self.seed = seed
        self.branch = Mlp(self.branch_widths + [self.p * self.channels], activation, rng)
        self.trunk = Mlp(self.trunk_widths, activation, rng)
        self.init_normalization(self.branch_widths[0], self.n)

    @property
    def input_width(self):
        return self.branch_widths[0]

    def params(self):
        return self.branch.params() + self.trunk.params()

    def trainable_params(self):
        return self.params()

    def count_params(self):
        return self.branch.count_params() + self.trunk.count_params()

    def set_params(self, arrays):
        nb = 2 * self.branch.n_layers
        self.branch.set_params(arrays[:nb])
        self.trunk.set_params(arrays[nb:])
        self.clear_inference_cache()

    def trunk_input(self, times=None):
        if not self.time_dependent:
            return np.array([[0.0, 1.0]])
        if times is None:
            raise ValueError("time-dependent model needs evaluation times")
        s = np.atleast_1d(np.asarray(times, dtype=float)) / self.horizon
        return np.stack([s, 1.0 - s], axis=1)

    def forward_normalized(self, xn, times=None, cache=False):
        """Forward pass on already standardized encodings."""
        b = xn.shape[0]
        beta, btape = self.branch.forward(xn, cache=True) if cache else (self.branch.forward(xn), None)
        tin = self.trunk_input(times)
        tau, ttape = self.trunk.forward(tin, cache=True) if cache else (self.trunk.forward(tin), None)
        beta = beta.reshape(b, self.p, self.channels)
        v = np.tensordot(beta, tau, axes=([1], [1]))  # (b, C, T)
        v = np.transpose(v, (0, 2, 1)).reshape(b, tau.shape[0], self.n, self.n)
        out = self.out_mean + self.out_scale * _sym_last2(v)
        if cache:
            return out, (btape, ttape, beta, tau)
        return out

    def forward(self, encodings, times=None, cache=False):
        return self.forward_normalized(self.normalize(encodings), times, cache)

    def backward_normalized(self, tape, grad_out, need_params=True):
        """Returns ``(param_grads, grad_wrt_standardized_input)``."""
        btape, ttape, beta, tau = tape
        b, t = grad_out.shape[:2]
        g = self.out_scale * _sym_last2(grad_out)
        g = g.reshape(b, t, self.channels)
        d_beta = np.transpose(np.tensordot(g, tau, axes=([1], [0])), (0, 2, 1))  # (b, p, C)
        gb, gx = self.branch.backward(btape, d_beta.reshape(b, -1), need_params)
        if not need_params:
            return None, gx
        d_tau = np.tensordot(g, beta, axes=([0, 2], [0, 2]))  # (T, p)
        gt, _ = self.trunk.backward(ttape, d_tau)
        return gb + gt, gx

    def backward(self, tape, grad_out):
        grads, _ = self.backward_normalized(tape, grad_out)
        return grads

    def _plan(self, times):
        """Inference weights with the trunk and standardization folded in.

        For a fixed time grid the trunk output ``tau`` is constant, so the
        branch read-out ``W`` (``K x p*C``) contracts with it into a
        ``K x T*C`` matrix.  The input standardization folds into the first
        branch layer the same way.  Plans are cached per time grid.
        """
        tin = self.trunk_input(times)
        key = tin.tobytes()
        plan = self._plans.get(key)
        if plan is not None:
            return plan
        tau = self.trunk.forward(tin)
        weights, biases = list(self.branch.weights), list(self.branch.biases)
        biases[0] = biases[0] - (self.in_mean / self.in_std) @ weights[0]
        weights[0] = weights[0] / self.in_std[:, None]
        k = weights[-1].shape[0]
        w_fold = np.einsum("kpc,tp->ktc", weights[-1].reshape(k, self.p, self.channels), tau)
        b_fold = np.einsum("pc,tp->tc", biases[-1].reshape(self.p, self.channels), tau)
        weights[-1], biases[-1] = w_fold.reshape(k, -1), b_fold.reshape(-1)
        plan = (weights, biases, tau.shape[0])
        if len(self._plans) >= 8:
            self._plans.clear()
        self._plans[key] = plan
        return plan

    def predict(self, encodings, times=None):
        """Symmetric predictions: ``(B, n, n)`` for ARE, ``(B, T, n, n)`` otherwise.

        Uses a cached plan (see :meth:`_plan`) that matches :meth:`forward`
        up to rounding.  Call :meth:`clear_inference_cache` after changing
        weights in place outside :func:`train`.
        """
        weights, biases, t = self._plan(times)
        h = np.atleast_2d(np.asarray(encodings, dtype=float))
        last = len(weights) - 1
        for i, (w, b) in enumerate(zip(weights, biases)):
            h = h @ w + b
            if i != last:
                h = activate(self.activation, h)
        v = h.reshape(h.shape[0], t, self.n, self.n)
        out = self.out_mean + self.out_scale * _sym_last2(v)
        return out if self.time_dependent else out[:, 0]

    def describe(self):
        return {
            "kind": self.kind,
            "n": self.n,
            "branch_widths": self.branch_widths,
            "trunk_widths": self.trunk_widths,
            "activation": self.activation,
            "time_dependent": self.time_dependent,
            "horizon": self.horizon,
            "head": self.head,
            "encoding": self.encoding,
        }

    @classmethod
    def from_description(cls, d):
        return cls(n=d["n"], branch_widths=d["branch_widths"], trunk_widths=d["trunk_widths"],
                   activation=d["activation"], time_dependent=d["time_dependent"],
                   horizon=d["horizon"], encoding=d.get("encoding"))


class ProgressiveModel(_Normalized):
    """Frozen low-dimensional core wrapped by trainable embed and lift networks.

    ``embed`` maps a high-dimensional encoding to ``views`` core inputs, the
    core is evaluated on each, and ``lift`` maps the concatenated core
    matrices to the high-dimensional matrix.  Only embed and lift train.
    """

    kind = "progressive"

    def __init__(self, core, n, input_width, views=1, embed_hidden=None,
                 lift_hidden=None, activation=TANH, encoding=None, seed=0):
        rng = np.random.default_rng(seed)
        self.core = core
        self.n = int(n)
        self.views = int(views)
        self.activation = activation
        self.encoding = encoding
        self.time_dependent = core.time_dependent
        self.horizon = core.horizon
        d_core = core.input_width
        core_out = self.views * core.channels
        embed_out = self.views * d_core
        if embed_hidden is None:
            embed_hidden = int(round(math.sqrt(input_width * embed_out)))
        if lift_hidden is None:
            lift_hidden = int(round(math.sqrt(core_out * self.n * self.n)))
        self.embed = Mlp([input_width, embed_hidden, embed_out], activation, rng)
        self.lift = Mlp([core_out, lift_hidden, self.n * self.n], activation, rng)
        self.init_normalization(input_width, self.n)

    @property
    def input_width(self):
        return self.embed.widths[0]

    def params(self):
        return self.embed.params() + self.lift.params()

    def trainable_params(self):
        return self.params()

    def count_params(self):
        return self.embed.count_params() + self.lift.count_params()

    def set_params(self, arrays):
        ne = 2 * self.embed.n_layers
        self.embed.set_params(arrays[:ne])
        self.lift.set_params(arrays[ne:])

    def forward(self, encodings, times=None, cache=False):
        xn = self.normalize(encodings)
        b = xn.shape[0]
        z, etape = self.embed.forward(xn, cache=True) if cache else (self.embed.forward(xn), None)
        zc = z.reshape(b * self.views, self.core.input_width)
        if cache:
            core_out, ctape = self.core.forward_normalized(zc, times, cache=True)
        else:
            core_out, ctape = self.core.forward_normalized(zc, times), None
        t = core_out.shape[1]
        lin = core_out.reshape(b, self.views, t, self.core.channels)
        lin = np.transpose(lin, (0, 2, 1, 3)).reshape(b * t, self.views * self.core.channels)
        v, ltape = self.lift.forward(lin, cache=True) if cache else (self.lift.forward(lin), None)
        v = v.reshape(b, t, self.n, self.n)
        out = self.out_mean + self.out_scale * _sym_last2(v)
        if cache:
            return out, (etape, ctape, ltape, b, t)
        return out

    def backward(self, tape, grad_out, return_core_grads=False):
        etape, ctape, ltape, b, t = tape
        g = self.out_scale * _sym_last2(grad_out)
        g = g.reshape(b * t, self.n * self.n)
        g_lift, g_lin = self.lift.backward(ltape, g)
        g_core_out = g_lin.reshape(b, t, self.views, self.core.channels)
        g_core_out = np.transpose(g_core_out, (0, 2, 1, 3)).reshape(
            b * self.views, t, self.core.n, self.core.n)
        # backprop runs through the core to reach the embedding; its weights never move
        core_grads, g_z = self.core.backward_normalized(ctape, g_core_out, return_core_grads)
        g_embed, _ = self.embed.backward(etape, g_z.reshape(b, -1))
        grads = g_embed + g_lift
        return (grads, core_grads) if return_core_grads else grads

    def predict(self, encodings, times=None):
        out = self.forward(encodings, times)
        return out if self.time_dependent else out[:, 0]

    def describe(self):
        return {
            "kind": self.kind,
            "n": self.n,
            "views": self.views,
            "embed_widths": self.embed.widths,
            "lift_widths": self.lift.widths,
            "activation": self.activation,
            "encoding": self.encoding,
            "core": self.core.describe(),
        }


def count_params(model):
    """Trainable parameter count (progressive models exclude the frozen core)."""
    return model.count_params()


def param_checksum(arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def forward(model, encoding, t=None):
    """Single-instance prediction: one symmetric ``n x n`` matrix."""
    times = None if t is None else [t]
    out = model.forward(np.atleast_2d(encoding), times)
    return out[0, 0]


def loss_mse(model, encodings, targets, times=None):
    """Mean squared Frobenius error over samples (and grid times for DRE)."""
    pred = model.forward(encodings, times)
    y = _as_4d(targets, model)
    return float(np.mean(np.sum((pred - y) ** 2, axis=(-1, -2))))


def loss_and_grad(model, encodings, targets, times=None):
    """Loss and gradients w.r.t. ``model.trainable_params()``."""
    pred, tape = model.forward(encodings, times, cache=True)
    y = _as_4d(targets, model)
    diff = pred - y
    b, t = diff.shape[:2]
    loss = float(np.sum(diff ** 2)) / (b * t)
    grads = model.backward(tape, 2.0 * diff / (b * t))
    return loss, grads


def _as_4d(targets, model):
    y = np.asarray(targets, dtype=float)
    if not model.time_dependent and y.ndim == 3:
        y = y[:, None]
    return y


__all__ = ["DeepOnetModel", "ProgressiveModel", "count_params", "forward", "loss_mse",
           "loss_and_grad", "param_checksum", "GELU", "TANH"]
