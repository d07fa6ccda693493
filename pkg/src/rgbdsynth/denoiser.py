"""Noise estimators: analytic oracles and a small trainable network.

All denoisers share the call signature denoiser(x_t, cond, t) -> eps_hat
where x_t and cond are H x W x 4 arrays in normalized space and cond is
the known content (zeros where unknown). The null condition for the
unconditional branch is the all-zero image.

The trainable network is a scaled-down UNet: 8-channel input (x_t
concatenated with the condition), two stride-2 downsampling stages, a
bottleneck, two upsampling stages with skip connections, 4-channel
output. Normalization is layer-style (statistics over all channels and
positions jointly, per-channel affine). Gradients are hand-derived and
checked against finite differences.
"""

import math

import numpy as np

from .diffusion import forward_sample


class NonFiniteInputError(ValueError):
    pass


class DegenerateTimestepError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


# ── analytic oracles ─────────────────────────────────────────────────────

def analytic_point_mass(x_t, t, target, sched):
    """The unique eps consistent with the forward process for fixed data.

    eps_hat = (x_t - sqrt(abar_t) * target) / sqrt(1 - abar_t).
    """
    ab = sched.alpha_bar[t]
    if ab >= 1.0:
        raise DegenerateTimestepError("alpha_bar = 1 leaves eps undetermined")
    return (x_t - np.sqrt(ab) * target) / np.sqrt(1.0 - ab)


def analytic_gaussian(x_t, t, mu, s, sched):
    """Minimum-MSE noise estimate for data distributed N(mu, s^2 I).

    E[x0 | x_t] = (sqrt(abar) s^2 x_t + (1 - abar) mu) / (abar s^2 + 1 - abar),
    then eps_hat inverts the forward process around that posterior mean.
    """
    if s < 0:
        raise ValueError("s must be >= 0")
    ab = sched.alpha_bar[t]
    if ab >= 1.0:
        raise DegenerateTimestepError("alpha_bar = 1 leaves eps undetermined")
    denom = ab * s * s + 1.0 - ab
    x0_mean = (np.sqrt(ab) * s * s * x_t + (1.0 - ab) * mu) / denom
    return (x_t - np.sqrt(ab) * x0_mean) / np.sqrt(1.0 - ab)


class Denoiser:
    """Callable base: validates inputs, dispatches to _eval."""

    def __call__(self, x_t, cond, t):
        x_t = np.asarray(x_t, dtype=np.float64)
        cond = np.asarray(cond, dtype=np.float64)
        if not (np.isfinite(x_t).all() and np.isfinite(cond).all()):
            raise NonFiniteInputError("denoiser input contains non-finite values")
        return self._eval(x_t, cond, t)

    def _eval(self, x_t, cond, t):
        raise NotImplementedError


class PointMassDenoiser(Denoiser):
    """Oracle for data concentrated at a single target image; ignores cond."""

    def __init__(self, target, sched):
        self.target = np.asarray(target, dtype=np.float64)
        self.sched = sched

    def _eval(self, x_t, cond, t):
        return analytic_point_mass(x_t, t, self.target, self.sched)


class GaussianDenoiser(Denoiser):
    """Oracle for isotropic Gaussian data N(mu, s^2 I); ignores cond."""

    def __init__(self, mu, s, sched):
        self.mu = mu
        self.s = s
        self.sched = sched

    def _eval(self, x_t, cond, t):
        return analytic_gaussian(x_t, t, self.mu, self.s, self.sched)


# ── tiny trainable UNet ──────────────────────────────────────────────────

EMB_DIM = 32
BASE_CH = 16
LN_EPS = 1e-6


def _layer_specs(base=BASE_CH):
    c1, c2, c4 = base, 2 * base, 4 * base
    specs = [("temb.w0", (EMB_DIM, EMB_DIM)), ("temb.b0", (EMB_DIM,))]
    for name, cin, cout in [
        ("enc0", 8, c1),
        ("down1", c1, c2),
        ("down2", c2, c4),
        ("mid", c4, c4),
        ("up1", c4 + c2, c2),
        ("up2", c2 + c1, c1),
    ]:
        specs += [
            (f"{name}.w", (cout, cin, 3, 3)),
            (f"{name}.b", (cout,)),
            (f"{name}.tw", (cout, EMB_DIM)),
            (f"{name}.tb", (cout,)),
            (f"{name}.g", (cout,)),
            (f"{name}.gb", (cout,)),
        ]
    specs += [("out.w", (4, c1, 3, 3)), ("out.b", (4,))]
    return specs


class TinyNetParams:
    """Flat name -> float64 array parameter store with a fixed layout."""

    def __init__(self, tensors):
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
        for v in self.tensors.values():
            if not np.isfinite(v).all():
                raise ValueError("parameters must be finite")

    @classmethod
    def init(cls, seed=0, base=BASE_CH):
        rng = np.random.Generator(np.random.Philox(seed))
        tensors = {}
        for name, shape in _layer_specs(base):
            if name.endswith(".g"):
                tensors[name] = np.ones(shape)
            elif name.endswith((".b", ".tb", ".gb")):
                tensors[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
                tensors[name] = rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
        # condition channels start inert: they only receive gradient when a
        # non-zero condition is presented, so a never-conditioned training
        # run keeps conditional and unconditional evaluation identical
        tensors["enc0.w"][:, 4:] = 0.0
        return cls(tensors)

    @classmethod
    def zeros(cls, base=BASE_CH):
        return cls({name: np.zeros(shape) for name, shape in _layer_specs(base)})

    def zeros_like(self):
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def n_params(self):
        return sum(v.size for v in self.tensors.values())

    def copy(self):
        return TinyNetParams({k: v.copy() for k, v in self.tensors.items()})


# layer primitives, NCHW float64, each forward returns (y, cache)

def _im2col(x, stride):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho = (h - 1) // stride + 1
    wo = (w - 1) // stride + 1
    cols = np.empty((n, c, 9, ho, wo))
    for i in range(3):
        for j in range(3):
            cols[:, :, 3 * i + j] = xp[:, :, i : i + h, j : j + w][
                :, :, ::stride, ::stride
            ]
    return cols.reshape(n, c * 9, ho * wo), (ho, wo)


def conv3x3_forward(x, w, b, stride=1):
    n, cin, h, wdt = x.shape
    cols, (ho, wo) = _im2col(x, stride)
    wm = w.reshape(w.shape[0], -1)
    y = np.matmul(wm[None], cols) + b[None, :, None]
    return y.reshape(n, w.shape[0], ho, wo), (x.shape, cols, w, stride, ho, wo)


def conv3x3_backward(dy, cache):
    x_shape, cols, w, stride, ho, wo = cache
    n, cin, h, wdt = x_shape
    dyf = dy.reshape(n, w.shape[0], ho * wo)
    dwm = np.matmul(dyf, cols.transpose(0, 2, 1)).sum(axis=0)
    db = dyf.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(w.shape[0], -1).T[None], dyf)
    dcols = dcols.reshape(n, cin, 9, ho, wo)
    dxp = np.zeros((n, cin, h + 2, wdt + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i : i + h : stride, j : j + wdt : stride][:, :, :ho, :wo] += \
                dcols[:, :, 3 * i + j]
    return dxp[:, :, 1:-1, 1:-1], dwm.reshape(w.shape), db


def layernorm_forward(x, g, b):
    mu = x.mean(axis=(1, 2, 3), keepdims=True)
    var = x.var(axis=(1, 2, 3), keepdims=True)
    std = np.sqrt(var + LN_EPS)
    xhat = (x - mu) / std
    y = g[None, :, None, None] * xhat + b[None, :, None, None]
    return y, (xhat, std, g)


def layernorm_backward(dy, cache):
    xhat, std, g = cache
    dg = (dy * xhat).sum(axis=(0, 2, 3))
    db = dy.sum(axis=(0, 2, 3))
    dxhat = dy * g[None, :, None, None]
    m1 = dxhat.mean(axis=(1, 2, 3), keepdims=True)
    m2 = (dxhat * xhat).mean(axis=(1, 2, 3), keepdims=True)
    dx = (dxhat - m1 - xhat * m2) / std
    return dx, dg, db


def silu_forward(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, (x, s)


def silu_backward(dy, cache):
    x, s = cache
    return dy * s * (1.0 + x * (1.0 - s))


def upsample2_forward(x):
    return x.repeat(2, axis=2).repeat(2, axis=3), x.shape


def upsample2_backward(dy, x_shape):
    n, c, h, w = x_shape
    return dy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def timestep_embedding(t):
    """Sinusoidal embedding of an integer timestep array, shape (N, EMB_DIM)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = EMB_DIM // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class TinyNet:
    """Forward / backward passes over a TinyNetParams store."""

    def __init__(self, params):
        self.params = params

    def forward(self, x8, t, want_cache=False):
        """x8: (N, 8, H, W) with H, W divisible by 4; t: (N,) timesteps."""
        p = self.params.tensors
        if x8.ndim != 4 or x8.shape[1] != 8:
            raise ValueError("input must be (N, 8, H, W)")
        if x8.shape[2] % 4 or x8.shape[3] % 4:
            raise ValueError("spatial dims must be divisible by 4")
        cache = {}

        emb0 = timestep_embedding(t)
        z, cache["temb.silu0"] = silu_forward(emb0 @ p["temb.w0"] + p["temb.b0"])
        cache["temb.emb0"] = emb0
        emb = z  # (N, EMB_DIM)
        cache["_emb"] = emb

        def block(name, x, stride=1):
            y, cache[f"{name}.conv"] = conv3x3_forward(
                x, p[f"{name}.w"], p[f"{name}.b"], stride
            )
            tproj = emb @ p[f"{name}.tw"].T + p[f"{name}.tb"]
            y = y + tproj[:, :, None, None]
            y, cache[f"{name}.ln"] = layernorm_forward(y, p[f"{name}.g"], p[f"{name}.gb"])
            y, cache[f"{name}.act"] = silu_forward(y)
            return y

        h0 = block("enc0", x8)
        h1 = block("down1", h0, stride=2)
        h2 = block("down2", h1, stride=2)
        hm = block("mid", h2)
        u1, cache["up1.shape"] = upsample2_forward(hm)
        cache["up1.split"] = u1.shape[1]
        g1 = block("up1", np.concatenate([u1, h1], axis=1))
        u2, cache["up2.shape"] = upsample2_forward(g1)
        cache["up2.split"] = u2.shape[1]
        g2 = block("up2", np.concatenate([u2, h0], axis=1))
        out, cache["out.conv"] = conv3x3_forward(g2, p["out.w"], p["out.b"])
        if want_cache:
            return out, cache
        return out

    def backward(self, dout, cache):
        """Gradients of a scalar loss wrt every parameter, given d(loss)/d(out).

        Returns (grads dict, d(loss)/d(input)).
        """
        p = self.params.tensors
        grads = self.params.zeros_like()
        demb = 0.0

        def block_back(name, dy):
            nonlocal demb
            dy = silu_backward(dy, cache[f"{name}.act"])
            dy, dg, dgb = layernorm_backward(dy, cache[f"{name}.ln"])
            grads[f"{name}.g"] += dg
            grads[f"{name}.gb"] += dgb
            dtproj = dy.sum(axis=(2, 3))  # (N, Cout)
            grads[f"{name}.tw"] += dtproj.T @ cache["_emb"]
            grads[f"{name}.tb"] += dtproj.sum(axis=0)
            demb = demb + dtproj @ p[f"{name}.tw"]
            dx, dw, db = conv3x3_backward(dy, cache[f"{name}.conv"])
            grads[f"{name}.w"] += dw
            grads[f"{name}.b"] += db
            return dx

        dg2, dw, db = conv3x3_backward(dout, cache["out.conv"])
        grads["out.w"] += dw
        grads["out.b"] += db

        dcat2 = block_back("up2", dg2)
        du2, dh0_skip = dcat2[:, : cache["up2.split"]], dcat2[:, cache["up2.split"] :]
        dg1 = upsample2_backward(du2, cache["up2.shape"])
        dcat1 = block_back("up1", dg1)
        du1, dh1_skip = dcat1[:, : cache["up1.split"]], dcat1[:, cache["up1.split"] :]
        dhm = upsample2_backward(du1, cache["up1.shape"])
        dh2 = block_back("mid", dhm)
        dh1 = block_back("down2", dh2) + dh1_skip
        dh0 = block_back("down1", dh1) + dh0_skip
        dx8 = block_back("enc0", dh0)

        dz = demb
        dpre = silu_backward(dz, cache["temb.silu0"])
        grads["temb.w0"] += cache["temb.emb0"].T @ dpre
        grads["temb.b0"] += dpre.sum(axis=0)
        return grads, dx8

    def forward_backward(self, x8, t, target):
        """MSE loss between forward output and target; returns (loss, grads)."""
        out, cache = self.forward(x8, t, want_cache=True)
        diff = out - target
        loss = float(np.mean(diff * diff))
        dout = 2.0 * diff / diff.size
        grads, _ = self.backward(dout, cache)
        return loss, grads


class TinyNetDenoiser(Denoiser):
    """Conditional denoiser backed by the toy UNet; HWC in, HWC out."""

    def __init__(self, params):
        self.net = TinyNet(params)

    def _eval(self, x_t, cond, t):
        x8 = np.concatenate(
            [x_t.transpose(2, 0, 1), cond.transpose(2, 0, 1)]
        )[None]
        out = self.net.forward(x8, np.array([t]))
        return out[0].transpose(1, 2, 0)


# ── training ─────────────────────────────────────────────────────────────

class TrainConfig:
    """Knobs for toy-net training; cosine-annealed Adam with seeded RNG."""

    def __init__(self, lr_init=2e-3, lr_final=1e-5, batch_size=16, steps=2000,
                 cond_dropout=0.1, seed=0):
        if not (0.0 <= cond_dropout <= 1.0):
            raise ValueError("cond_dropout must lie in [0, 1]")
        if lr_init <= 0 or lr_final <= 0:
            raise ValueError("learning rates must be positive")
        self.lr_init = float(lr_init)
        self.lr_final = float(lr_final)
        self.batch_size = int(batch_size)
        self.steps = int(steps)
        self.cond_dropout = float(cond_dropout)
        self.seed = int(seed)


def random_visibility_mask(rng, h, w):
    """Union of 1-3 random axis-aligned rectangles, as a float (H, W) mask."""
    m = np.zeros((h, w))
    for _ in range(int(rng.integers(1, 4))):
        y0, y1 = sorted(rng.integers(0, h + 1, size=2))
        x0, x1 = sorted(rng.integers(0, w + 1, size=2))
        m[y0:y1, x0:x1] = 1.0
    return m


def train(dataset, cfg, sched):
    """Train the toy denoiser on clean normalized frames.

    Per sample: t ~ Uniform{1..T}, eps ~ N(0, I), x_t by the forward
    process; the condition is the clean frame under a random visibility
    mask, replaced by the null condition with probability cfg.cond_dropout.
    Minimizes ||eps_hat - eps||^2. Deterministic given cfg.seed.

    Returns (params, loss_history).
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    frames = [np.asarray(f, dtype=np.float64) for f in dataset]
    h, w = frames[0].shape[:2]
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    params = TinyNetParams.init(seed=cfg.seed)
    net = TinyNet(params)
    m_state = params.zeros_like()
    v_state = params.zeros_like()
    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    history = []

    for step in range(cfg.steps):
        xs, ts, targets = [], [], []
        for _ in range(cfg.batch_size):
            x0 = frames[int(rng.integers(len(frames)))]
            t = int(rng.integers(1, sched.T + 1))
            eps = rng.standard_normal(x0.shape)
            x_t = forward_sample(x0, t, eps, sched)
            mask = random_visibility_mask(rng, h, w)
            cond = x0 * mask[..., None]
            if rng.random() < cfg.cond_dropout:
                cond = np.zeros_like(x0)
            xs.append(np.concatenate(
                [x_t.transpose(2, 0, 1), cond.transpose(2, 0, 1)]
            ))
            ts.append(t)
            targets.append(eps.transpose(2, 0, 1))
        x8 = np.stack(xs)
        target = np.stack(targets)

        loss, grads = net.forward_backward(x8, np.array(ts), target)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at step {step}")
        history.append(loss)

        frac = step / max(cfg.steps - 1, 1)
        lr = cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (
            1.0 + math.cos(math.pi * frac)
        )
        tcorr = step + 1
        for k, g in grads.items():
            m_state[k] = b1 * m_state[k] + (1 - b1) * g
            v_state[k] = b2 * v_state[k] + (1 - b2) * g * g
            mhat = m_state[k] / (1 - b1 ** tcorr)
            vhat = v_state[k] / (1 - b2 ** tcorr)
            params.tensors[k] = params.tensors[k] - lr * mhat / (
                np.sqrt(vhat) + adam_eps
            )

    return params, history


def grad_check(params, x8, t, target, n_checks=120, h=1e-4, seed=0):
    """Max relative error of analytic gradients vs central finite differences.

    Probes n_checks randomly chosen parameter entries of the MSE training
    loss. Everything is double precision.
    """
    net = TinyNet(params)
    _, grads = net.forward_backward(x8, t, target)
    rng = np.random.Generator(np.random.Philox(seed))
    names = sorted(params.tensors)
    worst = 0.0
    for _ in range(n_checks):
        k = names[int(rng.integers(len(names)))]
        arr = params.tensors[k]
        idx = np.unravel_index(int(rng.integers(arr.size)), arr.shape)
        orig = arr[idx]
        arr[idx] = orig + h
        lp = _loss_only(net, x8, t, target)
        arr[idx] = orig - h
        lm = _loss_only(net, x8, t, target)
        arr[idx] = orig
        g_num = (lp - lm) / (2 * h)
        g_ana = grads[k][idx]
        rel = abs(g_ana - g_num) / (abs(g_ana) + abs(g_num) + 1e-8)
        worst = max(worst, rel)
    return worst


def _loss_only(net, x8, t, target):
    out = net.forward(x8, t)
    d = out - target
    return float(np.mean(d * d))


# ── checkpoint format ────────────────────────────────────────────────────

CKPT_MAGIC = b"RGBDNET1"


def save_params(params, path):
    """Write magic, a textual (name shape offset) manifest, then raw
    little-endian float64 payload."""
    names = sorted(params.tensors)
    lines = []
    offset = 0
    for name in names:
        v = params.tensors[name]
        shape = "x".join(str(s) for s in v.shape)
        lines.append(f"{name} {shape} {offset}")
        offset += v.size * 8
    header = "\n".join(lines) + "\nEND\n"
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(header.encode("ascii"))
        for name in names:
            f.write(params.tensors[name].astype("<f8").tobytes())


def load_params(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != CKPT_MAGIC:
        raise ValueError("bad checkpoint magic")
    end = blob.index(b"\nEND\n")
    manifest = blob[8:end].decode("ascii").splitlines()
    payload = blob[end + 5 :]
    tensors = {}
    for line in manifest:
        name, shape_s, off_s = line.split()
        shape = tuple(int(s) for s in shape_s.split("x")) if shape_s else ()
        size = int(np.prod(shape)) if shape else 1
        off = int(off_s)
        raw = payload[off : off + size * 8]
        if len(raw) != size * 8:
            raise ValueError("truncated checkpoint")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return TinyNetParams(tensors)
