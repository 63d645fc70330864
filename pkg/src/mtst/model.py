"""The multi-resolution network: branches -> fuse, stacked over N layers.

Layer ``n`` maps a length ``d_{n-1}`` vector to length ``d_n`` with
``d_0 = L`` and ``d_N = T``. Each branch tokenizes the layer input with its
own patch size, runs a transformer block over the tokens, and the branch
outputs are flattened, concatenated in ascending patch-size order and mapped
linearly to ``d_n``. Variates are processed independently with one shared
parameter set.
"""
from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import AttnWeights, transformer_block
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .posenc import absolute_pe, build_rel_table, rpe_bias
from .tokenizer import PE_KINDS, BranchConfig, num_patches, patchify

REVIN_EPS = 1e-5


@dataclass(frozen=True)
class LayerConfig:
    branches: tuple
    d_out: int | None = None

    def __post_init__(self):
        branches = tuple(
            b if isinstance(b, BranchConfig) else BranchConfig(**b) for b in self.branches
        )
        if not branches:
            raise ConfigError("every layer needs at least one branch")
        object.__setattr__(self, "branches", tuple(sorted(branches, key=lambda b: (b.patch, b.stride))))


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int
    pred_len: int
    layers: tuple
    ffn_hidden: int = 256
    ffn_dropout: float = 0.0
    fuse_dropout: float = 0.0
    pe: str = "rpe"
    revin: bool = True
    revin_affine: bool = False
    share_wpos: bool = False
    literal_sqrt_d: bool = False

    def __post_init__(self):
        layers = tuple(l if isinstance(l, LayerConfig) else LayerConfig(**l) for l in self.layers)
        if not layers:
            raise ConfigError("a model needs at least one layer")
        if self.seq_len < 1 or self.pred_len < 1:
            raise ConfigError(f"look-back and horizon must be positive, got L={self.seq_len} T={self.pred_len}")
        if self.pe not in PE_KINDS:
            raise ConfigError(f"unknown positional encoding {self.pe!r}; choose from {PE_KINDS}")
        for rate, what in ((self.ffn_dropout, "ffn_dropout"), (self.fuse_dropout, "fuse_dropout")):
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{what} must lie in [0, 1), got {rate}")
        if self.ffn_hidden < 1:
            raise ConfigError(f"ffn_hidden must be positive, got {self.ffn_hidden}")
        resolved = []
        for n, layer in enumerate(layers):
            last = n == len(layers) - 1
            d_out = layer.d_out
            if last:
                if d_out not in (None, self.pred_len):
                    raise ConfigError(f"final layer width must equal the horizon {self.pred_len}, got {d_out}")
                d_out = self.pred_len
            elif d_out is None:
                d_out = self.seq_len
            resolved.append(dataclasses.replace(layer, d_out=d_out))
        object.__setattr__(self, "layers", tuple(resolved))
        for n, (d_in, _) in enumerate(self.layer_dims()):
            for b, br in enumerate(self.layers[n].branches):
                num_patches(d_in, br.patch, br.stride, where=f" (layer {n}, branch {b})")

    def layer_dims(self):
        dims = [self.seq_len] + [l.d_out for l in self.layers]
        return list(zip(dims[:-1], dims[1:]))

    def n_tokens(self, n, b):
        br = self.layers[n].branches[b]
        return num_patches(self.layer_dims()[n][0], br.patch, br.stride)

    def fuse_width(self, n):
        return sum(self.n_tokens(n, b) * br.patch for b, br in enumerate(self.layers[n].branches))

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["layers"] = tuple(
            LayerConfig(tuple(BranchConfig(**b) for b in l["branches"]), l.get("d_out"))
            for l in d["layers"]
        )
        return cls(**d)


@dataclass
class BranchWeights:
    cfg: BranchConfig
    n_tokens: int
    attn: AttnWeights
    w_pos: Tensor | None = None
    ape: Tensor | None = None


@dataclass
class FuseWeights:
    weight: Tensor  # (d_n, sum_b J_b * P_b)
    bias: Tensor    # (d_n,)

    def __post_init__(self):
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"fuse bias {self.bias.shape} does not match weight {self.weight.shape}")


class ParamStore:
    """Learnable tensors in declaration order, plus batch-norm running stats."""

    def __init__(self):
        self.tensors = {}
        self.bn_states = {}

    def add(self, name, data):
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(data, requires_grad=True, name=name)
        self.tensors[name] = t
        return t

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def __getitem__(self, name):
        return self.tensors[name]

    def __len__(self):
        return len(self.tensors)

    def count(self):
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def buffers(self):
        out = {}
        for name, st in self.bn_states.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    def state_dict(self):
        state = {k: t.data.copy() for k, t in self.tensors.items()}
        state.update({k: v.copy() for k, v in self.buffers().items()})
        return state

    def load_state_dict(self, state):
        for k, t in self.tensors.items():
            if state[k].shape != t.shape:
                raise ShapeError(f"{k}: stored shape {state[k].shape} != model shape {t.shape}")
            t.data[...] = state[k]
        for name, st in self.bn_states.items():
            st.running_mean = np.array(state[f"{name}.running_mean"], dtype=np.float64)
            st.running_var = np.array(state[f"{name}.running_var"], dtype=np.float64)


def _param_rng(seed, name):
    # keyed by name so shared parameters match across ablation variants
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def _uniform(seed, name, shape, bound):
    return _param_rng(seed, name).uniform(-bound, bound, size=shape)


@dataclass
class RevinState:
    mean: np.ndarray
    std: np.ndarray
    eps: float = REVIN_EPS


def revin_stats(x, eps=REVIN_EPS):
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    std = np.maximum(x.std(axis=-1, keepdims=True), eps)
    return RevinState(mean, std, eps)


def revin_normalize(x, eps=REVIN_EPS):
    """Standardize each look-back window by its own mean and population std."""
    state = revin_stats(x, eps)
    return (np.asarray(x, dtype=np.float64) - state.mean) / state.std, state


def revin_denormalize(y, state):
    return np.asarray(y, dtype=np.float64) * state.std + state.mean


class MTST:
    """Multi-resolution patch transformer with one shared univariate parameter set."""

    def __init__(self, config, seed=0):
        self.config = config
        self.seed = int(seed)
        self.params = ParamStore()
        self.layers = []
        self.revin_gamma = self.revin_beta = None
        self._build()

    def _build(self):
        cfg, seed, ps = self.config, self.seed, self.params
        if cfg.revin and cfg.revin_affine:
            self.revin_gamma = ps.add("revin.gamma", np.ones(1))
            self.revin_beta = ps.add("revin.beta", np.zeros(1))
        for n, layer in enumerate(cfg.layers):
            branches = []
            for b, br in enumerate(layer.branches):
                pre = f"layer{n}.branch{b}"
                d, f, h = br.patch, cfg.ffn_hidden, br.effective_heads()
                j = cfg.n_tokens(n, b)

                def lin(name, shape, fan_in):
                    return ps.add(f"{pre}.{name}", _uniform(seed, f"{pre}.{name}", shape, 1.0 / np.sqrt(fan_in)))

                attn = AttnWeights(
                    heads=h,
                    wq=lin("wq", (d, d), d),
                    wk=lin("wk", (d, d), d),
                    wv=lin("wv", (d, d), d),
                    wo=lin("wo", (d, d), d),
                    ffn_w1=lin("ffn_w1", (f, d), d),
                    ffn_b1=ps.add(f"{pre}.ffn_b1", np.zeros(f)),
                    ffn_w2=lin("ffn_w2", (d, f), f),
                    ffn_b2=ps.add(f"{pre}.ffn_b2", np.zeros(d)),
                    bn1_gamma=ps.add(f"{pre}.bn1.gamma", np.ones(d)),
                    bn1_beta=ps.add(f"{pre}.bn1.beta", np.zeros(d)),
                    bn2_gamma=ps.add(f"{pre}.bn2.gamma", np.ones(d)),
                    bn2_beta=ps.add(f"{pre}.bn2.beta", np.zeros(d)),
                )
                ps.bn_states[f"{pre}.bn1"] = attn.bn1
                ps.bn_states[f"{pre}.bn2"] = attn.bn2
                bw = BranchWeights(br, j, attn)
                if cfg.pe == "rpe":
                    rows = 1 if cfg.share_wpos else h
                    bw.w_pos = ps.add(f"{pre}.w_pos", _uniform(seed, f"{pre}.w_pos", (rows, br.pos_dim()), 0.02))
                elif cfg.pe == "learnedape":
                    bw.ape = ps.add(f"{pre}.ape", np.zeros((j, d)))
                branches.append(bw)
            width = cfg.fuse_width(n)
            assert width == sum(bw.n_tokens * bw.cfg.patch for bw in branches)
            fw = FuseWeights(
                weight=ps.add(f"layer{n}.fuse.weight", _uniform(seed, f"layer{n}.fuse.weight", (layer.d_out, width), 1.0 / np.sqrt(width))),
                bias=ps.add(f"layer{n}.fuse.bias", np.zeros(layer.d_out)),
            )
            self.layers.append((branches, fw))

    def param_count(self):
        return self.params.count()

    def branch_bias(self, bw):
        if self.config.pe != "rpe":
            return None
        table = build_rel_table(bw.n_tokens, bw.cfg.pos_dim())
        w = bw.w_pos
        if self.config.share_wpos:
            w = ad.matmul(Tensor(np.ones((bw.attn.heads, 1))), w)
        return rpe_bias(table, w, bw.n_tokens)

    def forward(self, x, training=False, rng=None):
        """(B, L) look-back windows -> Tensor (B, T)."""
        x = ad.as_tensor(x)
        if x.ndim == 1:
            x = ad.reshape(x, (1, -1))
        if x.shape[-1] != self.config.seq_len:
            raise ShapeError(f"input length {x.shape[-1]} != look-back {self.config.seq_len}")
        cfg = self.config
        y, state = x, None
        if cfg.revin:
            state = revin_stats(x.data)
            y = ad.mul(ad.sub(y, Tensor(state.mean)), Tensor(1.0 / state.std))
            if cfg.revin_affine:
                y = ad.add(ad.mul(y, self.revin_gamma), self.revin_beta)
        for n, (branches, fw) in enumerate(self.layers):
            outs = [branch_forward(y, bw, self, training, rng, where=f" (layer {n}, branch {b})")
                    for b, bw in enumerate(branches)]
            y = fuse(outs, fw, cfg.fuse_dropout, training, rng)
        if cfg.revin:
            if cfg.revin_affine:
                y = ad.mul(ad.sub(y, self.revin_beta), ad.reciprocal(ad.add(self.revin_gamma, REVIN_EPS ** 2)))
            y = ad.add(ad.mul(y, Tensor(state.std)), Tensor(state.mean))
        return y

    def predict(self, x, batch_size=4096):
        """Eval-mode forecast of (B, L) or (L,) windows as a numpy array."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = x.reshape(-1, self.config.seq_len)
        out = []
        with ad.no_grad():
            for i in range(0, x2.shape[0], batch_size):
                out.append(self.forward(x2[i: i + batch_size], training=False).data)
        y = np.concatenate(out, axis=0) if out else np.empty((0, self.config.pred_len))
        return y[0] if single else y

    def forward_multivariate(self, x, training=False, rng=None):
        """Channel-independent forward: (L, M) or (K, L, M) -> Tensor (T, M) / (K, T, M)."""
        x = ad.as_tensor(x)
        single = x.ndim == 2
        if single:
            x = ad.reshape(x, (1,) + x.shape)
        k, length, m = x.shape
        flat = ad.reshape(ad.transpose(x, (0, 2, 1)), (k * m, length))
        y = self.forward(flat, training, rng)
        y = ad.transpose(ad.reshape(y, (k, m, self.config.pred_len)), (0, 2, 1))
        return ad.reshape(y, y.shape[1:]) if single else y

    def predict_multivariate(self, x):
        with ad.no_grad():
            return self.forward_multivariate(x, training=False).data


def branch_forward(y, bw, model, training=False, rng=None, where=""):
    """Tokenize -> (absolute PE) -> transformer block; returns (B, J, P)."""
    cfg = model.config
    tokens = patchify(y, bw.cfg, where)
    if tokens.shape[-2] != bw.n_tokens:
        raise ShapeError(f"branch expected {bw.n_tokens} tokens, got {tokens.shape[-2]}{where}")
    if cfg.pe in ("sinape", "learnedape"):
        tokens = ad.add(tokens, absolute_pe(cfg.pe, bw.n_tokens, bw.cfg.patch, bw.ape))
    return transformer_block(
        tokens, bw.attn, training,
        bias=model.branch_bias(bw),
        dropout=cfg.ffn_dropout, rng=rng,
        literal_sqrt_d=cfg.literal_sqrt_d,
    )


def fuse(outputs, fw, dropout=0.0, training=False, rng=None):
    """Flatten each (B, J_b, P_b) row-major, concatenate, dropout, then W z + b."""
    flats = [ad.reshape(o, (o.shape[0], -1)) for o in outputs]
    width = sum(f.shape[1] for f in flats)
    if width != fw.weight.shape[1]:
        offset, sizes = 0, []
        for b, f in enumerate(flats):
            sizes.append(f"branch {b}: {f.shape[1]} at offset {offset}")
            offset += f.shape[1]
        raise ShapeError(f"fuse expects width {fw.weight.shape[1]}, got {width} ({'; '.join(sizes)})")
    z = ad.concat(flats, axis=-1) if len(flats) > 1 else flats[0]
    z = ad.dropout(z, dropout, rng, training)
    return ad.add(ad.matmul(z, ad.swap_last(fw.weight)), fw.bias)


def param_count(config):
    """Closed-form learnable-parameter count of ``config``."""
    total = 2 if config.revin and config.revin_affine else 0
    f = config.ffn_hidden
    for n, layer in enumerate(config.layers):
        for b, br in enumerate(layer.branches):
            d = br.patch
            total += 4 * d * d           # W_Q, W_K, W_V, output projection
            total += d * f + f + f * d + d  # FFN
            total += 4 * d               # two BN affine pairs
            if config.pe == "rpe":
                total += (1 if config.share_wpos else br.effective_heads()) * br.pos_dim()
            elif config.pe == "learnedape":
                total += config.n_tokens(n, b) * d
        total += layer.d_out * config.fuse_width(n) + layer.d_out
    return total


ABLATIONS = ("drop-lowest-res", "drop-highest-res", "pe-variant")


def ablate(config, which, pe=None):
    """Derive an ablation variant of ``config``.

    ``drop-lowest-res`` removes the largest-patch branch of every layer,
    ``drop-highest-res`` the smallest-patch one; ``pe-variant`` swaps the
    positional encoding to ``pe``. Fuse widths follow from the new config.
    """
    if which == "pe-variant":
        if pe not in PE_KINDS:
            raise ConfigError(f"pe-variant needs pe in {PE_KINDS}, got {pe!r}")
        return dataclasses.replace(config, pe=pe)
    if which not in ABLATIONS:
        raise ConfigError(f"unknown ablation {which!r}; choose from {ABLATIONS}")
    layers = []
    for n, layer in enumerate(config.layers):
        if len(layer.branches) < 2:
            raise ConfigError(f"cannot {which}: layer {n} has a single branch")
        kept = layer.branches[:-1] if which == "drop-lowest-res" else layer.branches[1:]
        layers.append(dataclasses.replace(layer, branches=kept))
    return dataclasses.replace(config, layers=tuple(layers))


__all__ = [
    "ABLATIONS", "BranchWeights", "FuseWeights", "LayerConfig", "MTST", "ModelConfig",
    "ParamStore", "RevinState", "ablate", "branch_forward", "fuse", "param_count",
    "revin_denormalize", "revin_normalize", "revin_stats",
]
