"""Spatial-spectral transformer block and its attention kernels.

Feature maps are ``(batch, channels, height, width)`` tensors throughout.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

EPS_MIN = 1e-4


class LayerNorm2d(nn.Module):
    """LayerNorm over the channel axis of a (B, C, H, W) map."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(1, keepdim=True)
        var = x.var(1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


def _check_divisible(x, p: int):
    h, w = x.shape[-2:]
    if h % p or w % p:
        raise ValueError(f"feature extent {h}x{w} not divisible by window {p}; pad before attention")


def window_partition(x, p: int):
    """(B, C, H, W) -> (B * nW, p * p, C), windows in row-major order."""
    b, c, h, w = x.shape
    x = x.view(b, c, h // p, p, w // p, p)
    return x.permute(0, 2, 4, 3, 5, 1).reshape(-1, p * p, c)


def window_reverse(windows, p: int, b: int, h: int, w: int):
    c = windows.shape[-1]
    x = windows.view(b, h // p, w // p, p, p, c)
    return x.permute(0, 5, 1, 3, 2, 4).reshape(b, c, h, w)


def pooled_spectra(x, p: int):
    """Mean spectrum of every non-overlapping p x p patch: (B, C, H, W) -> (B, J, C)."""
    _check_divisible(x, p)
    return F.avg_pool2d(x, p).flatten(2).transpose(1, 2)


class WindowAttention(nn.Module):
    """Multi-head self-attention inside non-overlapping windows, optionally shifted.

    A shifted layer rolls the map by ``-shift`` before partitioning and masks
    token pairs that were not neighbours before the roll, so every token only
    attends within its window of the shifted grid.
    """

    def __init__(self, dim: int, heads: int, window: int, shift: int = 0):
        super().__init__()
        if dim % heads:
            raise ValueError(f"channels {dim} not divisible by heads {heads}")
        self.dim, self.heads, self.window, self.shift = dim, heads, window, shift
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.last_attn = None
        self.keep_attn = False

    def _mask(self, h: int, w: int, s: int, device, dtype):
        p = self.window
        ys = torch.div(torch.arange(h, device=device) - s, p, rounding_mode="floor")
        xs = torch.div(torch.arange(w, device=device) - s, p, rounding_mode="floor")
        group = (ys[:, None] * (w + 1) + xs[None, :]).to(dtype)[None, None]
        group = torch.roll(group, (-s, -s), dims=(2, 3))
        g = window_partition(group, p).squeeze(-1)  # (nW, p*p)
        same = g[:, :, None] == g[:, None, :]
        return torch.zeros(same.shape, device=device, dtype=dtype).masked_fill(~same, float("-inf"))

    def forward(self, x):
        _check_divisible(x, self.window)
        b, c, h, w = x.shape
        p = self.window
        s = self.shift if min(h, w) > p else 0
        if s:
            x = torch.roll(x, (-s, -s), dims=(2, 3))
        t = window_partition(x, p)
        n = t.shape[1]
        qkv = self.qkv(t).view(-1, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q * self.scale) @ k.transpose(-2, -1)
        if s:
            mask = self._mask(h, w, s, x.device, x.dtype)
            nw = mask.shape[0]
            attn = (attn.view(b, nw, self.heads, n, n) + mask[None, :, None]).view(-1, self.heads, n, n)
        attn = attn.softmax(-1)
        if self.keep_attn:
            self.last_attn = attn.detach()
        out = (attn @ v).transpose(1, 2).reshape(-1, n, c)
        out = window_reverse(self.proj(out), p, b, h, w)
        if s:
            out = torch.roll(out, (s, s), dims=(2, 3))
        return out


class GlobalSpectralAttention(nn.Module):
    """Channel-to-channel (transposed) attention over the whole map."""

    def __init__(self, dim: int, heads: int, epsilon_init: float = 1.0):
        super().__init__()
        if dim % heads:
            raise ValueError(f"channels {dim} not divisible by heads {heads}")
        self.heads = heads
        self.qkv = nn.Conv2d(dim, 3 * dim, 1)
        self.qkv_dw = nn.Conv2d(3 * dim, 3 * dim, 3, padding=1, groups=3 * dim)
        self.proj = nn.Conv2d(dim, dim, 1)
        self.epsilon = nn.Parameter(torch.full((heads, 1, 1), float(epsilon_init)))
        self.last_attn = None
        self.keep_attn = False

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv_dw(self.qkv(x)).chunk(3, dim=1)
        q, k, v = (t.reshape(b, self.heads, c // self.heads, h * w) for t in (q, k, v))
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
        attn = (q @ k.transpose(-2, -1) / self.epsilon.clamp(min=EPS_MIN)).softmax(-1)
        if self.keep_attn:
            self.last_attn = attn.detach()
        out = (attn @ v).reshape(b, c, h, w)
        return self.proj(out)


class LocalSpectralAttention(nn.Module):
    """Prompt-guided spectral attention on pooled patch spectra.

    Each window's mean spectrum picks a convex combination of the spectral
    prompt rows (the query) and is attended against its own low-dimensional
    projection; the result becomes a sigmoid gate on that window's channels.
    With ``outer=True`` the attention map is the full D x D outer-product form.
    """

    def __init__(self, dim: int, window: int, prompt_len: int, prompt_dim: int,
                 epsilon_init: float = 1.0, use_prompt: bool = True, outer: bool = False):
        super().__init__()
        self.window, self.use_prompt, self.outer = window, use_prompt, outer
        self.w1 = nn.Linear(dim, prompt_len, bias=False) if use_prompt else None
        self.w2 = nn.Linear(dim, prompt_dim, bias=False)
        self.w3 = nn.Linear(prompt_dim, prompt_dim, bias=False)
        self.proj = nn.Linear(prompt_dim, dim)
        self.epsilon = nn.Parameter(torch.tensor(float(epsilon_init)))
        self.last_alpha = None
        self.keep_alpha = False

    def prompt_weights(self, pooled):
        """Softmax mixing weights over the prompt rows, (B, J, L)."""
        return self.w1(pooled).softmax(-1)

    def forward(self, x, prompt=None):
        b, c, h, w = x.shape
        p = self.window
        ms = pooled_spectra(x, p)
        kv = self.w3(self.w2(ms))
        if self.use_prompt:
            if prompt is None:
                raise ValueError("prompt-guided local attention needs the spectral prompt")
            alpha = self.prompt_weights(ms)
            if self.keep_alpha:
                self.last_alpha = alpha.detach().view(b, h // p, w // p, -1)
            q = self.w3(alpha @ prompt)
        else:
            q = kv
        eps = self.epsilon.clamp(min=EPS_MIN)
        if self.outer:
            a = (q.unsqueeze(-1) * kv.unsqueeze(-2) / eps).softmax(-1)
            o = (a @ kv.unsqueeze(-1)).squeeze(-1)
        else:
            o = (q * kv / eps).softmax(-1) * kv
        gate = torch.sigmoid(self.proj(o))  # (B, J, C)
        gate = gate.transpose(1, 2).reshape(b, c, h // p, w // p)
        gate = gate.repeat_interleave(p, dim=2).repeat_interleave(p, dim=3)
        return x * gate


class GMLP(nn.Module):
    """Gated pointwise MLP: expand to 2*r*C, gate one half by gelu of the other."""

    def __init__(self, dim: int, expansion: float = 2.0):
        super().__init__()
        if expansion < 1:
            raise ValueError("gmlp expansion must be >= 1")
        hidden = int(round(dim * expansion))
        self.fc1 = nn.Conv2d(dim, 2 * hidden, 1)
        self.fc2 = nn.Conv2d(hidden, dim, 1)

    def forward(self, x):
        u, v = self.fc1(x).chunk(2, dim=1)
        return self.fc2(u * F.gelu(v))


class PGSSA(nn.Module):
    """Dual-branch spectral attention: fuse global and local branches, refine with a GMLP."""

    def __init__(self, dim: int, heads: int, window: int, prompt_len: int, prompt_dim: int,
                 expansion: float = 2.0, epsilon_init: float = 1.0, use_global: bool = True,
                 use_local: bool = True, use_prompt: bool = True, outer: bool = False):
        super().__init__()
        if not (use_global or use_local):
            raise ValueError("PGSSA needs at least one branch")
        self.glob = GlobalSpectralAttention(dim, heads, epsilon_init) if use_global else None
        self.local = (LocalSpectralAttention(dim, window, prompt_len, prompt_dim, epsilon_init, use_prompt, outer)
                      if use_local else None)
        self.fuse = nn.Conv2d(dim * (int(use_global) + int(use_local)), dim, 1)
        self.gmlp = GMLP(dim, expansion)

    def forward(self, x, prompt=None):
        outs = []
        if self.glob is not None:
            outs.append(self.glob(x))
        if self.local is not None:
            outs.append(self.local(x, prompt))
        return self.gmlp(self.fuse(torch.cat(outs, dim=1)))


class PGSSTB(nn.Module):
    """x + SSA(LN x), then + PGSSA(LN x), then + GMLP(LN x)."""

    def __init__(self, dim: int, heads: int, window: int, shift: int = 0, prompt_len: int = 16,
                 prompt_dim: int = 64, expansion: float = 2.0, epsilon_init: float = 1.0,
                 use_global: bool = True, use_local: bool = True, use_prompt: bool = True,
                 outer: bool = False):
        super().__init__()
        self.norm1 = LayerNorm2d(dim)
        self.ssa = WindowAttention(dim, heads, window, shift)
        if use_global or use_local:
            self.norm2 = LayerNorm2d(dim)
            self.pgssa = PGSSA(dim, heads, window, prompt_len, prompt_dim, expansion, epsilon_init,
                               use_global, use_local, use_prompt, outer)
        else:
            self.norm2 = self.pgssa = None
        self.norm3 = LayerNorm2d(dim)
        self.gmlp = GMLP(dim, expansion)

    def forward(self, x, prompt=None):
        x = x + self.ssa(self.norm1(x))
        if self.pgssa is not None:
            x = x + self.pgssa(self.norm2(x), prompt)
        return x + self.gmlp(self.norm3(x))
