"""Frozen backbones producing the toolkit's embedding spaces.

simclr/swav: ResNet-50, embedding = output of the final global average pool
(2048-d). dino: ViT with the class tokens of the last four (normalized)
blocks concatenated (4 x 384 = 1536-d for ViT-Small). Checkpoints are
loaded from explicit local paths; published state-dict naming is accepted,
including common wrapper prefixes.
"""

import math

import torch
import torch.nn as nn
from torchvision.models import resnet50


class CheckpointError(Exception):
    pass


STRIP_PREFIXES = ("module.", "backbone.", "encoder.", "model.", "teacher.", "student.")


def _clean_state_dict(raw):
    if isinstance(raw, dict):
        for key in ("state_dict", "model", "teacher", "model_state_dict"):
            if key in raw and isinstance(raw[key], dict):
                raw = raw[key]
                break
    cleaned = {}
    for key, value in raw.items():
        for prefix in STRIP_PREFIXES:
            if key.startswith(prefix):
                key = key[len(prefix) :]
                break
        cleaned[key] = value
    return cleaned


def _load_into(model, checkpoint_path, device, ignorable=("fc.", "head.")):
    try:
        raw = torch.load(checkpoint_path, map_location=device, weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot load {checkpoint_path}: {exc}") from exc
    state = _clean_state_dict(raw)
    state = {k: v for k, v in state.items() if not k.startswith(ignorable)}
    missing, unexpected = model.load_state_dict(state, strict=False)
    real_missing = [k for k in missing if not k.startswith(ignorable)]
    if real_missing:
        raise CheckpointError(
            f"{checkpoint_path} is missing {len(real_missing)} backbone tensors, "
            f"e.g. {real_missing[:3]}"
        )
    return unexpected


class ResNetEmbedder(nn.Module):
    """ResNet-50 trunk; embed() returns the 2048-d pooled features."""

    output_dim = 2048

    def __init__(self, checkpoint_path, device="cpu"):
        super().__init__()
        trunk = resnet50(weights=None)
        trunk.fc = nn.Identity()
        _load_into(trunk, checkpoint_path, device)
        self.trunk = trunk.to(device).eval()

    @torch.no_grad()
    def embed(self, batch):
        return self.trunk(batch)


class _Attention(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, c = x.shape
        qkv = (
            self.qkv(x)
            .reshape(b, n, 3, self.num_heads, c // self.num_heads)
            .permute(2, 0, 3, 1, 4)
        )
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        x = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(x)


class _Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class _Block(nn.Module):
    def __init__(self, dim, num_heads, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = _Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = _Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class _PatchEmbed(nn.Module):
    def __init__(self, patch_size, embed_dim):
        super().__init__()
        self.proj = nn.Conv2d(3, embed_dim, kernel_size=patch_size, stride=patch_size)

    def forward(self, x):
        return self.proj(x).flatten(2).transpose(1, 2)


class VitEmbedder(nn.Module):
    """DINO-style ViT; embed() concatenates the class token of the last
    `last_blocks` blocks, each taken after the final layernorm."""

    def __init__(
        self,
        checkpoint_path,
        device="cpu",
        patch_size=8,
        embed_dim=384,
        depth=12,
        num_heads=6,
        last_blocks=4,
        image_size=224,
    ):
        super().__init__()
        if image_size % patch_size:
            raise CheckpointError(f"image size {image_size} not divisible by patch {patch_size}")
        self.last_blocks = last_blocks
        self.output_dim = embed_dim * last_blocks
        num_patches = (image_size // patch_size) ** 2

        self.patch_embed = _PatchEmbed(patch_size, embed_dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, embed_dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, num_patches + 1, embed_dim))
        self.blocks = nn.ModuleList(_Block(embed_dim, num_heads) for _ in range(depth))
        self.norm = nn.LayerNorm(embed_dim, eps=1e-6)

        _load_into(self, checkpoint_path, device)
        self.to(device).eval()

    @torch.no_grad()
    def embed(self, batch):
        x = self.patch_embed(batch)
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        collected = []
        depth = len(self.blocks)
        for index, block in enumerate(self.blocks):
            x = block(x)
            if depth - index <= self.last_blocks:
                collected.append(self.norm(x)[:, 0])
        return torch.cat(collected, dim=-1)


def build_embedder(model_id, checkpoint_path, device="cpu", vit_options=None):
    if model_id in ("simclr", "swav"):
        return ResNetEmbedder(checkpoint_path, device=device)
    if model_id == "dino":
        return VitEmbedder(checkpoint_path, device=device, **(vit_options or {}))
    raise CheckpointError(f"unknown model id {model_id!r}")


EXPECTED_DIMS = {"simclr": 2048, "swav": 2048, "dino": 1536}
