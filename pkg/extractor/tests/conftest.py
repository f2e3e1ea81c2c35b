import numpy as np
import pytest
import torch
import torch.nn as nn
from PIL import Image
from torchvision.models import resnet50

from dvme_extractor.backbones import _Block, _PatchEmbed

# Small ViT for tests: same 1536-d output as ViT-S/8 with 4 collected blocks,
# but 50 tokens instead of 785.
VIT_TEST_OPTIONS = {"patch_size": 32, "depth": 4, "last_blocks": 4}


@pytest.fixture(scope="session")
def resnet_checkpoint(tmp_path_factory):
    torch.manual_seed(0)
    path = tmp_path_factory.mktemp("ckpt") / "resnet50.pth"
    model = resnet50(weights=None)
    torch.save(model.state_dict(), path)
    return str(path)


@pytest.fixture(scope="session")
def vit_checkpoint(tmp_path_factory):
    torch.manual_seed(1)
    module = nn.Module()
    module.patch_embed = _PatchEmbed(VIT_TEST_OPTIONS["patch_size"], 384)
    module.cls_token = nn.Parameter(torch.randn(1, 1, 384) * 0.02)
    tokens = (224 // VIT_TEST_OPTIONS["patch_size"]) ** 2 + 1
    module.pos_embed = nn.Parameter(torch.randn(1, tokens, 384) * 0.02)
    module.blocks = nn.ModuleList(
        _Block(384, 6) for _ in range(VIT_TEST_OPTIONS["depth"])
    )
    module.norm = nn.LayerNorm(384, eps=1e-6)
    path = tmp_path_factory.mktemp("ckpt") / "vit.pth"
    # Wrapper prefix exercises the published-checkpoint key cleanup.
    torch.save({"state_dict": {f"module.{k}": v for k, v in module.state_dict().items()}}, path)
    return str(path)


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    rng = np.random.default_rng(7)
    directory = tmp_path_factory.mktemp("images")
    sizes = [(96, 96), (300, 280), (256, 256)]
    for index, size in enumerate(sizes):
        pixels = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
        Image.fromarray(pixels).save(directory / f"img{index}.png")
    return directory


@pytest.fixture(scope="session")
def manifest(image_dir, tmp_path_factory):
    directory = tmp_path_factory.mktemp("manifest")
    path = directory / "manifest.csv"
    path.write_text(
        "img0.png,0,10\n"
        "img1.png,1,11\n"
        "img2.png,1,11\n"
    )
    # Manifest-relative image paths: copy next to it.
    for name in ("img0.png", "img1.png", "img2.png"):
        (directory / name).write_bytes((image_dir / name).read_bytes())
    return str(path)
