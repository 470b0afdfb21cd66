"""Frozen ResNet-18 with six feature tap points.

The taps are the stem output (what the first residual stage consumes), the
four residual stage outputs, and the pooled vector the classifier head
consumes.  Pretrained weights are used when they can be fetched; otherwise
the backbone is initialized under a fixed seed and the weights are cached
on disk so every later load sees identical parameters.
"""

import os

import torch
from torchvision.models import resnet18

TAP_NAMES = ["stem", "stage1", "stage2", "stage3", "stage4", "pooled"]


def load_backbone(weights_cache=None, num_classes=1000, seed=0):
    """(model, origin): an eval-mode frozen resnet18 and where its weights came from."""
    if num_classes == 1000:
        try:
            from torchvision.models import ResNet18_Weights
            model = ResNet18_Weights.IMAGENET1K_V1
            model = resnet18(weights=model)
            return _freeze(model), "pretrained"
        except Exception:
            pass  # no download path here; fall back to seeded weights
    torch.manual_seed(seed)
    model = resnet18(num_classes=num_classes)
    origin = f"seeded(seed={seed})"
    if weights_cache is not None:
        os.makedirs(weights_cache, exist_ok=True)
        cache = os.path.join(weights_cache, f"resnet18_seed{seed}_c{num_classes}.pt")
        if os.path.exists(cache):
            model.load_state_dict(torch.load(cache, map_location="cpu",
                                             weights_only=True))
            origin = f"cached({os.path.basename(cache)})"
        else:
            torch.save(model.state_dict(), cache)
    return _freeze(model), origin


def _freeze(model):
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


@torch.inference_mode()
def tap_features(model, batch):
    """Six pooled feature matrices plus head logits for one NCHW float batch.

    Spatial maps are reduced by global average pooling; "pooled" is the
    model's own pre-head vector (for ResNets this coincides with the global
    average of the stage-4 map).
    """
    x = model.conv1(batch)
    x = model.bn1(x)
    x = model.relu(x)
    x = model.maxpool(x)
    maps = [x]
    x = model.layer1(x)
    maps.append(x)
    x = model.layer2(x)
    maps.append(x)
    x = model.layer3(x)
    maps.append(x)
    x = model.layer4(x)
    maps.append(x)
    pooled = torch.flatten(model.avgpool(x), 1)
    logits = model.fc(pooled)
    feats = [m.mean(dim=(2, 3)) for m in maps] + [pooled]
    return feats, logits
