"""VGG16 with a frozen backbone and a 2-unit softmax head.

Convolutional blocks 1-4 (the first 15 layers in flat conv/pool indexing)
stay frozen; block-5 convolutions and both 4096-unit dense layers train,
and the original 1000-way prediction layer is replaced by a 2-unit head.
The parameter split this produces is asserted exactly at build time, so a
wrong freeze boundary cannot slip through.
"""

from __future__ import annotations

import torch
import torchvision

EXPECTED_TRAINABLE = 126_633_474
EXPECTED_FROZEN = 7_635_264

# vgg16.features[:24] covers conv blocks 1-4 including their pools
FREEZE_BOUNDARY = 24

# VGG-style RGB pixel means, recorded in the export manifest
PIXEL_MEANS = (123.68, 116.779, 103.939)

NUM_CLASSES = 2  # class order: background, roi


class ModelBuildError(RuntimeError):
    pass


class PretrainedWeightsUnavailable(RuntimeError):
    pass


def parameter_counts(model: torch.nn.Module) -> tuple[int, int]:
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    frozen = sum(p.numel() for p in model.parameters() if not p.requires_grad)
    return trainable, frozen


def build_model(pretrained: bool = True) -> tuple[torch.nn.Module, tuple[int, int]]:
    """Construct the classifier; returns (model, (trainable, frozen)).

    pretrained=True loads ImageNet backbone weights (requires the weight
    file to be downloadable or cached); pretrained=False initializes
    randomly with the identical architecture and parameter split.
    """
    if pretrained:
        try:
            net = torchvision.models.vgg16(
                weights=torchvision.models.VGG16_Weights.IMAGENET1K_V1
            )
        except Exception as exc:
            raise PretrainedWeightsUnavailable(
                "ImageNet weights for VGG16 could not be loaded (no network or cache); "
                "pass pretrained=False / --no-pretrained to train from random init"
            ) from exc
    else:
        net = torchvision.models.vgg16(weights=None)

    net.classifier[6] = torch.nn.Linear(4096, NUM_CLASSES)
    for param in net.features[:FREEZE_BOUNDARY].parameters():
        param.requires_grad = False

    counts = parameter_counts(net)
    if counts != (EXPECTED_TRAINABLE, EXPECTED_FROZEN):
        raise ModelBuildError(
            f"parameter split {counts} does not match the expected "
            f"({EXPECTED_TRAINABLE}, {EXPECTED_FROZEN}); freeze boundary is wrong"
        )
    return net, counts


def frozen_state(model: torch.nn.Module) -> dict[str, torch.Tensor]:
    """Clones of every frozen parameter, keyed by name."""
    return {
        name: p.detach().clone()
        for name, p in model.named_parameters()
        if not p.requires_grad
    }


def preprocess(batch_uint8: torch.Tensor) -> torch.Tensor:
    """(N, H, W, 3) uint8 RGB -> mean-subtracted float32 NCHW."""
    x = batch_uint8.to(torch.float32)
    x = x - torch.tensor(PIXEL_MEANS, dtype=torch.float32)
    return x.permute(0, 3, 1, 2).contiguous()
