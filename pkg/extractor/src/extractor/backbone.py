"""ResNet-18 stage taps: capture per-stage activations of a frozen CNN.

The network is only ever used as a fixed feature transform: weights are
frozen, the model stays in eval mode, and forward hooks record the output
of the four residual stages (``layer1`` .. ``layer4``). For 224x224 inputs
the captured maps are 64x56x56, 128x28x28, 256x14x14 and 512x7x7.
"""

from __future__ import annotations

from typing import Sequence

import torch
from PIL import Image
from torch import nn

STAGE_NAMES = ("layer1", "layer2", "layer3", "layer4")

INPUT_SIZE = (224, 224)  # (height, width) fed to the network

# Channel statistics the published weights were trained with. Inputs are
# normalized the same way even under random initialization so that runs are
# comparable and the preprocessing recorded in the manifest is always true.
CHANNEL_MEAN = (0.485, 0.456, 0.406)
CHANNEL_STD = (0.229, 0.224, 0.225)


def build_backbone(pretrained: bool = True) -> nn.Module:
    """Return a frozen, eval-mode ResNet-18.

    ``pretrained=False`` keeps the random initialization, which is enough for
    shape/integration checks on machines without access to the weight files.
    """
    from torchvision.models import ResNet18_Weights, resnet18

    weights = ResNet18_Weights.IMAGENET1K_V1 if pretrained else None
    try:
        model = resnet18(weights=weights)
    except Exception as exc:
        raise RuntimeError(
            "could not load pretrained backbone weights; pre-populate the "
            f"torch cache or pass pretrained=False ({exc})"
        ) from exc
    model.eval()
    for param in model.parameters():
        param.requires_grad_(False)
    return model


class StageTap:
    """Forward hooks that record the output tensor of selected stages."""

    def __init__(self, model: nn.Module, stages: Sequence[str]):
        unknown = [s for s in stages if not hasattr(model, s)]
        if unknown:
            raise ValueError(f"model has no stages named {unknown}")
        self.outputs: dict[str, torch.Tensor] = {}
        self._handles = [
            getattr(model, name).register_forward_hook(self._recorder(name))
            for name in stages
        ]

    def _recorder(self, name: str):
        def hook(_module, _inputs, output):
            self.outputs[name] = output.detach()

        return hook

    def close(self) -> None:
        for handle in self._handles:
            handle.remove()
        self._handles = []


def forward_stages(
    model: nn.Module, batch: torch.Tensor, stages: Sequence[str]
) -> dict[str, torch.Tensor]:
    """Run one forward pass and return {stage: B x C x H x W activation}."""
    tap = StageTap(model, stages)
    try:
        with torch.inference_mode():
            model(batch)
    finally:
        tap.close()
    return {name: tap.outputs[name] for name in stages}


def resize_rgb(image: Image.Image, size: tuple[int, int] = INPUT_SIZE) -> Image.Image:
    """RGB-convert and bilinearly resize to the network input size."""
    height, width = size
    return image.convert("RGB").resize((width, height), Image.Resampling.BILINEAR)


def to_input_tensor(image: Image.Image) -> torch.Tensor:
    """Resized RGB PIL image -> normalized C x H x W float tensor."""
    from torchvision.transforms import functional as tf

    return tf.normalize(tf.to_tensor(image), list(CHANNEL_MEAN), list(CHANNEL_STD))
