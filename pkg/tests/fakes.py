"""Small analytic stand-ins for the trained models."""

import numpy as np
import torch

from maskattack.core import BinaryMask, LogitMap


class LinearSegmenter:
    """Logits = scale * (sum of channels) + bias, identical for every prompt."""

    differentiable = True
    dtype = torch.float64
    checkpoint_digest = "linear"

    def __init__(self, shape=(8, 8), channels=3, scale=1.0, bias=5.0):
        self.resolution = shape
        self.channels = channels
        self.scale = scale
        self.bias = bias

    def logits_tensor(self, pixels, prompts):
        y = self.scale * pixels.to(self.dtype).sum(-1) + self.bias
        return y.unsqueeze(0).expand(len(prompts), -1, -1)

    def forward(self, image, prompt):
        with torch.no_grad():
            return LogitMap(self.logits_tensor(torch.tensor(image.data), [prompt])[0].numpy())

    def predict(self, image, prompt):
        return BinaryMask(self.forward(image, prompt).data > 0)

    def predict_many(self, image, prompts):
        return [self.predict(image, p) for p in prompts]

    def clone(self):
        return self


class NoGradSegmenter(LinearSegmenter):
    differentiable = False
