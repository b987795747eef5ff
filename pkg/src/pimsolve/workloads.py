"""Reference layer lists."""
from __future__ import annotations

from .dfg import LayerSpec

# min / max SOI layers of several benchmarks; feature maps at their
# ImageNet resolution
SOI_TABLE = [
    ("VGG", "min", LayerSpec("conv", 3, 64, 3, 224, 224, name="vgg_c3x3_3_64"), "0B+27", "0B+64"),
    ("VGG", "max", LayerSpec("conv", 512, 512, 3, 14, 14, name="vgg_c3x3_512_512"), "4B+512", "0B+512"),
    ("MSRA", "min", LayerSpec("conv", 3, 96, 7, 112, 112, name="msra_c7x7_3_96"), "0B+147", "0B+96"),
    ("MSRA", "max", LayerSpec("conv", 512, 512, 3, 14, 14, name="msra_c3x3_512_512"), "4B+512", "0B+512"),
    ("ResNet", "min", LayerSpec("conv", 64, 64, 1, 56, 56, name="resnet_c1x1_64_64"), "0B+64", "0B+64"),
    ("BERT", "min", LayerSpec("fc", 768, 64, name="bert_projection"), "0B+768", "0B+64"),
    ("BERT", "max", LayerSpec("fc", 3072, 768, name="bert_feed_forward"), "3B+0", "0B+768"),
]


def vgg16() -> list[LayerSpec]:
    cfg = [(3, 64, 224), (64, 64, 224), (64, 128, 112), (128, 128, 112), (128, 256, 56),
           (256, 256, 56), (256, 256, 56), (256, 512, 28), (512, 512, 28), (512, 512, 28),
           (512, 512, 14), (512, 512, 14), (512, 512, 14)]
    layers = [LayerSpec("conv", ci, co, 3, hw, hw, name=f"conv{i + 1}") for i, (ci, co, hw) in enumerate(cfg)]
    layers += [LayerSpec("fc", 512 * 49, 4096, name="fc1"), LayerSpec("fc", 4096, 4096, name="fc2"),
               LayerSpec("fc", 4096, 1000, name="fc3")]
    return layers


def resnet50() -> list[LayerSpec]:
    """Bottleneck convolutions of ResNet-50 (projection shortcuts omitted)."""
    layers = [LayerSpec("conv", 3, 64, 7, 112, 112, name="conv1")]
    stages = [(64, 256, 56, 3), (128, 512, 28, 4), (256, 1024, 14, 6), (512, 2048, 7, 3)]
    c_in = 64
    for si, (mid, out, hw, reps) in enumerate(stages):
        for r in range(reps):
            p = f"s{si + 2}b{r + 1}"
            layers += [LayerSpec("conv", c_in, mid, 1, hw, hw, name=f"{p}_a"),
                       LayerSpec("conv", mid, mid, 3, hw, hw, name=f"{p}_b"),
                       LayerSpec("conv", mid, out, 1, hw, hw, name=f"{p}_c")]
            c_in = out
    layers.append(LayerSpec("fc", 2048, 1000, name="fc"))
    return layers


WORKLOADS = {"vgg16": vgg16, "resnet50": resnet50, "soi_table": lambda: [row[2] for row in SOI_TABLE]}
