"""entmax-1.5 sparse-attention ViT toolkit."""

from savt._core import (
    LayerFeatures,
    VitConfig,
    VitModel,
    attend,
    attend_grad_logits,
    cls_patch_similarity,
    entmax15,
    entmax15_vjp,
    evenly_spaced_layers,
    extract_layer_set,
    forward_features,
    init_model,
    layer_sweep,
    load_model,
    make_synthetic_dataset,
    normalize_rows,
    pca_rgb,
    pib,
    save_model,
    softmax,
    softmax_vjp,
    support_stats,
    train_linear_probe,
)

__all__ = [
    "LayerFeatures",
    "VitConfig",
    "VitModel",
    "attend",
    "attend_grad_logits",
    "cls_patch_similarity",
    "entmax15",
    "entmax15_vjp",
    "evenly_spaced_layers",
    "extract_layer_set",
    "forward_features",
    "init_model",
    "layer_sweep",
    "load_model",
    "make_synthetic_dataset",
    "normalize_rows",
    "pca_rgb",
    "pib",
    "save_model",
    "softmax",
    "softmax_vjp",
    "support_stats",
    "train_linear_probe",
]

__version__ = "0.1.0"
