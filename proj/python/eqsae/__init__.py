"""Adaptively equivariant sparse autoencoders on a rotation-symmetric image task.

The compiled core exposes the dataset generator, the TopK SAE variants, the
activation-transform matrix utilities and the probing primitives; see the
project README for the full pipeline CLI.
"""

from eqsae._core import (  # noqa: F401
    BaseAutoencoder,
    SaeModel,
    TransformMatrix,
    build_base,
    build_sae,
    classify_dictionary_features,
    enumerate_tasks,
    equivariant_reconstruct,
    f1_score,
    gbt_probe,
    generate_dataset,
    identity_transform,
    knn_probe,
    load_base,
    load_sae,
    load_transform,
    logreg_probe,
    mse,
    orientation_period,
    predict_transformed,
    r_squared,
    read_tensor,
    render_glyph,
    rotate_image,
    run_pipeline,
    topk,
    write_tensor,
)

__all__ = [
    "BaseAutoencoder",
    "SaeModel",
    "TransformMatrix",
    "build_base",
    "build_sae",
    "classify_dictionary_features",
    "enumerate_tasks",
    "equivariant_reconstruct",
    "f1_score",
    "gbt_probe",
    "generate_dataset",
    "identity_transform",
    "knn_probe",
    "load_base",
    "load_sae",
    "load_transform",
    "logreg_probe",
    "mse",
    "orientation_period",
    "predict_transformed",
    "r_squared",
    "read_tensor",
    "render_glyph",
    "rotate_image",
    "run_pipeline",
    "topk",
    "write_tensor",
]
