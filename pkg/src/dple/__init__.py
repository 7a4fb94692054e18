"""Quaternion-fusion domain prompt learning on frozen toy encoders."""

from .adapter import (DomainProjector, PromptState, build_language_quaternion,
                      domain_context, init_prompt_state, project_domain_features,
                      sample_noise, vision_prompt)
from .encoders import (FrozenEncoder, FrozenLayer, TokenSequence, frozen_checksum,
                       init_frozen_encoder, language_forward, vision_forward)
from .evaluation import (EmbeddingDataset, EvalReport, ablation_suite,
                         base_novel_split, cross_dataset_eval, evaluate_accuracy,
                         generate_synthetic_dataset, harmonic_mean)
from .grad import Tape, Tensor, finite_diff_check, tensor
from .learn import (TrainConfig, TrainReport, build_pipeline, class_probabilities,
                    cosine_similarity, few_shot_sample, sgd_step, train)
from .pipeline import Pipeline, forward_sample
from .qnum import (Quaternion, QuaternionLinear, QuaternionTensor, hamilton_product,
                   quat_to_real_matrix, quaternion_linear_forward, split_activation)

__version__ = "0.1.0"

__all__ = [
    "DomainProjector", "PromptState", "build_language_quaternion",
    "domain_context", "init_prompt_state", "project_domain_features",
    "sample_noise", "vision_prompt",
    "FrozenEncoder", "FrozenLayer", "TokenSequence", "frozen_checksum",
    "init_frozen_encoder", "language_forward", "vision_forward",
    "EmbeddingDataset", "EvalReport", "ablation_suite", "base_novel_split",
    "cross_dataset_eval", "evaluate_accuracy", "generate_synthetic_dataset",
    "harmonic_mean",
    "Tape", "Tensor", "finite_diff_check", "tensor",
    "TrainConfig", "TrainReport", "build_pipeline", "class_probabilities",
    "cosine_similarity", "few_shot_sample", "sgd_step", "train",
    "Pipeline", "forward_sample",
    "Quaternion", "QuaternionLinear", "QuaternionTensor", "hamilton_product",
    "quat_to_real_matrix", "quaternion_linear_forward", "split_activation",
    "__version__",
]
