"""Domain-adaptive face anti-spoofing classifier trained with a kernel MMD domain loss.

A small convolutional network is trained on a labelled source dataset while the maximum mean discrepancy (MMD)
between its last-pooling features on source and target samples is minimized, either over all target samples
(unsupervised) or per class and spoofing modality using a few labelled target subjects (semi-supervised). The
package carries its own reverse-mode autodiff engine on numpy, the biometric evaluation protocol (EER threshold
on a development split, HTER / AUC / accuracy on the test split) and a synthetic benchmark with a domain shift.

``mmdadapt.mmd2_biased(X, Y, spec)``
    Biased squared MMD of two sample sets under a mixture of Gaussian RBF kernels; differentiable.
``mmdadapt.build_model(config, seed)``
    Deterministically initialized network parameters for an architecture.
``mmdadapt.train(source, target, config)``
    Trains with the ``stdcnn``, ``unsupervised`` or ``semisupervised`` objective on Two-Half batches.
``mmdadapt.evaluate_model(params, devel, test)``
    Threshold from the development split, HTER / AUC / accuracy on the test split.
``mmdadapt.cross_test(source, target, config)``
    Source -> target protocol for every method, with intra-test results on the source domain.

Examples:
    Train the semi-supervised objective on a synthetic benchmark and evaluate it on the target domain.

    >>> import mmdadapt
    >>> bench = mmdadapt.generate_synthetic(mmdadapt.SyntheticSpec(seed=1), "/tmp/bench")
    >>> result = mmdadapt.cross_test(bench.source, bench.target, mmdadapt.TrainConfig(epochs=5))
    >>> 0.0 <= result.methods["semisupervised"].inter.hter <= 1.0
    True

The command line interface (``mmdadapt --help``) exposes the same operations as the ``synth``, ``train``,
``eval``, ``cross-test``, ``project-features`` and ``report`` commands.
"""

from .__version_data__ import __version__, __version_info__
from .data import Dataset, SampleRecord, load_manifest, split_protocol, write_manifest
from .exceptions import CheckpointError, NonFiniteError, ProtocolError, ShapeError, TrainingError, ValidationError
from .gradcheck import finite_difference_gradcheck
from .kernels import KernelSpec, gram, mixture_eval, mmd2_biased, mmd2_grad, mmd2_literal, mmd2_unbiased, rbf_eval
from .metrics import EvalReport, aggregate_video, eer_threshold, far_frr, hter, pca_project, roc_auc
from .model import (
    ArchitectureConfig,
    ModelParams,
    build_model,
    forward_features,
    forward_logits,
    load_checkpoint,
    save_checkpoint,
)
from .objectives import DomainBatch, ModalityPartition, loss_semisupervised, loss_unsupervised, two_half_batches
from .optim import AdamState, adam_step
from .pipeline import cross_test, evaluate_model
from .synthetic import SyntheticSpec, generate_synthetic
from .tensor import Tape, Tensor, record_and_backward
from .training import TrainConfig, train

__all__ = [
    "__version__",
    "__version_info__",
    "AdamState",
    "ArchitectureConfig",
    "CheckpointError",
    "Dataset",
    "DomainBatch",
    "EvalReport",
    "KernelSpec",
    "ModalityPartition",
    "ModelParams",
    "NonFiniteError",
    "ProtocolError",
    "SampleRecord",
    "ShapeError",
    "SyntheticSpec",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainingError",
    "ValidationError",
    "adam_step",
    "aggregate_video",
    "build_model",
    "cross_test",
    "eer_threshold",
    "evaluate_model",
    "far_frr",
    "finite_difference_gradcheck",
    "forward_features",
    "forward_logits",
    "generate_synthetic",
    "gram",
    "hter",
    "load_checkpoint",
    "load_manifest",
    "loss_semisupervised",
    "loss_unsupervised",
    "mixture_eval",
    "mmd2_biased",
    "mmd2_grad",
    "mmd2_literal",
    "mmd2_unbiased",
    "pca_project",
    "rbf_eval",
    "record_and_backward",
    "roc_auc",
    "save_checkpoint",
    "split_protocol",
    "train",
    "two_half_batches",
    "write_manifest",
]
