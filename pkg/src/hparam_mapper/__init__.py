"""hparam_mapper - predict classifier hyperparameters from the data itself.

A small autoencoder is trained on every dataset and its encoder weights
become a fixed-size description of that dataset. A core network maps these
descriptions to hyperparameter vectors, and a coordinate-wise local search
refines the prediction on the dataset at hand.

Examples:
    >>> from hparam_mapper import HyperparamSpec, transform_label
    >>> spec = HyperparamSpec("c", 0.01, 100.0, scale="log10")
    >>> transform_label([1.0], [spec]).tolist()
    [0.0]

    >>> from hparam_mapper import compute_p0
    >>> round(compute_p0(4, 2, 0.5), 4)
    0.8333
"""

from .config import PipelineConfig
from .core_network import CnConfig, CoreNetworkModel, build_cn, init_cn, predict, train_cn
from .datasets import ImageDataset, SplitPair, TabularDataset, load_tabular, split
from .environments import (
    Environment,
    HyperparamSpec,
    HyperparamVector,
    random_search,
    toy_learner_env,
)
from .errors import HparamMapperError
from .labeling import inverse_transform, label_dataset, transform_label
from .lopt import LoptConfig, SegmentTree, dmc, lopt, mc
from .npe import EncodedMeta, EncoderSpec, encode_dataset
from .pipeline import RunReport, run_all
from .sampler import compute_p0, plan_m, sample_independent

# Version and author information
__version__: str = "0.1.0"
__author__: str = "Diogo Ribeiro"

# Public API
__all__ = [
    "CnConfig",
    "CoreNetworkModel",
    "EncodedMeta",
    "EncoderSpec",
    "Environment",
    "HparamMapperError",
    "HyperparamSpec",
    "HyperparamVector",
    "ImageDataset",
    "LoptConfig",
    "PipelineConfig",
    "RunReport",
    "SegmentTree",
    "SplitPair",
    "TabularDataset",
    "build_cn",
    "compute_p0",
    "dmc",
    "encode_dataset",
    "init_cn",
    "inverse_transform",
    "label_dataset",
    "load_tabular",
    "lopt",
    "mc",
    "plan_m",
    "predict",
    "random_search",
    "sample_independent",
    "split",
    "toy_learner_env",
    "transform_label",
    "train_cn",
]


def _main() -> None:
    """Entry point for ``python -m hparam_mapper``."""
    import sys

    from .cli import main

    sys.exit(main())


if __name__ == "__main__":
    _main()
