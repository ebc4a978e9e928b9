"""Understanding estimation from item responses and facial expression streams.

Modules:
    domain      core types (items, responses, labels, facial streams) and labeling rules
    features    windowed local tensors and 8-statistic global vectors
    rasch       traditional 1PL baseline with probit init and alternating MLE
    nn          dense/conv layers, Adam, BCE, gradient checking
    models      Deep-IRT twins with optional facial-state branch (mlp / tcn)
    synth       seed-deterministic generative oracle
    dataio      canonical on-disk schema, loaders/writers, external import
    evaluation  leave-one-out harness, EER thresholds, window sweeps, reports
    kernels     numba-JIT hot loops with a pure-numpy fallback (EDUSTATE_NUMBA=0)
    cli         batch entry point (``edustate`` console script)
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    dataio,
    domain,
    errors,
    evaluation,
    features,
    kernels,
    models,
    nn,
    rasch,
    synth,
)
