"""Python bindings for the humankernel C++ library."""

import json
import os

from ._core import (
    CholeskyError,
    DrawSet,
    FitError,
    GPModel,
    KernelSpec,
    empirical_moments,
    experiment_names,
    fit_data_kernel,
    fit_prediction_kernel,
    frobenius_rel_error,
    lml_grad,
    log_marginal_likelihood,
    posterior_predictive,
    predictive_conditional_lml,
    predictive_conditional_lml_grad,
    psd_project,
    sample_empirical,
    sample_posterior,
    sample_prior,
)
from ._core import _run_experiment


def run_experiment(experiment, output_dir, params=None, seed=0):
    """Run a named experiment and write its report to output_dir.

    Returns a dict with the resolved params, the summary, and the lists of
    written and omitted report files.
    """
    resolved, summary, written, omitted = _run_experiment(
        experiment, json.dumps(params or {}), seed, os.fspath(output_dir)
    )
    return {
        "params": json.loads(resolved),
        "summary": json.loads(summary),
        "written": [os.fspath(p) for p in written],
        "omitted": list(omitted),
    }


def kernel_to_dict(kernel):
    return json.loads(kernel.to_json())


def kernel_from_dict(d):
    return KernelSpec.from_json(json.dumps(d))
