"""Federated ABC for Gaussian mixtures with SuffiAE summary statistics."""

import json

import numpy as np

from . import _core
from ._core import GrafflError, RngStream, auc, f1_at_cutoff, parse_site_capture, select_cutoff

__version__ = _core.version()

__all__ = [
    "GrafflError",
    "RngStream",
    "auc",
    "density",
    "encode",
    "f1_at_cutoff",
    "federated_sample",
    "parse_site_capture",
    "rejection_sample",
    "run_experiment",
    "sample",
    "sample_prior",
    "select_cutoff",
    "summarize_posterior",
    "train_suffiae",
]


def _params_json(params):
    return params if isinstance(params, str) else json.dumps(params)


def density(x, params):
    return _core.density(list(map(float, x)), _params_json(params))


def sample(params, n, seed):
    """Returns (rows, component assignments)."""
    x, z = _core.sample(_params_json(params), n, seed)
    return x, np.asarray(z, dtype=np.int64)


def sample_prior(k, dim, seed, spread=1.0):
    return json.loads(_core.sample_prior(k, dim, seed, spread))


def rejection_sample(observed, n_proposals, n_accept, k, seed, spread=1.0):
    return json.loads(_core.rejection_sample(np.asarray(observed), n_proposals, n_accept, k, seed, spread))


def federated_sample(site_summaries, n_proposals, n_accept, k, seed, spread=1.0):
    sites = [np.asarray(s) for s in site_summaries]
    return json.loads(_core.federated_sample(sites, n_proposals, n_accept, k, seed, spread))


def summarize_posterior(posterior):
    return json.loads(_core.summarize_posterior(json.dumps(posterior)))


def train_suffiae(x, y, latent_dim, hidden=(16,), **options):
    model = _core.train_suffiae(np.asarray(x), [int(v) for v in y], latent_dim, list(hidden), **options)
    return json.loads(model)


def encode(model, x):
    return _core.encode(_params_json(model), np.asarray(x))


def run_experiment(config, out_dir):
    """Runs a scenario in-process; returns (posterior document, metrics CSV text)."""
    posterior, metrics = _core.run_experiment(json.dumps(config), str(out_dir))
    return json.loads(posterior), metrics
