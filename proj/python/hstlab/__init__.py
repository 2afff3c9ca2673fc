"""Hierarchical sparse transformer experiments.

Thin dict-friendly wrappers over the compiled core: configs go in as dicts,
results come back as dicts; only JSON text crosses the binding boundary.
"""

import json as _json

from ._core import HstError
from . import _core

__all__ = [
    "HstError",
    "topology",
    "flow_report",
    "path_counts",
    "flop_table_csv",
    "generate_dataset",
    "save_dataset",
    "train",
    "evaluate_checkpoint",
    "bottleneck_sweep",
    "sweep_plotdata",
]


def topology(n_base, g, w, insert_reps=False, r=0, seed=None):
    """Build a global+block attention topology; returns its dict form."""
    return _json.loads(_core.topology_json(n_base, g, w, insert_reps, r, seed))


def flow_report(topo, layers, hierarchical=False):
    """Reach/bottleneck analysis. `topo` is a dict from topology()."""
    return _json.loads(_core.flow_report_json(_json.dumps(topo), layers, hierarchical))


def path_counts(topo, layers, src, hierarchical=False):
    """Per-destination attention path counts from one source token."""
    return _core.path_counts(_json.dumps(topo), layers, src, hierarchical)


def flop_table_csv(n_base, g, w, d=64):
    """Attention cost table (CSV text) for a list of sequence lengths."""
    return _core.flop_table_csv(list(n_base), g, w, d)


def generate_dataset(task, split):
    """Deterministic (rows, labels) for a task-spec dict and split name."""
    return _core.generate_dataset(_json.dumps(task), split)


def save_dataset(task, split, prefix):
    """Generate one split and store it as <prefix>.bin/.json; returns row count."""
    return _core.save_dataset(_json.dumps(task), split, prefix)


def train(config, out_dir):
    """Train on a {model, train, sar, task} bundle; artifacts land in out_dir."""
    return _json.loads(_core.train(_json.dumps(config), out_dir))


def evaluate_checkpoint(checkpoint, data, roll=0, roll_layer=0, batch=64):
    """Accuracy + divergence probe of a stored checkpoint on a stored dataset."""
    return _json.loads(_core.evaluate_checkpoint(checkpoint, data, roll, roll_layer, batch))


def bottleneck_sweep(config, gs, repeats, out_dir):
    """Global-width sweep over {HST, ST}; returns the CSV paths it wrote."""
    return _json.loads(_core.bottleneck_sweep(_json.dumps(config), list(gs), repeats, out_dir))


def sweep_plotdata(files):
    """Merge sweep runs.csv files; returns (summary_csv_text, warnings)."""
    return _core.sweep_plotdata(list(files))
