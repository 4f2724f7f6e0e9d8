"""Shared fixtures: a tiny model config, a tiny synthetic dataset, float64 gradient checks."""

from pathlib import Path
from typing import Any, Callable

import numpy as np
import pytest
import torch
from torch import Tensor, nn

from egoseg.lib import SynthSpec, build_config, synth_generate

TINY_SETTINGS: dict[str, Any] = {
    "name": "tiny",
    "max_iterations": 6,
    "warmup_iterations": 2,
    "peak_lr": 0.001,
    "batch_size": 2,
    "checkpoint_every": 3,
    "log_every": 1,
    "data.crop_size": 32,
    "data.random_crop": False,
    "encoder.strides": [2, 4],
    "encoder.channels": [8, 8],
    "encoder.global_channels": 8,
    "encoder.global_stride": 4,
    "encoder.heads": 2,
    "ipp.channels": 8,
    "dqg.n_partition": 2,
    "decoder.layers": 2,
    "decoder.dim": 8,
    "decoder.heads": 2,
    "decoder.ffn_dim": 16,
    "decoder.dropout": 0.0,
    "loss.tau": 2,
    "eval.illusion_tau": 2,
}


@pytest.fixture
def tiny_settings() -> dict[str, Any]:
    return dict(TINY_SETTINGS)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def synth_root(tmp_path: Path) -> Path:
    """Four train and three val scenes at 32x32."""
    root = tmp_path / "data"
    synth_generate(SynthSpec(seed=0, count=4, size=32, out_dir=str(root), split="train"))
    synth_generate(SynthSpec(seed=1, count=3, size=32, out_dir=str(root), split="val"))
    return root


@pytest.fixture
def tiny_config(tmp_path: Path, synth_root: Path):
    return build_config(
        TINY_SETTINGS,
        {
            "data.root": str(synth_root),
            "checkpoint_dir": str(tmp_path / "checkpoints"),
            "log_dir": str(tmp_path / "logs"),
        },
    )


def param_gradcheck(
    module: nn.Module,
    loss_fn: Callable[[nn.Module, dict[str, Tensor]], Tensor],
    include: Callable[[str], bool] = lambda name: True,
    fast_mode: bool = True,
) -> bool:
    """
    Finite-difference check of d loss / d parameters in float64.

    `loss_fn(module, params)` must evaluate the module through
    `functional_call(module, params, ...)` and return a scalar.
    """
    module = module.double().eval()
    params = {n: p.detach().clone() for n, p in module.named_parameters()}
    names = [n for n in params if include(n)]
    assert names, "no parameters selected"

    def fn(*values: Tensor) -> Tensor:
        return loss_fn(module, {**params, **dict(zip(names, values))})

    inputs = tuple(params[n].requires_grad_(True) for n in names)
    return torch.autograd.gradcheck(fn, inputs, eps=1e-6, atol=1e-6, rtol=1e-4, fast_mode=fast_mode)


@pytest.fixture
def gradcheck_params():
    return param_gradcheck

