#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
检查点：逐位还原、损坏与版本检测、形状不匹配
"""

import struct

import pytest
import torch

from lxlab.core.encoder import LayoutEncoder
from lxlab.core.heads import SerHead
from lxlab.core.numerics import AdamState, adam_step
from lxlab.errors import (CheckpointError, CheckpointVersionError, CorruptCheckpointError,
                          ShapeMismatchError)
from lxlab.models.model_config import ModelConfig
from lxlab.storage.checkpoint import (CheckpointState, collect_tensors, load_checkpoint, optimizer_for,
                                      restore_modules, save_checkpoint)


@pytest.fixture
def trained_state(tiny):
    """做过一步 Adam 更新的编码器与 SER 层"""
    modules = {'encoder': LayoutEncoder(tiny), 'ser': SerHead(tiny)}
    named = optimizer_for(modules)
    gen = torch.Generator().manual_seed(0)
    for _, p in named:
        p.grad = torch.randn(p.shape, generator=gen, dtype=p.dtype)
    optimizer = AdamState()
    adam_step(named, optimizer, lr=1e-3)
    return CheckpointState(config=tiny, tensors=collect_tensors(modules), optimizer=optimizer,
                           meta={'step': 1, 'task': "SER"})


class TestRoundTrip:

    def test_bit_exact(self, tmp_path, trained_state):
        path = save_checkpoint(trained_state, tmp_path / "ckpt" / "model.lxlm")
        loaded = load_checkpoint(path)
        assert loaded.config == trained_state.config
        assert loaded.meta == {'step': 1, 'task': "SER"} and loaded.step == 1
        assert list(loaded.tensors) == list(trained_state.tensors)
        for name, tensor in trained_state.tensors.items():
            assert torch.equal(loaded.tensors[name], tensor), name
        assert loaded.optimizer.step == 1
        for name in trained_state.optimizer.m:
            assert torch.equal(loaded.optimizer.m[name], trained_state.optimizer.m[name])
            assert torch.equal(loaded.optimizer.v[name], trained_state.optimizer.v[name])

    def test_same_state_same_bytes(self, tmp_path, trained_state):
        a = save_checkpoint(trained_state, tmp_path / "a.lxlm").read_bytes()
        b = save_checkpoint(trained_state, tmp_path / "b.lxlm").read_bytes()
        assert a == b
        assert a[:4] == b"LXLM"

    def test_without_optimizer(self, tmp_path, tiny):
        state = CheckpointState(config=tiny, tensors=collect_tensors({'encoder': LayoutEncoder(tiny)}))
        loaded = load_checkpoint(save_checkpoint(state, tmp_path / "enc.lxlm"))
        assert loaded.optimizer is None and loaded.step == 0

    def test_restore_into_fresh_modules(self, tmp_path, trained_state, tiny):
        loaded = load_checkpoint(save_checkpoint(trained_state, tmp_path / "m.lxlm"))
        fresh = {'encoder': LayoutEncoder(tiny)}
        restore_modules(loaded, fresh)
        for name, p in fresh['encoder'].named_parameters():
            assert torch.equal(p.detach(), trained_state.tensors[f"encoder.{name}"])

    def test_text_only_round_trip(self, tmp_path):
        config = ModelConfig.preset("TINY", text_only=True)
        modules = {'encoder': LayoutEncoder(config), 'ser': SerHead(config)}
        state = CheckpointState(config=config, tensors=collect_tensors(modules))
        loaded = load_checkpoint(save_checkpoint(state, tmp_path / "text.lxlm"))
        assert loaded.config.text_only and loaded.config == config
        assert not any("x_embeddings" in name or "patch_projection" in name for name in loaded.tensors)
        restore_modules(loaded, {'encoder': LayoutEncoder(config)})


class TestCorruption:

    def test_truncated(self, tmp_path, trained_state):
        data = save_checkpoint(trained_state, tmp_path / "m.lxlm").read_bytes()
        for cut in (3, 20, len(data) - 8):
            path = tmp_path / f"cut_{cut}.lxlm"
            path.write_bytes(data[:cut])
            with pytest.raises(CorruptCheckpointError):
                load_checkpoint(path)

    def test_bad_magic(self, tmp_path, trained_state):
        data = save_checkpoint(trained_state, tmp_path / "m.lxlm").read_bytes()
        path = tmp_path / "bad.lxlm"
        path.write_bytes(b"NOPE" + data[4:])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_bad_header(self, tmp_path):
        header = b"{not json"
        path = tmp_path / "header.lxlm"
        path.write_bytes(struct.pack("<4sIQ", b"LXLM", 1, len(header)) + header)
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path, trained_state):
        data = bytearray(save_checkpoint(trained_state, tmp_path / "m.lxlm").read_bytes())
        data[4:8] = struct.pack("<I", 2)
        path = tmp_path / "v2.lxlm"
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.lxlm")


class TestShapes:

    def test_other_hidden_size(self, tmp_path, trained_state):
        loaded = load_checkpoint(save_checkpoint(trained_state, tmp_path / "m.lxlm"))
        wider = ModelConfig.preset("TINY", hidden=48, ffn_dim=96)
        with pytest.raises(ShapeMismatchError):
            restore_modules(loaded, {'encoder': LayoutEncoder(wider)})

    def test_missing_tensor(self, tmp_path, tiny):
        state = CheckpointState(config=tiny, tensors=collect_tensors({'encoder': LayoutEncoder(tiny)}))
        with pytest.raises(CheckpointError):
            restore_modules(state, {'ser': SerHead(tiny)})
