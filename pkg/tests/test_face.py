# -*- coding: utf-8 -*-

import logging

import numpy as np
import pytest
import torch

try:
    from facevox import FaceEncoder, ProsodyEncoder, ShapeError, EmbeddingError, MelSpectrogram
    from facevox import ModelConfig, VideoConfig
    from facevox._face import face_forward, prosody_forward, cs_loss, select_face_index, select_face_frame
except ImportError:
    from src.facevox import FaceEncoder, ProsodyEncoder, ShapeError, EmbeddingError, MelSpectrogram
    from src.facevox import ModelConfig, VideoConfig
    from src.facevox._face import face_forward, prosody_forward, cs_loss, select_face_index, select_face_frame


logger = logging.getLogger(__name__)


@pytest.fixture(scope="module")
def encoders(tiny_config):
    torch.manual_seed(1)
    _face = FaceEncoder(tiny_config.model, tiny_config.video).eval()
    _prosody = ProsodyEncoder(tiny_config.model, tiny_config.audio).eval()
    return _face, _prosody


def test_face_forward_shapes(encoders, tiny_config):
    logger.info("Testing 'face_forward' shapes...")

    _face, _ = encoders
    _size = tiny_config.corpus.face_size
    _emb = face_forward(torch.rand(3, _size, _size), _face)
    assert tuple(_emb.shape) == (tiny_config.model.face_dim,)
    assert tuple(face_forward(torch.rand(4, 3, _size, _size), _face).shape) == (4, tiny_config.model.face_dim)

    with pytest.raises(ShapeError):
        face_forward(torch.rand(1, _size, _size), _face)
    with pytest.raises(ShapeError):
        face_forward(torch.rand(3, 8, 8), _face)
    with pytest.raises(ShapeError):
        face_forward(torch.rand(_size, _size), _face)

    logger.info("Done: 'face_forward' shapes.\n")


def test_prosody_forward_shapes(encoders, tiny_config):
    logger.info("Testing 'prosody_forward' shapes...")

    _, _prosody = encoders
    _audio = tiny_config.audio
    _mel = torch.randn(_audio.mel_bins, _audio.mel_frames)
    _emb = prosody_forward(_mel, _prosody)
    assert tuple(_emb.shape) == (tiny_config.model.face_dim,)

    _from_mel = prosody_forward(MelSpectrogram.from_array(_mel.numpy(), _audio), _prosody)
    torch.testing.assert_close(_from_mel, _emb)
    assert tuple(prosody_forward(torch.stack([_mel, _mel]), _prosody).shape) == (2, tiny_config.model.face_dim)

    with pytest.raises(ShapeError):
        prosody_forward(torch.randn(_audio.mel_bins, 15), _prosody)
    with pytest.raises(ShapeError):
        prosody_forward(torch.randn(40, _audio.mel_frames), _prosody)

    logger.info("Done: 'prosody_forward' shapes.\n")


def test_cs_loss_properties():
    logger.info("Testing 'cs_loss' properties...")

    _gen = torch.Generator().manual_seed(2)
    _f = torch.randn(16, generator=_gen)
    _p = torch.randn(16, generator=_gen)
    _loss = cs_loss(_f, _p)

    assert 0.0 <= float(_loss) <= 2.0
    torch.testing.assert_close(cs_loss(_p, _f), _loss)
    torch.testing.assert_close(cs_loss(3.5 * _f, 0.25 * _p), _loss)
    assert float(cs_loss(_f, 2.0 * _f)) == pytest.approx(0.0, abs=1e-6)
    assert float(cs_loss(_f, -_f)) == pytest.approx(2.0, abs=1e-6)

    _orthogonal = cs_loss(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0]))
    assert float(_orthogonal) == pytest.approx(1.0)

    _batch = cs_loss(torch.stack([_f, _f]), torch.stack([_p, _f]))
    assert float(_batch) == pytest.approx(float(_loss) / 2.0, abs=1e-6)

    logger.info("Done: 'cs_loss' properties.\n")


def test_cs_loss_invalid():
    logger.info("Testing 'cs_loss' failures...")

    with pytest.raises(EmbeddingError):
        cs_loss(torch.zeros(4), torch.ones(4))
    with pytest.raises(EmbeddingError):
        cs_loss(torch.ones(2, 4), torch.stack([torch.ones(4), torch.zeros(4)]))
    with pytest.raises(ShapeError):
        cs_loss(torch.ones(4), torch.ones(5))

    logger.info("Done: 'cs_loss' failures.\n")


def test_cs_loss_gradient_flows_to_both_sides():
    logger.info("Testing 'cs_loss' gradient...")

    _f = torch.tensor([1.0, 2.0, 0.5], requires_grad=True)
    _p = torch.tensor([0.3, -1.0, 2.0], requires_grad=True)
    cs_loss(_f, _p).backward()

    assert _f.grad is not None and _p.grad is not None
    # the gradient is orthogonal to the input for a scale-invariant loss
    assert float(torch.dot(_f.grad, _f.detach())) == pytest.approx(0.0, abs=1e-6)

    logger.info("Done: 'cs_loss' gradient.\n")


def test_face_frame_selection():
    logger.info("Testing uniform face frame selection...")

    _rng = np.random.default_rng(0)
    _counts = np.bincount([select_face_index(5, _rng) for _ in range(5000)], minlength=5)
    assert _counts.sum() == 5000
    assert np.all(np.abs(_counts / 5000.0 - 0.2) < 0.03)

    _frames = torch.arange(4, dtype=torch.float32).view(4, 1, 1, 1).expand(4, 3, 2, 2)
    _a = select_face_frame(_frames, np.random.default_rng(7))
    _b = select_face_frame(_frames, np.random.default_rng(7))
    torch.testing.assert_close(_a, _b)
    assert tuple(_a.shape) == (3, 2, 2)

    with pytest.raises(ShapeError):
        select_face_index(0, _rng)

    logger.info("Done: Uniform face frame selection.\n")


def test_cs_loss_scale_and_symmetry_sweep():
    logger.info("Testing 'cs_loss' scale invariance and symmetry on random pairs...")

    _gen = torch.Generator().manual_seed(3)
    for _ in range(1000):
        _dim = int(torch.randint(2, 64, (1,), generator=_gen))
        _f = torch.randn(_dim, generator=_gen, dtype=torch.float64)
        _p = torch.randn(_dim, generator=_gen, dtype=torch.float64)
        _alpha, _beta = (10.0 ** torch.empty(2, dtype=torch.float64).uniform_(-3.0, 3.0, generator=_gen)).tolist()

        _loss = float(cs_loss(_f, _p))
        assert 0.0 <= _loss <= 2.0
        assert abs(float(cs_loss(_p, _f)) - _loss) <= 1e-6
        assert abs(float(cs_loss(_alpha * _f, _beta * _p)) - _loss) <= 1e-6

    logger.info("Done: 'cs_loss' scale invariance and symmetry.\n")


def test_cs_loss_gradcheck_through_face_encoder():
    logger.info("Testing 'cs_loss' gradient through 'face_forward' against finite differences...")

    torch.manual_seed(4)
    _model_cfg = ModelConfig(face_dim=6, face_channels=(2, 2, 3, 3), face_dropout=0.0)
    _face = FaceEncoder(_model_cfg, VideoConfig()).double().eval()
    _image = torch.rand(3, 16, 16, dtype=torch.float64, requires_grad=True)
    _p = torch.randn(6, dtype=torch.float64)

    assert torch.autograd.gradcheck(
        lambda _x: cs_loss(face_forward(_x, _face), _p), (_image,), eps=1e-6, atol=1e-6, rtol=1e-3
    )
    assert torch.autograd.gradcheck(
        lambda _x: cs_loss(_p, face_forward(_x, _face)), (_image,), eps=1e-6, atol=1e-6, rtol=1e-3
    )

    logger.info("Done: 'cs_loss' gradient through 'face_forward'.\n")


def test_face_forward_zero_embedding(tiny_config):
    logger.info("Testing 'face_forward' rejects a zero-norm embedding...")

    _face = FaceEncoder(tiny_config.model, tiny_config.video).eval()
    with torch.no_grad():
        _face.fc.weight.zero_()
        _face.fc.bias.zero_()

    _size = tiny_config.corpus.face_size
    with pytest.raises(EmbeddingError):
        face_forward(torch.rand(3, _size, _size), _face)
    with pytest.raises(EmbeddingError):
        face_forward(torch.rand(2, 3, _size, _size), _face)

    with torch.no_grad():
        _face.fc.bias[0] = 1.0
    assert float(face_forward(torch.rand(3, _size, _size), _face).norm()) > 0.0

    logger.info("Done: 'face_forward' zero-norm embedding.\n")
