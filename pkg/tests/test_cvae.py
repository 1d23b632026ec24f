import numpy as np
import pytest

from dcenet import autodiff as ad
from dcenet import cvae, data
from dcenet.autodiff import Tensor
from dcenet.cvae import (
    DcenetModel,
    LatentGaussian,
    TrainConfig,
    decode,
    kl_divergence,
    kl_from_moments,
    make_batch,
    predict,
    recognize,
    reparameterize,
)

from conftest import tiny_model_config


def toy_window(obs_len=4, pred_len=3, seed=0):
    trajs = data.synth_scene("crossing", 2, seed, length=obs_len + pred_len)
    return data.extract_windows(trajs, obs_len=obs_len, pred_len=pred_len)[0]


def test_recognize_shapes_and_positive_sigma(tiny_model, rng):
    for scale in (1.0, 10.0):
        for p in tiny_model.parameters():
            p.data *= scale
        g = recognize(tiny_model, Tensor(rng.normal(size=(4, 6))), Tensor(rng.normal(size=(4, 6))))
        assert g.mu.shape == (4, 3) and g.sigma.shape == (4, 3)
        assert np.all(g.sigma.data > 0)


def test_recognize_kl_grad_check(tiny_model, rng):
    ex = Tensor(rng.normal(size=(2, 6)), requires_grad=True)
    ey = Tensor(rng.normal(size=(2, 6)), requires_grad=True)
    params = [ex, ey, tiny_model.recog_fc1.weight, tiny_model.recog_fc2.weight,
              tiny_model.recog_mu.weight, tiny_model.recog_log_sigma.weight, tiny_model.recog_log_sigma.bias]
    f = lambda: ad.tsum(kl_divergence(recognize(tiny_model, ex, ey)))
    assert ad.grad_check(f, params) < 1e-4


def test_reparameterize_cases(rng):
    mu, ls = rng.normal(size=5), rng.normal(size=5)
    g = LatentGaussian(Tensor(mu), Tensor(ls))
    assert np.array_equal(reparameterize(g, np.zeros(5)).data, mu)
    eps = rng.normal(size=5)
    unit = LatentGaussian(Tensor(np.zeros(5)), Tensor(np.zeros(5)))
    assert np.array_equal(reparameterize(unit, eps).data, eps)


def test_reparameterize_is_differentiable():
    mu = Tensor([0.5, -1.0], requires_grad=True)
    ls = Tensor([0.1, -0.3], requires_grad=True)
    eps = np.array([0.7, -1.4])
    f = lambda: ad.tsum(ad.square(reparameterize(LatentGaussian(mu, ls), eps)))
    assert ad.grad_check(f, [mu, ls]) < 1e-6


def test_kl_cases():
    assert kl_divergence(LatentGaussian(Tensor(np.zeros(4)), Tensor(np.zeros(4)))).item() == 0.0
    assert kl_divergence(LatentGaussian(Tensor([1.0]), Tensor([0.0]))).item() == 0.5
    assert kl_from_moments([1.0], [1.0]) == 0.5
    with pytest.raises(ValueError):
        kl_from_moments([0.0], [0.0])
    with pytest.raises(ValueError):
        kl_from_moments([0.0], [-1.0])


def test_decode_length_and_frozen(tiny_model, rng):
    z = rng.normal(size=3)
    enc = rng.normal(size=6)
    out = decode(tiny_model, z, enc, [2.0, -1.0], [0.5, 0.5])
    assert out.shape == (12, 2)
    tiny_model.decoder_out.weight.data[...] = 0.0
    tiny_model.decoder_out.bias.data[...] = 0.0
    out = decode(tiny_model, z, enc, [2.0, -1.0], [0.5, 0.5])
    assert np.array_equal(out.data, np.tile([2.0, -1.0], (12, 1)))
    with pytest.raises(ValueError):
        decode(tiny_model, z, enc, [0, 0], [0, 0], steps=0)


def test_decode_depends_on_z(tiny_model, rng):
    enc = rng.normal(size=6)
    for _ in range(10):
        a = decode(tiny_model, rng.normal(size=3), enc, [0, 0], [1, 0]).data
        b = decode(tiny_model, rng.normal(size=3), enc, [0, 0], [1, 0]).data
        assert not np.allclose(a, b)


def test_perfect_reconstruction_has_zero_loss():
    model = DcenetModel(tiny_model_config())
    for layer in (model.recog_mu, model.recog_log_sigma, model.decoder_out):
        layer.weight.data[...] = 0.0
        layer.bias.data[...] = 0.0
    w = toy_window(obs_len=8, pred_len=12)
    w.future = np.tile(w.last_pos, (12, 1))
    assert cvae.window_loss(model, w, np.ones(3)).item() == 0.0


def test_loss_at_least_kl(tiny_model, rng):
    ws = data.extract_windows(data.synth_scene("crossing", 4, 2))
    batch = make_batch(ws, tiny_model.cfg.encoder)
    for _ in range(5):
        terms = cvae.loss(tiny_model, batch, rng.normal(size=(len(ws), 3)))
        assert terms.total.item() >= terms.kl
        assert terms.total.item() == pytest.approx(terms.recon + terms.kl, rel=1e-12)


def test_full_loss_grad_check():
    model = DcenetModel(tiny_model_config())
    w = toy_window()
    eps = np.random.default_rng(5).normal(size=3)
    f = lambda: cvae.window_loss(model, w, eps)
    assert ad.grad_check(f, model.parameters(), max_coords=12) < 1e-4


def test_loss_requires_future(tiny_model):
    w = toy_window(obs_len=8, pred_len=12)
    w.future = None
    with pytest.raises(ValueError):
        cvae.loss(tiny_model, make_batch([w], tiny_model.cfg.encoder), np.zeros((1, 3)))


def test_predict_determinism_and_prefix(tiny_model, crossing_windows):
    w = crossing_windows[0]
    a = predict(tiny_model, w, n=10, seed=7)
    b = predict(tiny_model, w, n=10, seed=7)
    assert a.trajectories.shape == (10, 12, 2)
    assert np.array_equal(a.trajectories, b.trajectories) and np.array_equal(a.scores, b.scores)
    one = predict(tiny_model, w, n=1, seed=7)
    np.testing.assert_allclose(one.trajectories[0], a.trajectories[0], rtol=0, atol=1e-12)
    assert not np.array_equal(predict(tiny_model, w, n=10, seed=8).trajectories, a.trajectories)
    with pytest.raises(ValueError):
        predict(tiny_model, w, n=0)


def test_predict_most_likely_is_argmax(tiny_model, crossing_windows):
    for p in cvae.predict_many(tiny_model, crossing_windows, n=6):
        assert p.most_likely_index == int(np.argmax(p.scores))


def test_overfitting_loss_decreases():
    model = DcenetModel(tiny_model_config())
    w = toy_window(obs_len=8, pred_len=12)
    hist = cvae.fit(model, [w], TrainConfig(iterations=400, learning_rate=5e-3, seed=1))
    blocks = np.array([h[2] for h in hist]).reshape(-1, 50).mean(axis=1)
    assert np.all(np.diff(blocks) < 0), blocks


def test_checkpoint_roundtrip(tmp_path, tiny_model):
    path = tmp_path / "m.ckpt"
    cvae.save_checkpoint(tiny_model, path)
    assert path.read_bytes()[:8] == b"DCENET01"
    other = DcenetModel(tiny_model_config(seed=99))
    cvae.load_checkpoint(other, path)
    for (n1, p1), (n2, p2) in zip(tiny_model.named_parameters(), other.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)
    cvae.save_checkpoint(other, tmp_path / "m2.ckpt")
    assert (tmp_path / "m2.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_layout(tmp_path, tiny_model):
    path = tmp_path / "m.ckpt"
    cvae.save_checkpoint(tiny_model, path)
    buf = path.read_bytes()
    name, p = next(tiny_model.named_parameters())
    n = int.from_bytes(buf[8:12], "little")
    assert buf[12 : 12 + n].decode() == name
    rank = int.from_bytes(buf[12 + n : 16 + n], "little")
    assert rank == p.ndim
    start = 16 + n + 4 * rank
    np.testing.assert_array_equal(np.frombuffer(buf[start : start + 8 * p.size], "<f8").reshape(p.shape), p.data)


def test_checkpoint_version_mismatch(tmp_path, tiny_model):
    path = tmp_path / "m.ckpt"
    cvae.save_checkpoint(tiny_model, path)
    path.write_bytes(b"DCENET02" + path.read_bytes()[8:])
    with pytest.raises(cvae.CheckpointError, match="version"):
        cvae.load_checkpoint(tiny_model, path)


def test_checkpoint_model_mismatch(tmp_path, tiny_model):
    path = tmp_path / "m.ckpt"
    cvae.save_checkpoint(tiny_model, path)
    with pytest.raises(cvae.CheckpointError):
        cvae.load_checkpoint(DcenetModel(tiny_model_config(use_maps=False)), path)
