"""Acceptance criteria, one test per criterion.

Each test carries a ``criterion`` marker; the conftest prints one PASS/FAIL
line per criterion in the terminal summary.
"""

import csv
import json
import math
import time

import numpy as np
import pytest
import torch

from wav2pix.audio import Waveform, load_wav, pre_emphasis, write_wav
from wav2pix.checkpoint import read_container
from wav2pix.cli import main
from wav2pix.dataset import batch_iterator, make_synthetic_fixture
from wav2pix.evaluation import generate_for_manifest, per_identity_separation
from wav2pix.gradcheck import finite_difference_gradcheck, tiny_model_config
from wav2pix.networks import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    ModelConfig,
    SpeechEncoder,
    conv1d_output_length,
    init_parameters,
    spectral_normalize,
)
from wav2pix.objectives import identity_ce_loss, lsgan_d_loss, lsgan_g_loss
from wav2pix.synthesis import load_model
from wav2pix.trainer import (
    TrainConfig,
    d_substep,
    init_state,
    load_checkpoint,
    save_checkpoint,
    train,
    train_step,
)


def _report(n, ok, detail):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    return ok


@pytest.mark.criterion(1, "shape suite")
def test_01_shapes():
    t0 = time.perf_counter()
    enc = init_parameters(SpeechEncoder(ModelConfig.for_size().encoder), 0)
    x = torch.rand(3, 16384) * 2 - 1
    with torch.no_grad():
        feats, emb = enc.features(x), enc(x)
        g64 = init_parameters(Generator(GeneratorConfig(num_upsample=4)), 1)(emb)
        g128 = init_parameters(Generator(GeneratorConfig(num_upsample=5)), 2)(emb)
        scores = init_parameters(Discriminator(DiscriminatorConfig()), 3)(g64, emb)
    elapsed = time.perf_counter() - t0
    ok = (feats.shape == (3, 1024, 4) and emb.shape == (3, 128) and g64.shape == (3, 3, 64, 64)
          and g128.shape == (3, 3, 128, 128) and scores.shape == (3,) and elapsed < 60)
    assert _report(1, ok, f"{elapsed:.2f}s")


@pytest.mark.criterion(2, "decimation suite")
def test_02_decimation():
    ok = True
    for n in (4096, 8192, 16384):
        length = n
        for _ in range(6):
            nxt = conv1d_output_length(length, 15, 4, 7)
            ok &= nxt * 4 == length
            length = nxt
        ok &= n // length == 4096
    assert _report(2, ok, "per-layer /4, overall /4096")


@pytest.mark.criterion(3, "loss oracle suite")
def test_03_losses():
    d = lambda r, f: lsgan_d_loss(torch.tensor(r, dtype=torch.float64), torch.tensor(f, dtype=torch.float64)).item()
    g = lambda f: lsgan_g_loss(torch.tensor(f, dtype=torch.float64)).item()
    # hand-evaluated: 1/2*mean((r-1)^2) + 1/2*mean(f^2) and 1/2*mean((f-1)^2)
    table = [
        (d([1.0], [0.0]), 0.0),
        (d([0.5], [0.5]), 0.25),
        (d([1.0, 0.0], [0.0, 0.0]), 0.25),
        (g([1.0]), 0.0),
        (g([0.5]), 0.125),
        (g([0.0]), 0.5),
    ]
    worst = max(abs(got - want) for got, want in table)
    ce = [abs(identity_ce_loss(torch.zeros(4, K, dtype=torch.float64), torch.arange(4) % K).item() - math.log(K))
          for K in (2, 4, 10)]
    ok = worst <= 1e-12 and max(ce) <= 1e-9
    assert _report(3, ok, f"max loss error {worst:.1e}, max CE error {max(ce):.1e}")


@pytest.mark.criterion(4, "finite-difference gradient check")
def test_04_gradcheck():
    t0 = time.perf_counter()
    err = finite_difference_gradcheck(seed=0, epsilon=1e-4)
    elapsed = time.perf_counter() - t0
    ok = err < 1e-4 and elapsed < 300
    assert _report(4, ok, f"max relative error {err:.2e}, {elapsed:.1f}s")


@pytest.mark.criterion(5, "gradient isolation")
def test_05_isolation(fixture_4x8):
    config = TrainConfig(batch_size=8, seed=0)
    state = init_state(config, fixture_4x8.identities)
    batches = list(batch_iterator(fixture_4x8, 8, seed=0, epoch=0))
    for i in range(10):
        train_step(state, batches[i % len(batches)])
    m = state.model
    enc_before = {k: v.clone() for k, v in m.encoder.state_dict().items()}
    gen_before = {k: v.clone() for k, v in m.generator.state_dict().items()}
    d_before = {k: v.clone() for k, v in m.discriminator.state_dict().items()}
    for i, (chunks, images, _) in enumerate(batches):
        d_substep(state, torch.as_tensor(chunks), torch.as_tensor(images), dropout_seed=100 + i)
    same = all(torch.equal(enc_before[k], v) for k, v in m.encoder.state_dict().items())
    same &= all(torch.equal(gen_before[k], v) for k, v in m.generator.state_dict().items())
    moved = not all(torch.equal(d_before[k], v) for k, v in m.discriminator.state_dict().items())
    assert _report(5, same and moved, f"encoder+generator bitwise unchanged: {same}; D updated: {moved}")


@pytest.mark.criterion(6, "spectral norm within 1e-3 after 50 iterations")
def test_06_spectral_norm():
    gen = torch.Generator().manual_seed(0)
    errors = []
    for _ in range(20):
        w = torch.randn(64, 4, 4, 4, generator=gen, dtype=torch.float64) * 0.02
        u = torch.randn(64, generator=gen, dtype=torch.float64)
        out, _, _ = spectral_normalize(w, u / u.norm(), n_iter=50)
        top = np.linalg.svd(out.reshape(64, -1).numpy(), compute_uv=False)[0]
        errors.append(abs(top - 1.0))
    errors = np.array(errors)
    n_ok = int((errors <= 1e-3).sum())
    ok = n_ok == 20
    assert _report(6, ok, f"{n_ok}/20 kernels within 1e-3, worst {errors.max():.2e}")


@pytest.mark.slow
@pytest.mark.criterion(7, "overfit smoke test")
def test_07_overfit(tmp_path):
    steps = 400
    manifest = make_synthetic_fixture(4, 8, tmp_path / "fx", seed=0)
    config = TrainConfig(batch_size=8, max_steps=steps, seed=0, checkpoint_every=steps)
    t0 = time.perf_counter()
    ckpt = train(config, manifest, tmp_path / "run")
    elapsed = time.perf_counter() - t0
    with open(tmp_path / "run" / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    finite = len(rows) == steps and all(math.isfinite(float(r["g_adv"])) for r in rows)

    model = load_model(ckpt)
    images, labels, embeddings = generate_for_manifest(model, manifest, manifest.chunk_samples, per_record=2, seed=0)
    with torch.no_grad():
        logits = model.classifier(torch.as_tensor(embeddings))
    head_acc = float((logits.argmax(1).numpy() == labels).mean())
    sep = per_identity_separation(images, labels)
    ok = head_acc >= 0.95 and finite and sep >= 0.9 and len(images) == 64 and elapsed < 1800
    assert _report(7, ok, f"{steps} steps in {elapsed:.0f}s; head accuracy {head_acc:.3f}; "
                          f"g_adv finite {finite}; separation {sep:.3f} on {len(images)} images")


@pytest.mark.criterion(8, "pipeline round-trips")
def test_08_roundtrips(tmp_path):
    ints = np.random.default_rng(0).integers(-32768, 32768, size=4000)
    w = Waveform(ints / 32768.0, 16000)
    write_wav(tmp_path / "g.wav", w)
    wav_ok = np.array_equal(load_wav(tmp_path / "g.wav").samples, w.samples)

    x = np.random.default_rng(1).uniform(-1, 1, 16000)
    y = pre_emphasis(Waveform(x, 16000)).samples
    rec = np.empty_like(y)
    rec[0] = y[0]
    for t in range(1, len(y)):
        rec[t] = y[t] + 0.95 * rec[t - 1]
    emph_err = float(np.max(np.abs(rec - x)))

    state = init_state(TrainConfig(batch_size=2, chunk_samples=4096), ["a", "b", "c"], tiny_model_config())
    rng = np.random.default_rng(2)
    train_step(state, (rng.uniform(-1, 1, (2, 4096)).astype(np.float32),
                       rng.uniform(-1, 1, (2, 3, 16, 16)).astype(np.float32), np.array([0, 1])))
    save_checkpoint(state, tmp_path / "a.ckpt")
    save_checkpoint(load_checkpoint(tmp_path / "a.ckpt"), tmp_path / "b.ckpt")
    _, a = read_container(tmp_path / "a.ckpt")
    _, b = read_container(tmp_path / "b.ckpt")
    ckpt_ok = a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
    ckpt_ok &= (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    make_synthetic_fixture(2, 2, tmp_path / "f1", seed=3)
    make_synthetic_fixture(2, 2, tmp_path / "f2", seed=3)
    files = sorted(p.relative_to(tmp_path / "f1") for p in (tmp_path / "f1").rglob("*") if p.is_file())
    fix_ok = all((tmp_path / "f1" / p).read_bytes() == (tmp_path / "f2" / p).read_bytes() for p in files)

    ok = wav_ok and emph_err < 1e-6 and ckpt_ok and fix_ok
    assert _report(8, ok, f"wav {wav_ok}, pre-emphasis error {emph_err:.1e}, checkpoint {ckpt_ok}, fixture {fix_ok}")


@pytest.mark.slow
@pytest.mark.criterion(9, "chunk-length ablation harness")
def test_09_ablation(tmp_path, small_fixture, capsys):
    manifest = small_fixture.root / "manifest.jsonl"
    expected = {300: 8192, 700: 12288, 1000: 16384}
    keys = {"landmark_rate", "identity_accuracy", "separation", "n_images", "chunk_ms", "image_size"}
    details, ok = [], True
    for ms, samples in expected.items():
        run = tmp_path / f"ms{ms}"
        code = main(["train", "--manifest", str(manifest), "--out", str(run), "--chunk-ms", str(ms),
                     "--max-steps", "2", "--batch-size", "2"])
        ckpt = json.loads(capsys.readouterr().out)["checkpoint"] if code == 0 else None
        ok &= code == 0
        if ckpt is None:
            continue
        meta, _ = read_container(ckpt)
        ok &= meta["model_config"]["encoder"]["input_samples"] == samples
        code = main(["evaluate", "--checkpoint", ckpt, "--manifest", str(manifest), "--chunk-ms", str(ms)])
        report = json.loads(capsys.readouterr().out) if code == 0 else {}
        ok &= code == 0 and set(report) == keys and report["chunk_ms"] == ms
        details.append(f"{ms}ms->{meta['model_config']['encoder']['input_samples']}")
    assert _report(9, ok, ", ".join(details))


@pytest.mark.slow
@pytest.mark.criterion(10, "training determinism")
def test_10_determinism(tmp_path, small_fixture, capsys):
    manifest = str(small_fixture.root / "manifest.jsonl")
    for name in ("a", "b"):
        assert main(["train", "--manifest", manifest, "--out", str(tmp_path / name),
                     "--seed", "7", "--max-steps", "50", "--batch-size", "2"]) == 0
    capsys.readouterr()
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    ok = a == b and len(a.splitlines()) == 51
    assert _report(10, ok, f"{len(a.splitlines()) - 1} rows, identical: {a == b}")
