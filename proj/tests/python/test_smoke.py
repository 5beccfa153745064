import os

import numpy as np
import pytest

import muten


def toy(n=60, classes=2, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    images = rng.uniform(0.0, 0.25, size=(n, 28, 28)).astype(np.float32)
    for i, y in enumerate(labels):
        images[i, y * 14:(y + 1) * 14, :] += 0.7
    return muten.Dataset.from_arrays(np.clip(images, 0, 1), labels.astype(np.uint8).tolist())


def test_lenet_shape():
    net = muten.make_lenet(3)
    assert net.weight_count == 107550
    assert net.neuron_count == 236
    assert net.feature_size == 84
    assert net.input_shape == [1, 28, 28]
    assert net.num_classes == 10


def test_forward_and_gradient():
    net = muten.make_lenet(1)
    x = np.random.default_rng(1).uniform(size=(1, 28, 28)).astype(np.float32)
    probs, logits, features, predicted = net.forward(x)
    assert probs.shape == (10,) and logits.shape == (10,) and features.shape == (84,)
    assert probs.sum() == pytest.approx(1.0, abs=1e-5)
    assert predicted == int(np.argmax(probs))
    grad, loss = net.input_gradient(x, 3)
    assert grad.shape == (1, 28, 28)
    assert loss > 0
    cw_grad, _ = net.input_gradient(x, 3, loss="cw")
    assert np.any(cw_grad != grad)


def test_bytes_round_trip_and_errors():
    net = muten.make_lenet(2)
    blob = net.to_bytes()
    assert blob[:4] == b"MUTN"
    back = muten.Network.from_bytes(blob)
    assert muten.same_weights(net, back)
    with pytest.raises(muten.TruncatedError):
        muten.Network.from_bytes(blob[:-10])
    bad = bytearray(blob)
    bad[4] = 9
    with pytest.raises(muten.VersionError):
        muten.Network.from_bytes(bytes(bad))
    bad = bytearray(blob)
    bad[-20] ^= 0xFF
    with pytest.raises(muten.ChecksumError):
        muten.Network.from_bytes(bytes(bad))
    assert issubclass(muten.ChecksumError, muten.FormatError)
    with pytest.raises(muten.IoError):
        muten.load_model("/nonexistent/model.muten")


def test_mutation_counts_and_involution():
    net = muten.make_lenet(4)
    m = muten.mutate(net, "GF", 0.01, 7)
    assert m.op == "GF" and m.seed == 7
    assert not muten.same_weights(m.network, net)
    assert muten.mutation_targets(net, "GF", 0.01) == [2, 24, 941, 101, 9]
    ns = muten.mutate(net, "NS", 0.03, 5)
    assert muten.same_weights(muten.mutate(ns.network, "NS", 0.03, 5).network, net)
    with pytest.raises(muten.ConfigError):
        muten.mutate(net, "XYZ", 0.01, 1)


def test_cka_and_pagerank():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10, 4))
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    assert muten.linear_cka(x, x) == pytest.approx(1.0)
    y = rng.normal(size=(10, 4))
    assert muten.linear_cka(x @ q, y) == pytest.approx(muten.linear_cka(x, y))
    s = np.full((4, 4), 0.5)
    np.fill_diagonal(s, 1.0)
    assert muten.pagerank(s) == pytest.approx([0.25] * 4)


def test_training_generation_and_ensemble_attack():
    data = toy()
    net, acc, losses = muten.train(muten.make_lenet(1), data, data, epochs=2, batch_size=8)
    assert acc > 0.9 and len(losses) == 2
    g = muten.greedy_generate(net, data, n=2, mode="random", seed=3)
    assert len(g["mutants"]) == 2
    assert g["similarity"].shape == (2, 2)
    ens = muten.EnsembleModel(net, [m.network for m in g["mutants"]])
    assert ens.member_count == 3
    victim = muten.SingleModel(net)
    x = data.images[0]
    r = muten.attack(ens, victim, x, data.labels[0], "PGD", 0.3, seed=1)
    adv = r["adversarial"]
    assert np.max(np.abs(adv.reshape(-1) - x.reshape(-1))) <= 0.3 + 1e-7
    assert adv.min() >= 0 and adv.max() <= 1
    assert isinstance(r["success"], bool)


def test_csv_header():
    assert muten.CSV_HEADER == "attack,param,mutant_count,mode,repeat,success_rate,mean_time_s,baseline"


@pytest.mark.skipif(not os.path.exists(os.path.join(os.environ.get("MUTEN_MNIST_DIR", ""), "t10k-labels-idx1-ubyte")),
                    reason="MNIST not available")
def test_mnist_loader():
    test = muten.load_dataset(os.environ["MUTEN_MNIST_DIR"], "test")
    assert len(test) == 10000 and test.rows == 28
    sub = test.subset([0, 1, 2])
    assert sub.images.shape == (3, 28, 28)
