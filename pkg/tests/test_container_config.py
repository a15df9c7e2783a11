import numpy as np
import pytest

from preqda.config import ConfigError, ExperimentConfig
from preqda.container import ContainerError, read_container, write_container


def test_container_roundtrip(tmp_path):
    path = tmp_path / "x.pqda"
    arrays = {
        "a": np.random.default_rng(0).standard_normal((4, 3)),
        "b": np.arange(7, dtype=np.int64),
        "scalar": np.float64(3.5),
    }
    write_container(path, arrays)
    out = read_container(path)
    assert set(out) == set(arrays)
    np.testing.assert_array_equal(out["a"], arrays["a"])
    np.testing.assert_array_equal(out["b"], arrays["b"])
    assert out["scalar"].reshape(-1)[0] == 3.5
    assert out["a"].dtype == np.float64
    assert out["b"].dtype == np.int64


def test_container_magic_and_version(tmp_path):
    path = tmp_path / "x.pqda"
    write_container(path, {"a": np.zeros(2)})
    raw = path.read_bytes()
    assert raw[:4] == b"PQDA"


def test_container_rejects_corrupt_magic(tmp_path):
    path = tmp_path / "bad.pqda"
    write_container(path, {"a": np.zeros(2)})
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError):
        read_container(path)


def test_container_rejects_unknown_dtype(tmp_path):
    path = tmp_path / "x.pqda"
    with pytest.raises(ContainerError):
        write_container(path, {"a": np.zeros(2, dtype=np.complex128)})


def test_config_defaults():
    cfg = ExperimentConfig()
    assert cfg.seed == 0
    assert cfg["smc.cess_threshold"] == 75.0
    assert cfg["kernel.eta"] == 1e-6
    assert cfg["kernel.lambda"] == 1e-8
    assert cfg["smc.n_particles"] == 150
    assert cfg["smc.tau"] == 100
    assert cfg.network_spec().dense_widths == (45, 44, 8)


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "exp.txt"
    path.write_text("""
# comment
seed = 7
smc.tau = 50          # inline comment
network.dense_widths = 12, 11, 8
kernel.eta = 1e-4
""")
    cfg = ExperimentConfig.from_file(path)
    assert cfg.seed == 7
    assert cfg["smc.tau"] == 50
    assert cfg["network.dense_widths"] == (12, 11, 8)
    assert cfg["kernel.eta"] == 1e-4


def test_config_unknown_key_rejected(tmp_path):
    path = tmp_path / "exp.txt"
    path.write_text("smc.tao = 50\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(path)


def test_config_bad_value_rejected(tmp_path):
    path = tmp_path / "exp.txt"
    path.write_text("smc.tau = fifty\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(path)


def test_config_digest_stable_and_sensitive(tmp_path):
    a = ExperimentConfig()
    b = ExperimentConfig()
    assert a.digest() == b.digest()
    c = ExperimentConfig({"seed": 1})
    assert c.digest() != a.digest()


def test_config_dump_parses_back(tmp_path):
    cfg = ExperimentConfig({"smc.tau": 42, "prior.family": "student_t"})
    path = tmp_path / "dump.txt"
    path.write_text(cfg.dump())
    again = ExperimentConfig.from_file(path)
    assert again.values == cfg.values


def test_typed_views_build():
    cfg = ExperimentConfig()
    assert cfg.lorenz_params().K == 8
    assert cfg.sim_config().delta_t == 0.2
    assert cfg.score_config().m == 10
    assert cfg.kernel_config().lam == 1e-8
    smc_cfg = cfg.smc_config(param_dim=4442)
    assert smc_cfg.n_particles == 150
    assert smc_cfg.prior.dim == 4442
    assert cfg.enkf_config().ensemble_size == 100
