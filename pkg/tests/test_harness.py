import csv
import json
import math
import struct
import zlib
from pathlib import Path

import numpy as np
import pytest

from samlab.errors import ChecksumError, ConfigError, MagicError, NonFiniteError, TruncatedError, VersionError
from samlab.harness import ExperimentConfig, best_from_metrics, load_config, measure_overhead, run_experiment, save_config, sweep
from samlab.harness.cli import main
from samlab.harness.io import (
    SWEEP_FIELDS,
    decode_checkpoint,
    encode_checkpoint,
    format_float,
    load_checkpoint,
    read_csv,
    save_checkpoint,
)
from samlab.harness.runner import TIMING_COLUMNS, build_data, evaluate
from samlab.models import loss_graph
from samlab.optim import OptimizerConfig
from samlab.sam import METRICS_FIELDS, SamConfig
from samlab.tensor import ParamVector

FIXTURE = Path(__file__).parent / "fixtures" / "checkpoint_v1.bin"

METRICS_HEADER = "step,train_loss,eval_loss,eval_accuracy,ascent_grad_norm,adv_loss_gap,step_wall_ms,skipped_ascent_count"
SWEEP_HEADER = ("axis,value,seed,sam_enabled,best_eval_accuracy,best_eval_accuracy_step,best_eval_loss,"
                "best_eval_loss_step,final_eval_accuracy,final_eval_loss,mean_step_wall_ms,status,error")


def tiny_config(tmp_path, **kw):
    base = dict(
        task={"kind": "spirals", "n_per_class": 30, "n_test_per_class": 30},
        model={"kind": "mlp", "layer_sizes": [2, 6, 2]},
        optimizer=OptimizerConfig("adafactor", 1e-2),
        sam=SamConfig(),
        batch_size=16,
        total_steps=20,
        eval_every=5,
        output_dir=str(tmp_path / "run"),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def hand_encoded(entries):
    """Checkpoint bytes assembled field by field, independent of the encoder."""
    out = bytearray(b"SAMLAB01")
    out += struct.pack("<I", len(entries))
    for name, arr in sorted(entries.items()):
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            out += struct.pack("<I", d)
        for x in arr.ravel():
            out += struct.pack("<d", x)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


FIXTURE_VALUES = {
    "layer.w": np.array([[1.5, -2.0, 0.25], [math.pi, -0.0, 5e-324]]),
    "layer.b": np.array([0.1, -1e300]),
    "ünï": np.array([[[42.0]]]),
}


class TestCheckpoint:
    def test_fixture_loads_known_values(self):
        p = load_checkpoint(FIXTURE)
        assert p.names == ("layer.b", "layer.w", "ünï")
        for name, arr in FIXTURE_VALUES.items():
            assert p[name].shape == arr.shape
            assert p[name].tobytes() == arr.tobytes()

    def test_fixture_matches_hand_encoding(self):
        assert FIXTURE.read_bytes() == hand_encoded(FIXTURE_VALUES)

    def test_save_load_save_byte_identical(self, tmp_path):
        p = ParamVector({"a": np.random.default_rng(0).normal(size=(3, 4)), "b": np.array([-0.0, np.inf])})
        first = save_checkpoint(p, tmp_path / "a.bin").read_bytes()
        again = save_checkpoint(load_checkpoint(tmp_path / "a.bin"), tmp_path / "b.bin").read_bytes()
        assert first == again
        assert load_checkpoint(tmp_path / "b.bin") == p

    def test_bad_magic(self):
        blob = bytearray(FIXTURE.read_bytes())
        blob[0:6] = b"NOTSAM"
        with pytest.raises(MagicError):
            decode_checkpoint(bytes(blob))

    def test_bad_version(self):
        blob = bytearray(FIXTURE.read_bytes())
        blob[6:8] = b"02"
        with pytest.raises(VersionError):
            decode_checkpoint(bytes(blob))

    def test_checksum(self):
        blob = bytearray(FIXTURE.read_bytes())
        blob[-1] ^= 0xFF
        with pytest.raises(ChecksumError):
            decode_checkpoint(bytes(blob))

    def test_corrupted_payload_is_checksum_error(self):
        blob = bytearray(FIXTURE.read_bytes())
        blob[40] ^= 0x01
        with pytest.raises(ChecksumError):
            decode_checkpoint(bytes(blob))

    @pytest.mark.parametrize("cut", [10, 30, 60, 100])
    def test_truncated(self, cut):
        blob = FIXTURE.read_bytes()[:cut]
        with pytest.raises(TruncatedError):
            decode_checkpoint(blob + struct.pack("<I", zlib.crc32(blob)))

    def test_distinct_error_types(self):
        kinds = {MagicError, VersionError, TruncatedError, ChecksumError}
        assert len(kinds) == 4 and not any(issubclass(a, b) for a in kinds for b in kinds if a is not b)

    def test_empty_vector(self):
        assert decode_checkpoint(encode_checkpoint(ParamVector({}))).total_len == 0


class TestCsv:
    def test_metrics_golden_header(self):
        assert ",".join(METRICS_FIELDS) == METRICS_HEADER

    def test_sweep_golden_header(self):
        assert ",".join(SWEEP_FIELDS) == SWEEP_HEADER

    def test_float_format(self):
        assert format_float(0.1) == "0.10000000000000001"
        assert format_float(None) == ""
        assert format_float(3) == "3"
        assert format_float(True) == "1"
        assert float(format_float(math.pi)) == math.pi


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = tiny_config(tmp_path)
        path = save_config(cfg, tmp_path / "c.json")
        assert load_config(path).to_dict() == cfg.to_dict()
        assert json.loads(path.read_text())["spec_version"] == 1

    def test_wrong_version(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"spec_version": 2, "task": {"kind": "spirals"}, "model": {"kind": "mlp"}})

    def test_unknown_key(self, tmp_path):
        d = tiny_config(tmp_path).to_dict()
        d["learning_rate"] = 0.1
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(d)

    @pytest.mark.parametrize(
        "kw",
        [
            {"batch_size": 0},
            {"eval_every": 0},
            {"checkpoint_every": 7},
            {"sam": SamConfig(ascent_size=32)},
            {"task": {"kind": "mnist"}},
            {"task": {"kind": "spirals", "subsample_rate": 0.0}},
            {"model": {"kind": "mlp", "layer_sizes": [2]}},
        ],
    )
    def test_invalid(self, tmp_path, kw):
        with pytest.raises(ConfigError):
            tiny_config(tmp_path, **kw)

    def test_seed_fallbacks(self, tmp_path):
        cfg = tiny_config(tmp_path, run_seed=9)
        assert cfg.model_spec().init_seed == 9 and cfg.subsample_seed == 9


def _strip_timing(path):
    header, rows = read_csv(path)
    return [{k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in rows]


class TestRun:
    def test_zero_steps(self, tmp_path):
        cfg = tiny_config(tmp_path, total_steps=0)
        res = run_experiment(cfg)
        assert res.metrics_path.read_text() == METRICS_HEADER + "\n"
        init = load_checkpoint(tmp_path / "run" / "ckpt_init.bin")
        assert init == res.params

    def test_outputs_and_manifest(self, tmp_path):
        cfg = tiny_config(tmp_path, checkpoint_every=10)
        res = run_experiment(cfg)
        out = tmp_path / "run"
        for name in ("ckpt_init.bin", "ckpt_final.bin", "ckpt_best_eval_accuracy.bin", "ckpt_best_eval_loss.bin",
                     "ckpt_step0000010.bin", "ckpt_step0000020.bin", "metrics.csv", "run.json"):
            assert (out / name).exists(), name
        manifest = json.loads(res.manifest_path.read_text())
        assert manifest["seed"] == 0 and manifest["config"] == cfg.to_dict()
        assert manifest["version"].startswith("samlab")
        assert load_checkpoint(out / "ckpt_final.bin") == res.params

    def test_determinism(self, tmp_path):
        a = run_experiment(tiny_config(tmp_path), tmp_path / "a")
        b = run_experiment(tiny_config(tmp_path), tmp_path / "b")
        assert _strip_timing(a.metrics_path) == _strip_timing(b.metrics_path)
        assert a.params == b.params

    def test_steps_increase_and_eval_cadence(self, tmp_path):
        res = run_experiment(tiny_config(tmp_path, total_steps=12))
        _, rows = read_csv(res.metrics_path)
        steps = [int(r["step"]) for r in rows]
        assert steps == list(range(1, 13))
        assert [int(r["step"]) for r in rows if r["eval_accuracy"]] == [5, 10, 12]

    def test_best_equals_post_hoc_scan(self, tmp_path):
        res = run_experiment(tiny_config(tmp_path, total_steps=40))
        assert best_from_metrics(res.metrics_path) == res.best
        best_step = res.best["eval_loss"]["step"]
        # the saved best checkpoint is the one evaluated at that step
        params = load_checkpoint(tmp_path / "run" / "ckpt_best_eval_loss.bin")
        cfg = tiny_config(tmp_path)
        _, test = build_data(cfg)
        loss, _ = evaluate(cfg.model_spec(), loss_graph(cfg.model_spec()), params, test)
        assert loss == res.best["eval_loss"]["value"] and best_step > 0

    def test_sam_disabled_matches_rho_zero(self, tmp_path):
        a = run_experiment(tiny_config(tmp_path, sam=SamConfig(enabled=False)), tmp_path / "a")
        b = run_experiment(tiny_config(tmp_path, sam=SamConfig(rho=0.0)), tmp_path / "b")
        assert a.params == b.params

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_carries_step(self, tmp_path):
        cfg = tiny_config(tmp_path, optimizer=OptimizerConfig("sgd", 1e200), sam=SamConfig(enabled=False))
        with pytest.raises(NonFiniteError) as exc:
            run_experiment(cfg)
        assert exc.value.context["step"] >= 1


class TestSweep:
    def test_single_cell_matches_run(self, tmp_path):
        cfg = tiny_config(tmp_path)
        res = sweep(cfg, "rho", [0.15], [0], out_dir=tmp_path / "sw")
        run = run_experiment(cfg, tmp_path / "direct")
        row = res.rows[0]
        assert row["best_eval_accuracy"] == run.best["eval_accuracy"]["value"]
        assert row["final_eval_loss"] == run.final["eval_loss"]
        assert _strip_timing(tmp_path / "sw" / "rho=0.15" / "seed=0" / "sam" / "metrics.csv") == _strip_timing(run.metrics_path)

    def test_subsample_schema(self, tmp_path):
        cfg = tiny_config(tmp_path, total_steps=5, task={"kind": "spirals", "n_per_class": 100})
        rates = [0.02, 0.05, 0.1, 0.2, 0.4, 0.8]
        res = sweep(cfg, "subsample", rates, [0, 1], out_dir=tmp_path / "sw")
        header, rows = read_csv(res.path)
        assert ",".join(header) == SWEEP_HEADER
        assert len(rows) == 12
        assert [float(r["value"]) for r in rows[::2]] == rates
        assert all(r["status"] == "ok" for r in rows)

    def test_baseline_arm_and_order(self, tmp_path):
        cfg = tiny_config(tmp_path, total_steps=5)
        res = sweep(cfg, "m", [2, 1], [1, 0], out_dir=tmp_path / "sw", include_baseline=True)
        keys = [(r["value"], r["seed"], r["sam_enabled"]) for r in res.rows]
        assert keys == [(1, 0, True), (1, 0, False), (1, 1, True), (1, 1, False),
                        (2, 0, True), (2, 0, False), (2, 1, True), (2, 1, False)]

    def test_failing_cell_recorded(self, tmp_path):
        cfg = tiny_config(tmp_path, total_steps=5)
        res = sweep(cfg, "ascent", [4, 64], [0], out_dir=tmp_path / "sw")
        status = {r["value"]: r["status"] for r in res.rows}
        assert status == {4: "ok", 64: "error"}
        assert "ConfigError" in res.rows[1]["error"]

    def test_unknown_axis(self, tmp_path):
        with pytest.raises(ConfigError):
            sweep(tiny_config(tmp_path), "lr", [0.1], [0])


def test_overhead_control_is_unity(tmp_path):
    cfg = tiny_config(
        tmp_path,
        task={"kind": "seq_lookup", "n": 500, "vocab": 16, "seq_len": 5, "n_test": 50},
        model={"kind": "transformer", "vocab_size": 16, "model_dim": 32, "num_heads": 2, "ff_dim": 64,
               "max_seq_len": 5, "num_layers": 2},
        batch_size=128,
        sam=SamConfig(enabled=False),
    )
    res = measure_overhead(cfg, steps=200, warmup=20)
    assert res.ratio == pytest.approx(1.0, abs=0.05)
    assert not res.timer_resolution_warning


class TestCli:
    @pytest.fixture
    def config_path(self, tmp_path):
        cfg = tiny_config(tmp_path)
        return save_config(cfg, tmp_path / "config.json")

    def test_train_then_probe_and_slice(self, tmp_path, config_path, capsys):
        assert main(["train", "--config", str(config_path), "--seed", "3", "--rho", "0.05"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["final"]["step"] == 20
        run = tmp_path / "run"
        saved = load_config(run / "config.json")
        assert saved.run_seed == 3 and saved.sam.rho == 0.05
        ckpt = str(run / "ckpt_final.bin")
        assert main(["sharpness", "--checkpoint", ckpt, "--config", str(config_path), "--steps", "3",
                     "--restarts", "2"]) == 0
        report = json.loads((run / "sharpness.json").read_text())
        assert report["result"]["worst_case_increase"] >= 0
        assert main(["slice", "--checkpoint", ckpt, "--config", str(config_path), "--half-width", "0.5",
                     "--grid", "3"]) == 0
        with open(run / "slice.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["alpha", "beta", "loss"] and len(rows) == 10

    def test_no_sam_flag(self, tmp_path, config_path):
        assert main(["train", "--config", str(config_path), "--no-sam"]) == 0
        _, rows = read_csv(tmp_path / "run" / "metrics.csv")
        assert all(r["ascent_grad_norm"] == "" for r in rows)

    def test_sweep_and_overhead(self, tmp_path, config_path):
        assert main(["sweep", "--config", str(config_path), "--axis", "rho", "--values", "0.1", "0.2",
                     "--seeds", "0"]) == 0
        _, rows = read_csv(tmp_path / "run" / "sweep_rho.csv")
        assert [r["value"] for r in rows] == ["0.10000000000000001", "0.20000000000000001"]
        assert (tmp_path / "run" / "sweep.json").exists()
        assert main(["overhead", "--config", str(config_path), "--steps", "5", "--warmup", "1"]) == 0
        assert json.loads((tmp_path / "run" / "overhead.json").read_text())["result"]["steps"] == 5

    def test_validation_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"spec_version": 1, "task": {"kind": "spirals"}, "model": {"kind": "cnn"}}))
        assert main(["train", "--config", str(bad)]) == 1
        assert main(["train"]) == 1
        assert main(["train", "--config", str(tmp_path / "missing.json")]) == 1
        bad.write_text("{not json")
        assert main(["train", "--config", str(bad)]) == 1

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_runtime_exit_code(self, tmp_path, config_path):
        broken = tmp_path / "broken.bin"
        broken.write_bytes(b"SAMLAB01" + b"\x00" * 3)
        assert main(["sharpness", "--checkpoint", str(broken), "--config", str(config_path)]) == 2
        cfg = load_config(config_path).with_overrides(**{"optimizer.learning_rate": 1e200, "optimizer.kind": "sgd"})
        path = save_config(cfg, tmp_path / "diverge.json")
        assert main(["train", "--config", str(path)]) == 2
