import struct

import numpy as np
import pytest

from egorec.diffcore import Tape, Tensor, backward
from egorec.harness import (
    Adam,
    InteractionModel,
    TrainConfig,
    ablate,
    evaluate,
    evaluate_clips,
    load_checkpoint,
    load_config,
    load_model,
    parse_config,
    parse_variants,
    run_phase,
    save_checkpoint,
    total_loss,
    train,
    write_report,
)
from egorec.harness.cli import main as cli_main
from egorec.synthdata import GenConfig, generate_dataset, load_manifest, load_split

TINY_GEN = GenConfig(height=16, width=32, length=6, area_range=(0.08, 0.14))


def tiny_config(**kw) -> TrainConfig:
    base = dict(frame_height=16, frame_width=32, num_frames=4, num_classes=4,
                channels=8, motion_dim=6, proj_dim=8, hidden_dim=8,
                max_displacement=2, batch_size=2, lr=1e-3,
                epochs_attention=1, epochs_motion=1, epochs_interaction=1,
                epochs_joint=1, seed=3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds") / "tiny"
    generate_dataset(root, clips_per_class=3, variant="standard", seed=1, config=TINY_GEN)
    return root


class TestConfig:
    def test_round_trip(self):
        cfg = tiny_config()
        back = parse_config(cfg.to_text())
        assert back == cfg

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# comment\n\nlr=0.01  # trailing\nseed=9\n")
        assert cfg.lr == 0.01 and cfg.seed == 9

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown key"):
            parse_config("learning_rate=0.1\n")

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(alpha=-1.0)


class TestTotalLoss:
    def scalars(self, *vals):
        return [Tensor(np.array(v, dtype=np.float64)) for v in vals]

    def test_degenerate_weights(self):
        cfg = tiny_config(alpha=0.0, beta=0.0, gamma=0.0)
        total, bundle = total_loss(cfg, *self.scalars(1.7, 2.0, 3.0, 4.0))
        assert total.item() == pytest.approx(1.7)
        assert bundle.l_final == pytest.approx(1.7)

    def test_unit_weights_sum(self):
        cfg = tiny_config(alpha=1.0, beta=1.0, gamma=1.0)
        total, bundle = total_loss(cfg, *self.scalars(1.0, 2.0, 3.0, 4.0))
        assert total.item() == pytest.approx(10.0)
        assert bundle.l_final == pytest.approx(10.0)

    def test_default_weights(self):
        cfg = TrainConfig()  # alpha=1, beta=1, gamma=0.1
        total, bundle = total_loss(cfg, *self.scalars(1.0, 2.0, 3.0, 4.0))
        assert total.item() == pytest.approx(6.4)
        assert bundle.l_final == pytest.approx(6.4)

    def test_decomposition_identity_exact(self):
        cfg = tiny_config(alpha=0.35, beta=1.25, gamma=0.05)
        vals = (0.731, 1.217, 0.454, 0.129)
        _, bundle = total_loss(cfg, *self.scalars(*vals))
        expect = vals[0] + cfg.alpha * vals[1] + cfg.beta * vals[2] + cfg.gamma * vals[3]
        assert bundle.l_final == expect


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "a.w": rng.normal(size=(3, 4)).astype(np.float32),
            "b/b": rng.normal(size=(5,)).astype(np.float32),
            "opt/m/a.w": rng.normal(size=(3, 4)).astype(np.float32),
        }
        path = tmp_path / "ck.bin"
        save_checkpoint(path, tensors, "lr=0.001\nseed=4\n", "1c")
        table, cfg_text, stage = load_checkpoint(path)
        assert stage == "1c"
        assert parse_config(cfg_text).lr == 0.001
        for k, v in tensors.items():
            assert table[k].tobytes() == v.tobytes()

    def test_little_endian_layout(self, tmp_path):
        arr = np.array([1.5, -2.0], dtype=np.float32)
        path = tmp_path / "ck.bin"
        save_checkpoint(path, {"x": arr}, "", "2")
        raw = path.read_bytes()
        assert raw[:4] == b"DDRM"
        version, count = struct.unpack("<II", raw[4:12])
        assert version == 1 and count == 3  # x + meta/config + meta/stage
        (name_len,) = struct.unpack("<H", raw[12:14])
        assert raw[14:14 + name_len] == b"x"
        off = 14 + name_len
        (rank,) = struct.unpack("<B", raw[off:off + 1])
        assert rank == 1
        (dim,) = struct.unpack("<I", raw[off + 1:off + 5])
        assert dim == 2
        vals = struct.unpack("<2f", raw[off + 5:off + 13])
        assert vals == (1.5, -2.0)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 8)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)


class TestAdam:
    def test_descends_quadratic(self):
        import egorec.diffcore as dc
        x = Tensor(np.array([5.0, -3.0], dtype=np.float32), requires_grad=True)
        opt = Adam([("x", x)], lr=0.1)
        for _ in range(300):
            with Tape() as tape:
                loss = dc.sum_(x * x)
            opt.zero_grad()
            backward(tape, loss)
            opt.step()
        assert np.abs(x.data).max() < 1e-2

    def test_none_grad_params_untouched(self):
        x = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
        y = Tensor(np.array([3.0], dtype=np.float32), requires_grad=True)
        before = y.data.tobytes()
        opt = Adam([("x", x), ("y", y)], lr=0.1, weight_decay=0.1)
        x.grad = np.ones_like(x.data)
        opt.step()
        assert y.data.tobytes() == before
        assert x.data.tobytes() != np.array([1.0, 2.0], np.float32).tobytes()

    def test_state_round_trip(self):
        x = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        opt = Adam([("x", x)], lr=0.05)
        x.grad = np.array([0.5], np.float32)
        opt.step()
        state = opt.state_arrays()
        opt2 = Adam([("x", x)], lr=0.05)
        opt2.load_state_arrays(state)
        assert opt2.step_count == 1
        np.testing.assert_array_equal(opt2.m["x"], opt.m["x"])


class TestTraining:
    def test_stage1_then_2_and_determinism(self, tiny_dataset, tmp_path):
        manifest = load_manifest(tiny_dataset)
        cfg = tiny_config(epochs_joint=2)
        ck1 = tmp_path / "a.ckpt"
        ck2 = tmp_path / "b.ckpt"
        train(manifest, cfg, "all", ck1)
        train(manifest, cfg, "all", ck2)
        assert ck1.read_bytes() == ck2.read_bytes()

    def test_freeze_contract_phase_a(self, tiny_dataset):
        manifest = load_manifest(tiny_dataset)
        cfg = tiny_config()
        clips = load_split(manifest, "train")
        rng = np.random.default_rng(cfg.seed)
        model = InteractionModel(cfg, rng)
        before = {n: p.data.tobytes() for n, p in model.all_named()}
        run_phase(model, "1a", clips, cfg, rng)
        changed = {n for n, p in model.all_named() if p.data.tobytes() != before[n]}
        assert changed  # the decoder actually trained
        assert all(n.startswith("attention.") for n in changed)

    def test_freeze_contract_phase_b(self, tiny_dataset):
        manifest = load_manifest(tiny_dataset)
        cfg = tiny_config()
        clips = load_split(manifest, "train")
        rng = np.random.default_rng(cfg.seed)
        model = InteractionModel(cfg, rng)
        before = {n: p.data.tobytes() for n, p in model.all_named()}
        run_phase(model, "1b", clips, cfg, rng)
        changed = {n for n, p in model.all_named() if p.data.tobytes() != before[n]}
        assert changed and all(n.startswith("motion.") for n in changed)

    def test_stage2_requires_checkpoint(self, tiny_dataset, tmp_path):
        manifest = load_manifest(tiny_dataset)
        with pytest.raises(FileNotFoundError):
            train(manifest, tiny_config(), "2", tmp_path / "missing.ckpt")

    def test_eval_round_trip_bitwise(self, tiny_dataset, tmp_path):
        manifest = load_manifest(tiny_dataset)
        cfg = tiny_config()
        ck = tmp_path / "rt.ckpt"
        state = train(manifest, cfg, "1", ck)
        direct = evaluate_clips(state.model, load_split(manifest, "test"), cfg)
        reloaded = evaluate(manifest, ck, "test")
        assert direct.accuracy == reloaded.accuracy
        np.testing.assert_array_equal(direct.confusion, reloaded.confusion)
        assert direct.mean_loss == reloaded.mean_loss

    def test_untrained_accuracy_near_chance(self, tiny_dataset):
        manifest = load_manifest(tiny_dataset)
        cfg = tiny_config()
        model = InteractionModel(cfg, np.random.default_rng(0))
        rep = evaluate_clips(model, load_split(manifest, "test"), cfg)
        assert 0.0 <= rep.accuracy <= 1.0
        assert rep.confusion.sum() == rep.count == 4

    def test_wrong_class_count_rejected(self, tiny_dataset, tmp_path):
        manifest = load_manifest(tiny_dataset)
        with pytest.raises(ValueError, match="K="):
            train(manifest, tiny_config(num_classes=2), "1", tmp_path / "x.ckpt")


class TestAblate:
    def test_parse_variants(self):
        assert parse_variants("ego,full") == [("ego", "both"), ("full", "both")]
        assert parse_variants("exo:motion") == [("exo", "motion")]
        with pytest.raises(ValueError):
            parse_variants("bogus")
        with pytest.raises(ValueError):
            parse_variants("ego:bogus")

    def test_two_variants_two_rows(self, tiny_dataset, tmp_path):
        manifest = load_manifest(tiny_dataset)
        cfg = tiny_config()
        rows = ablate(manifest, cfg, parse_variants("ego,full"))
        assert len(rows) == 2
        assert {r.variant for r in rows} == {"ego", "full"}
        out = tmp_path / "report.tsv"
        write_report(out, rows)
        lines = out.read_text().splitlines()
        assert lines[0] == "variant\tfeatures\taccuracy\tseed"
        assert len(lines) == 3


class TestCli:
    def test_full_cli_flow(self, tmp_path, capsys):
        data = tmp_path / "data"
        # CLI generates at the default desk frame size; keep it tiny in count
        rc = cli_main(["gen", "--out", str(data), "--classes", "4",
                       "--clips-per-class", "2", "--variant", "standard",
                       "--seed", "11"])
        assert rc == 0
        cfg = tiny_config(frame_height=32, frame_width=64, num_frames=4,
                          channels=8, batch_size=2)
        cfg_path = tmp_path / "cfg.txt"
        cfg_path.write_text(cfg.to_text())
        ck = tmp_path / "m.ckpt"
        assert cli_main(["train", "--data", str(data), "--config", str(cfg_path),
                         "--stage", "1", "--ckpt", str(ck)]) == 0
        assert cli_main(["eval", "--data", str(data), "--ckpt", str(ck),
                         "--split", "test"]) == 0
        report = tmp_path / "rep.tsv"
        assert cli_main(["ablate", "--data", str(data), "--config", str(cfg_path),
                         "--variants", "ego", "--out", str(report)]) == 0
        assert report.exists()
        first_clip = sorted(p for p in data.iterdir() if p.is_dir())[0]
        viz_dir = tmp_path / "viz"
        assert cli_main(["viz", "--ckpt", str(ck), "--clip", str(first_clip),
                         "--out", str(viz_dir)]) == 0
        assert (viz_dir / "mask_0000.pgm").exists()
        assert (viz_dir / "flow_0000_x.pgm").exists()
        assert (viz_dir / "flow_0000_x.txt").exists()
        assert (viz_dir / "recon_0000.ppm").exists()
        out = capsys.readouterr().out
        assert "accuracy" in out
