import json

import numpy as np
import pytest

from slueco.checkpoint import Checkpoint, save_checkpoint
from slueco.cli import append_ledger, main, read_ledger
from slueco.corpus import CorpusSplit, Utterance, load_corpus, save_corpus
from slueco.energy import RunRecord
from slueco.estimator import SLUTagger

import published_tables

TINY_TRAIN = ["--epochs", "1", "--hidden-dim", "6", "--embed-dim", "4", "--attention-dim", "4"]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus") / "syn"
    assert main(["gen-data", "--seed", "7", "--utts", "40", "--concepts", "3", "--dim", "5",
                 "--out", str(out)]) == 0
    return out


class TestGenData:
    def test_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            assert main(["gen-data", "--seed", "7", "--utts", "30", "--out", str(tmp_path / d)]) == 0
        for name in ("train", "dev", "test"):
            assert (tmp_path / "a" / f"{name}.jsonl").read_bytes() == \
                (tmp_path / "b" / f"{name}.jsonl").read_bytes()

    def test_split_sizes(self, tmp_path, capsys):
        assert main(["gen-data", "--utts", "100", "--out", str(tmp_path)]) == 0
        assert capsys.readouterr().out.strip() == "train=70 dev=15 test=15"
        assert len(load_corpus(tmp_path / "test.jsonl")) == 15

    def test_one_concept(self, tmp_path, capsys):
        assert main(["gen-data", "--concepts", "1", "--out", str(tmp_path)]) == 2
        assert "concepts" in capsys.readouterr().err

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["gen-data", "--utts", "20", "--out", str(blocker / "sub")]) == 2

    def test_unknown_flag(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["gen-data", "--out", str(tmp_path), "--bogus"])
        assert exc.value.code == 2


class TestStats:
    def test_directory(self, corpus_dir, capsys):
        assert main(["stats", "--corpus", str(corpus_dir)]) == 0
        out = capsys.readouterr().out
        assert "# sentences" in out and "label OOV%" in out
        header = out.splitlines()[0].split()
        assert header == ["train", "dev", "test"]

    def test_train_against_itself(self, corpus_dir, capsys):
        assert main(["stats", "--corpus", str(corpus_dir / "train.jsonl")]) == 0
        oov_rows = [l for l in capsys.readouterr().out.splitlines() if "OOV" in l]
        assert all(l.split()[-1] == "0.00" for l in oov_rows)

    def test_missing(self, tmp_path):
        assert main(["stats", "--corpus", str(tmp_path / "nope")]) == 2


@pytest.fixture(scope="module")
def trained(corpus_dir, tmp_path_factory):
    work = tmp_path_factory.mktemp("runs")
    ledger = work / "ledger.jsonl"
    for strategy in ("1step", "3steps"):
        code = main(["train", "--strategy", strategy, "--corpus", str(corpus_dir), "--seed", "1",
                     "--out-ckpt", str(work / f"{strategy}.ckpt"), "--ledger", str(ledger),
                     "--run-id", strategy, *TINY_TRAIN])
        assert code == 0
    return work, ledger


class TestTrain:
    def test_ledger_and_checkpoint(self, trained):
        work, ledger = trained
        records = read_ledger(ledger)
        assert [r.run_id for r in records] == ["1step", "3steps"]
        assert records[0].corpus == "syn"
        assert (work / "1step.ckpt").is_file()
        manifest = json.loads((work / "1step.ckpt.manifest.json").read_text())
        assert manifest["strategy"] == "1step" and manifest["seed"] == 1

    def test_three_steps_cost_more(self, trained):
        kwh = {r.run_id: r.kwh for r in read_ledger(trained[1])}
        assert kwh["3steps"] > kwh["1step"]

    def test_transfer_wrong_dim(self, trained, tmp_path, capsys):
        other = tmp_path / "other"
        assert main(["gen-data", "--utts", "20", "--dim", "9", "--out", str(other)]) == 0
        code = main(["train", "--strategy", "1step", "--corpus", str(other),
                     "--transfer-from", str(trained[0] / "1step.ckpt"),
                     "--out-ckpt", str(tmp_path / "x.ckpt"), "--ledger", str(tmp_path / "l"),
                     *TINY_TRAIN])
        assert code == 2
        assert "features" in capsys.readouterr().err

    def test_replay_manifest(self, trained, corpus_dir, tmp_path):
        manifest = trained[0] / "1step.ckpt.manifest.json"
        ledger = tmp_path / "l.jsonl"
        assert main(["train", "--manifest", str(manifest), "--ledger", str(ledger),
                     "--out-ckpt", str(tmp_path / "r.ckpt"), "--run-id", "replay"]) == 0
        again = read_ledger(ledger)[0]
        first = read_ledger(trained[1])[0]
        assert (again.dev_cer, again.test_cer) == (first.dev_cer, first.test_cer)

    def test_missing_corpus(self, tmp_path):
        assert main(["train", "--strategy", "1step", "--corpus", str(tmp_path / "none"),
                     "--out-ckpt", str(tmp_path / "c"), "--ledger", str(tmp_path / "l")]) == 2

    def test_bad_meter(self, corpus_dir, tmp_path):
        assert main(["train", "--strategy", "1step", "--corpus", str(corpus_dir),
                     "--meter", "solar:9", "--out-ckpt", str(tmp_path / "c"),
                     "--ledger", str(tmp_path / "l")]) == 2


def _identity_fixture(root, n_labels=3):
    """One-hot concept frames plus a hand-set encoder that decodes them exactly."""
    labels = [f"C{k}" for k in range(n_labels)]
    rng = np.random.default_rng(0)

    def utt(i):
        seq = list(rng.integers(0, n_labels, size=rng.integers(1, 4)))
        frames = [np.zeros(n_labels)]
        for k in seq:
            frames += [np.eye(n_labels)[k]] * 3 + [np.zeros(n_labels)]
        return Utterance(f"u{i}", "user", np.array(frames), [], [labels[k] for k in seq])

    root.mkdir()
    for name in ("train", "dev", "test"):
        save_corpus(CorpusSplit(name, [utt(i) for i in range(8)], labels, ["w"]),
                    root / f"{name}.jsonl")

    n = n_labels
    W = np.zeros((4 * n, 2 * n))
    b = np.zeros(4 * n)
    b[:n], b[n:2 * n], b[3 * n:] = 30.0, -30.0, 30.0  # input open, forget shut, output open
    W[2 * n:3 * n, :n] = 10.0 * np.eye(n)            # candidate follows the input
    # a label wins only when its unit is the single active one; the +5 speaker
    # marker lights every unit and is pushed below the blank
    head_W = np.vstack([np.zeros(n), 10.0 * (2 * np.eye(n) - np.ones((n, n)))])
    head_b = np.zeros(n + 1)
    head_b[0] = 5.0
    config = dict(SLUTagger(architecture="encoder", hidden_dim=n, num_layers=1,
                            pyramid_layers=0).get_params(), n_features_in=n)
    params = {"enc.0.W": W, "enc.0.b": b, "head.W": head_W, "head.b": head_b}
    return Checkpoint(params, config, labels, {"target": "concepts"})


class TestEval:
    def test_identity_fixture(self, tmp_path, capsys):
        ckpt = _identity_fixture(tmp_path / "onehot")
        save_checkpoint(ckpt, tmp_path / "id.ckpt")
        assert main(["eval", "--ckpt", str(tmp_path / "id.ckpt"),
                     "--corpus", str(tmp_path / "onehot")]) == 0
        assert capsys.readouterr().out.strip() == "CER (dev, user turns): 0.00"

    def test_untrained_checkpoint(self, corpus_dir, tmp_path, capsys):
        ckpt = tmp_path / "init.ckpt"
        assert main(["train", "--strategy", "1step", "--corpus", str(corpus_dir), "--lr", "0",
                     "--out-ckpt", str(ckpt), "--ledger", str(tmp_path / "l"), *TINY_TRAIN]) == 0
        capsys.readouterr()
        assert main(["eval", "--ckpt", str(ckpt), "--corpus", str(corpus_dir),
                     "--split", "test"]) == 0
        cer = float(capsys.readouterr().out.split(":")[-1])
        assert cer >= 90.0

    def test_missing_checkpoint(self, corpus_dir, tmp_path):
        assert main(["eval", "--ckpt", str(tmp_path / "none"), "--corpus", str(corpus_dir)]) == 2


class TestReport:
    def _ledger(self, tmp_path, records):
        path = tmp_path / "ledger.jsonl"
        path.write_text("".join(r.to_json() + "\n" for r in records))
        return path

    def test_published_media_table(self, tmp_path, capsys):
        recs = [r for r, _, _ in published_tables.records() if r.corpus == "MEDIA"]
        assert main(["report", "--ledger", str(self._ledger(tmp_path, recs)),
                     "--format", "records"]) == 0
        rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
        printed = [p for r, _, p in published_tables.records() if r.corpus == "MEDIA"]
        for row, want in zip(rows, printed):
            if want == "M_e":
                assert row["baseline"]
            elif want == "inf":
                assert row["kwh_per_point"] == "inf"
            else:
                assert abs(row["kwh_per_point"] - want) <= 1e-3

    def test_empty_ledger(self, tmp_path, capsys):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert main(["report", "--ledger", str(path)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].split(" | ")[0] == "Strategy" and len(out) == 2

    def test_single_family_baseline(self, tmp_path, capsys):
        recs = [RunRecord("a", "1step", "spectro", 1.0, test_cer=30.0),
                RunRecord("b", "2steps", "spectro", 2.0, test_cer=20.0)]
        assert main(["report", "--ledger", str(self._ledger(tmp_path, recs))]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert "M_e" in lines[2] and "0.100" in lines[3]

    def test_missing_ledger(self, tmp_path):
        assert main(["report", "--ledger", str(tmp_path / "none.jsonl")]) == 2

    def test_append_keeps_existing(self, tmp_path):
        path = tmp_path / "l.jsonl"
        for k in range(3):
            append_ledger(path, RunRecord(f"r{k}", "1step", "spectro", 0.1 * k))
        assert [r.run_id for r in read_ledger(path)] == ["r0", "r1", "r2"]
