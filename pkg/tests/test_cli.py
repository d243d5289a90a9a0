import pytest

from contextrnn.cli import run_cli
from contextrnn.data import load_panel
from contextrnn.metrics import EvalReport
from contextrnn.model import load_model

TINY_CONFIG = """
# desk-scale run
epochs = 2
batch_schedule = 1:2
lr_schedule = 1:0.003
window = 16
horizon = 4
period = 8
dilations = 1,2
context_size = 2
context_batch = 2
contexts_per_target = 2
state_width = 6
hidden_width = 8
conv_channels = 4
stride = 4
steps_per_update = 10
maxlag = 2
seed = 0
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "run.cfg"
    config.write_text(TINY_CONFIG)
    data = root / "panel.csv"
    code = run_cli(
        ["synth", "--n", "4", "--t", "200", "--edges", "0-1,0-2", "--noise", "0.2",
         "--period", "8", "--seed", "3", "--out", str(data)]
    )
    assert code == 0
    return root, config, data


class TestSynth:
    def test_byte_identical_runs(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["synth", "--n", "3", "--t", "60", "--seed", "3", "--period", "6"]
        assert run_cli(args + ["--out", str(a)]) == 0
        assert run_cli(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_loadable(self, tmp_path):
        out = tmp_path / "p.csv"
        run_cli(["synth", "--n", "2", "--t", "40", "--out", str(out)])
        panel = load_panel(str(out))
        assert panel.n == 2 and panel.T == 40

    def test_spec_file_with_flag_override(self, tmp_path):
        spec = tmp_path / "panel.spec"
        spec.write_text("n = 3\nt = 50\nedges = 0-1:2.0\nnoise = 0.05\nperiod = 6\nseed = 9\n")
        from_file = tmp_path / "a.csv"
        overridden = tmp_path / "b.csv"
        assert run_cli(["synth", "--spec", str(spec), "--out", str(from_file)]) == 0
        assert run_cli(["synth", "--spec", str(spec), "--t", "30", "--out", str(overridden)]) == 0
        assert load_panel(str(from_file)).T == 50
        assert load_panel(str(overridden)).T == 30


class TestPipeline:
    def test_select_train_predict_evaluate(self, workspace, capsys, tmp_path):
        root, config, data = workspace
        cmap = root / "ctx.map"
        assert run_cli(["select-context", "--data", str(data), "--out", str(cmap), "--config", str(config)]) == 0
        text = cmap.read_text()
        assert "GLOBAL:" in text

        model = root / "model.bin"
        assert run_cli(["train", "--data", str(data), "--map", str(cmap), "--config", str(config), "--out", str(model)]) == 0
        out = capsys.readouterr().out
        assert "epoch  1" in out and "epoch  2" in out

        params = load_model(str(model))
        assert params.config.window == 16

        forecast = root / "forecast.csv"
        assert run_cli(["predict", "--model", str(model), "--data", str(data), "--out", str(forecast)]) == 0
        lines = forecast.read_text().splitlines()
        assert lines[0] == "timestamp,series,median,lower,upper"
        assert len(lines) == 1 + 4 * 4  # four series, horizon four
        capsys.readouterr()

        assert run_cli(["evaluate", "--model", str(model), "--data", str(data)]) == 0
        report = EvalReport.from_json(capsys.readouterr().out)
        assert report.rse >= 0.0

    def test_deterministic_model_files(self, workspace, tmp_path):
        root, config, data = workspace
        cmap = root / "ctx.map"
        m1, m2 = tmp_path / "m1.bin", tmp_path / "m2.bin"
        base = ["train", "--data", str(data), "--map", str(cmap), "--config", str(config)]
        assert run_cli(base + ["--out", str(m1)]) == 0
        assert run_cli(base + ["--out", str(m2)]) == 0
        assert m1.read_bytes() == m2.read_bytes()

    def test_ensemble_predict_from_multiple_models(self, workspace, tmp_path):
        root, config, data = workspace
        cmap = root / "ctx.map"
        m1, m2 = tmp_path / "s0.bin", tmp_path / "s1.bin"
        base = ["train", "--data", str(data), "--map", str(cmap), "--config", str(config)]
        assert run_cli(base + ["--seed", "0", "--out", str(m1)]) == 0
        assert run_cli(base + ["--seed", "1", "--out", str(m2)]) == 0
        out = tmp_path / "ens.csv"
        assert run_cli(["predict", "--model", str(m1), str(m2), "--data", str(data), "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 1 + 4 * 4

    def test_predefined_map_passthrough(self, workspace, tmp_path):
        root, config, data = workspace
        given = tmp_path / "given.map"
        given.write_text("0: 1,2\n1: 0,2\n2: 0,1\n3: 0,1\nGLOBAL: 0,1\n")
        out = tmp_path / "echo.map"
        assert run_cli(
            ["select-context", "--data", str(data), "--mode", "predefined",
             "--predefined", str(given), "--out", str(out), "--config", str(config)]
        ) == 0
        assert "GLOBAL: 0,1" in out.read_text()


class TestExitCodes:
    def test_usage_error(self, capsys):
        assert run_cli(["train"]) == 1  # missing required arguments
        assert run_cli(["no-such-command"]) == 1

    def test_data_error(self, workspace, tmp_path):
        root, config, data = workspace
        assert run_cli(["evaluate", "--model", str(tmp_path / "missing.bin"), "--data", str(data)]) == 2

    @pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
    def test_divergence_error(self, workspace, tmp_path):
        # an absurd learning rate blows the parameters up; the resulting
        # inf/nan loss must surface as exit code 3, not a crash
        root, config, data = workspace
        cmap = root / "ctx.map"
        code = run_cli(
            ["train", "--data", str(data), "--map", str(cmap), "--config", str(config),
             "--set", "lr_schedule=1:1e6", "--set", "epochs=3", "--out", str(tmp_path / "junk.bin")]
        )
        assert code == 3


class TestAblate:
    def test_prints_three_rses(self, workspace, capsys):
        root, config, data = workspace
        cmap = root / "ctx.map"
        assert run_cli(
            ["ablate", "--data", str(data), "--map", str(cmap), "--config", str(config),
             "--set", "epochs=1"]
        ) == 0
        out = capsys.readouterr().out.strip().splitlines()
        modes = [line.split()[0] for line in out]
        assert modes == ["full", "global", "none"]
        for line in out:
            float(line.split()[1])
