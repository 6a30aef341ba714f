import json

import pandas as pd
import pytest

from cli import main


def last_json(text: str) -> dict:
    return json.loads(text[text.index('{'):])


@pytest.fixture
def config_file(make_config, tmp_path):
    path = tmp_path / "tiny.yaml"
    make_config(tmp_path / "run").to_yaml(str(path))
    return str(path)


@pytest.mark.parametrize('command', ['pretrain-guidance', 'train-diffusion', 'ablate'])
def test_training_commands_require_seed(command, capsys):
    with pytest.raises(SystemExit) as info:
        main([command])
    assert info.value.code == 2


def test_bad_override_is_a_configuration_error(capsys):
    assert main(['gen-data', '--set', 'schedule.type=quadratic']) == 2
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload['error'] == 'configuration_error'


def test_missing_checkpoint(tmp_path, capsys):
    assert main(['evaluate', '--checkpoint', str(tmp_path / "missing.ckpt")]) == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])['error'] == 'checkpoint_error'


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("a file, not a directory")
    assert main(['gen-data', '--seed', '0', '--set', 'data.n_per_class=2', '--set', 'data.image_size=8',
                 '--out', str(blocker / "data.dset")]) == 1
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload['error'] == 'internal_error'
    assert payload['type'] in ('FileExistsError', 'NotADirectoryError', 'FileNotFoundError')


def test_pipeline(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    common = ['--config', config_file, '--output-dir', str(out)]

    assert main(['gen-data', *common, '--seed', '3', '--out', str(out / "data.dset")]) == 0
    generated = last_json(capsys.readouterr().out)
    assert generated['size'] == 40

    assert main(['pretrain-guidance', *common, '--seed', '3']) == 0
    pretrained = last_json(capsys.readouterr().out)
    assert pretrained['training']['epochs'] == 2

    assert main(['train-diffusion', *common, '--seed', '3', '--guidance', pretrained['checkpoint']]) == 0
    trained = capsys.readouterr().out
    assert trained.splitlines()[0].startswith('Model')
    checkpoint = last_json(trained)['checkpoint']
    assert last_json(trained)['config_hash'] == pretrained['config_hash']

    assert main(['evaluate', '--checkpoint', checkpoint, '--split', 'val']) == 0
    evaluated = last_json(capsys.readouterr().out)
    assert 0.0 <= evaluated['diffusion']['accuracy'] <= 1.0
    assert (out / "metrics_val.json").exists()

    trajectory = tmp_path / "trajectory.csv"
    assert main(['sample-trajectory', '--checkpoint', checkpoint, '--input', str(out / "data.dset"),
                 '--index', '1', '--n-chains', '2', '--chain-seed', '0', '--out', str(trajectory)]) == 0
    assert last_json(capsys.readouterr().out)['chains'] == 2
    frame = pd.read_csv(trajectory)
    assert list(frame.columns) == ['chain', 't', 'z_0', 'z_1', 'config_hash']
    assert len(frame) == 2 * 4

    assert main(['sample-trajectory', '--checkpoint', checkpoint, '--index', '99']) == 2
