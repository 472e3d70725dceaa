"""
Tests for the command-line interface.
"""
import json

import click
import pytest

from carnotlip import __version__
from carnotlip.cli import parse_group, run


def read_json(path):
    with open(path, encoding='utf-8') as f:
        return json.load(f)


class TestUsage:
    """Test usage errors and global options."""

    def test_no_arguments(self, capsys):
        """Test running without arguments prints usage and exits 2."""
        assert run([]) == 2
        assert 'Usage' in capsys.readouterr().err

    def test_unknown_flag(self):
        """Test an unknown flag exits 2."""
        assert run(['--bogus']) == 2

    def test_unknown_command(self):
        """Test an unknown subcommand exits 2."""
        assert run(['frobnicate']) == 2

    def test_version(self, capsys):
        """Test --version prints the library version."""
        assert run(['--version']) == 0
        assert __version__ in capsys.readouterr().out

    def test_bad_group(self):
        """Test an unknown group kind exits 2."""
        assert run(['group', 'check', '--group', 'grushin-1']) == 2

    def test_negative_seed(self):
        """Test an invalid seed exits 2."""
        assert run(['--seed', '-3', 'group', 'check']) == 2

    def test_parse_group(self):
        """Test group names parse to descriptors."""
        assert parse_group('heisenberg-2').dim == 5
        assert parse_group('euclidean-3').dim == 3
        with pytest.raises(click.BadParameter):
            parse_group('heisenberg-x')


class TestCommands:
    """Test experiment subcommands and their artifacts."""

    def test_group_check(self, tmp_path):
        """Test group check passes and writes its artifacts."""
        code = run(['--out', str(tmp_path), 'group', 'check', '--samples', '2000'])
        assert code == 0
        body = read_json(tmp_path / 'group_check.json')
        assert body['command'] == 'group_check'
        assert body['payload']['passed'] is True
        assert (tmp_path / 'group_check_group_axioms_properties.csv').exists()

    def test_seed_recorded(self, tmp_path):
        """Test the root seed is written to the artifact."""
        run(['--seed', '11', '--out', str(tmp_path), 'group', 'check', '--samples', '500',
             '--group', 'euclidean-2'])
        assert read_json(tmp_path / 'group_check.json')['seed'] == 11

    def test_pansu_probe(self, tmp_path):
        """Test the conjugation probe converges."""
        code = run(['--out', str(tmp_path), 'pansu', 'probe', '--map', 'conj-automorphism'])
        assert code == 0
        differential = read_json(tmp_path / 'pansu_probe.json')['payload']['differential']
        assert differential['verdict'] == 'converged'

    def test_unknown_map(self, tmp_path):
        """Test an unknown map name exits 2."""
        assert run(['--out', str(tmp_path), 'pansu', 'probe', '--map', 'nope']) == 2

    def test_cantor_build(self, tmp_path):
        """Test cantor build passes for epsilon = 2."""
        code = run(['--out', str(tmp_path), 'cantor', 'build', '--depth', '2',
                    '--samples', '2000'])
        assert code == 0
        body = read_json(tmp_path / 'cantor_build.json')
        assert body['payload']['params']['gamma'] == 0.25
        assert (tmp_path / 'cantor_build_stage_one_boxes.csv').exists()

    def test_cantor_bad_epsilon(self, tmp_path):
        """Test epsilon outside (0, 4) exits 2."""
        assert run(['--out', str(tmp_path), 'cantor', 'build', '--epsilon', '5']) == 2

    def test_decompose_depth_too_large(self, tmp_path):
        """Test a depth beyond the mesh resolution exits 2."""
        assert run(['--out', str(tmp_path), 'decompose', 'run', '--depth', '12']) == 2

    def test_decompose_content_rule_choice(self, tmp_path):
        """Test an unknown content rule exits 2."""
        assert run(['--out', str(tmp_path), 'decompose', 'run', '--content-rule', 'x']) == 2

    def test_counterex_grushin(self, tmp_path):
        """Test the Grushin experiment passes with a small budget."""
        code = run(['--out', str(tmp_path), 'counterex', 'grushin', '--budget', '1',
                    '--pairs', '500'])
        assert code == 0
        body = read_json(tmp_path / 'counterex_grushin.json')
        assert body['payload']['axis_constant'] > 0
        assert (tmp_path / 'counterex_grushin_path.csv').exists()


class TestConfigCommands:
    """Test the config subcommands."""

    def test_set_and_show(self, capsys):
        """Test a saved seed shows up in the resolved settings."""
        assert run(['config', 'set', 'seed', '8']) == 0
        assert run(['config', 'show']) == 0
        assert 'seed = 8' in capsys.readouterr().out

    def test_set_unknown_key(self):
        """Test an unknown key exits 2."""
        assert run(['config', 'set', 'colour', 'red']) == 2

    def test_remove(self, capsys):
        """Test remove reports a missing file."""
        assert run(['config', 'remove']) == 0
        assert 'No config file' in capsys.readouterr().out
