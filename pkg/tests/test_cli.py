"""Tests for CLI commands."""

import json
import shutil
import tempfile
from pathlib import Path

from click.testing import CliRunner

from vulnscore.cli import main


FIXTURES = Path(__file__).parent / "fixtures"


class TestScoreCommand:
    """Tests for the 'score' command."""

    def setup_method(self) -> None:
        self.runner = CliRunner()

    def test_structured(self) -> None:
        result = self.runner.invoke(
            main, ['score', 'CVSS:3.1/AV:N/AC:L/PR:N/UI:N/S:U/C:H/I:H/A:H', '--format', 'structured']
        )
        assert result.exit_code == 0
        payload = json.loads(result.output)
        assert payload['score'] == 9.8
        assert payload['rating'] == 'Critical'

    def test_text(self) -> None:
        result = self.runner.invoke(main, ['score', 'AV:P/AC:L/PR:N/UI:N/S:U/C:N/I:N/A:H'])
        assert result.exit_code == 0
        assert '4.6' in result.output
        assert 'Medium' in result.output

    def test_bad_vector_exits_with_data_error(self) -> None:
        result = self.runner.invoke(main, ['score', 'AV:N/AC:L'])
        assert result.exit_code == 3
        assert 'Missing base metric' in result.output


class TestValidateCommand:
    """Tests for the 'validate' command."""

    def setup_method(self) -> None:
        self.runner = CliRunner()

    def _write_yaml(self, content: str) -> Path:
        """Write YAML content to a temp file and return its path."""
        tmp = tempfile.NamedTemporaryFile(
            mode='w', suffix='.yaml', delete=False, encoding='utf-8'
        )
        tmp.write(content)
        tmp.close()
        return Path(tmp.name)

    def test_valid_file(self) -> None:
        result = self.runner.invoke(main, ['validate', str(FIXTURES / 'sample_config.yaml')])
        assert result.exit_code == 0
        assert "is valid" in result.output

    def test_invalid_file(self) -> None:
        path = self._write_yaml("""
preset: huge
thresholds:
  confidence: 2
""")
        try:
            result = self.runner.invoke(main, ['validate', str(path)])
            assert result.exit_code == 3
            assert "Invalid preset 'huge'" in result.output
            assert "thresholds.confidence" in result.output
        finally:
            path.unlink()

    def test_invalid_yaml(self) -> None:
        path = self._write_yaml("preset: [unclosed\n")
        try:
            result = self.runner.invoke(main, ['validate', str(path)])
            assert result.exit_code == 3
            assert "Invalid YAML" in result.output
        finally:
            path.unlink()

    def test_missing_file(self) -> None:
        result = self.runner.invoke(main, ['validate', '/nonexistent/file.yaml'])
        assert result.exit_code == 2


class TestInitCommand:
    """Tests for the 'init' command."""

    def setup_method(self) -> None:
        self.runner = CliRunner()

    def test_creates_valid_config(self) -> None:
        with self.runner.isolated_filesystem():
            result = self.runner.invoke(main, ['init', 'demo', '--preset', 'tiny'])
            assert result.exit_code == 0
            assert Path('demo.yaml').exists()

            result = self.runner.invoke(main, ['validate', 'demo.yaml'])
            assert result.exit_code == 0

    def test_refuses_to_overwrite(self) -> None:
        with self.runner.isolated_filesystem():
            Path('demo.yaml').write_text('preset: tiny\n')
            result = self.runner.invoke(main, ['init', 'demo'])
            assert result.exit_code == 1
            assert 'already exists' in result.output


class TestErrorCodes:
    """Tests for exit codes of failing commands."""

    def setup_method(self) -> None:
        self.runner = CliRunner()

    def test_predict_needs_one_description(self) -> None:
        result = self.runner.invoke(main, ['predict'])
        assert result.exit_code == 2

        result = self.runner.invoke(main, ['predict', '--text', 'x', '--cve', 'CVE-2019-0001'])
        assert result.exit_code == 2

    def test_missing_checkpoints(self, tmp_path) -> None:
        vocab = tmp_path / 'vocab.txt'
        vocab.write_text('[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\na\n')
        result = self.runner.invoke(main, [
            'predict', '--text', 'a', '--checkpoints', str(tmp_path / 'none'), '--vocab', str(vocab),
        ])
        assert result.exit_code == 4
        assert 'No checkpoint for metric AV' in result.output

    def test_unreadable_feed(self, tmp_path) -> None:
        result = self.runner.invoke(main, [
            'ingest', str(tmp_path / 'missing.json'), '--out', str(tmp_path / 'dataset.jsonl'),
        ])
        assert result.exit_code == 5

    def test_invalid_config(self, tmp_path) -> None:
        config = tmp_path / 'bad.yaml'
        config.write_text('preset: huge\n')
        result = self.runner.invoke(main, ['--config', str(config), 'reports'])
        assert result.exit_code == 3


class TestPipeline:
    """Runs every stage on the fixture feed with the tiny preset."""

    def setup_method(self) -> None:
        self.runner = CliRunner()

    def _run(self, *args: str):
        result = self.runner.invoke(main, ['--config', 'config.yaml', *args])
        assert result.exit_code == 0, result.output
        return result

    def test_end_to_end(self, tmp_path) -> None:
        with self.runner.isolated_filesystem(temp_dir=tmp_path):
            shutil.copy(FIXTURES / 'sample_config.yaml', 'config.yaml')
            shutil.copy(FIXTURES / 'nvd_fixture.json', 'feed.json')

            result = self._run('ingest', 'feed.json')
            assert 'Wrote 3 records' in result.output
            assert 'score mismatch' in result.output
            rows = [json.loads(line) for line in Path('work/dataset.jsonl').read_text().splitlines()]
            assert [row['cve_id'] for row in rows] == ['CVE-2018-1000', 'CVE-2019-0001', 'CVE-2020-9804']

            self._run('split')
            manifest = json.loads(Path('work/manifest.json').read_text())
            assert len(manifest['train_ids']) == 1
            assert len(manifest['test_ids']) == 2

            self._run('build-vocab')
            assert Path('work/vocab.txt').read_text().startswith('[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\n')

            result = self._run('train', '--metric', 'all', '--format', 'structured')
            logs = json.loads(result.output)
            assert sorted(logs) == sorted(['AV', 'AC', 'PR', 'UI', 'S', 'C', 'I', 'A'])
            assert [entry['phase'] for entry in logs['AV'][1:]] == ['frozen', 'joint']
            for metric in logs:
                assert Path(f'work/checkpoints/{metric}.ckpt').exists()
                assert Path(f'work/checkpoints/{metric}.log.jsonl').exists()

            result = self._run('evaluate', '--format', 'structured')
            report = json.loads(result.output)
            assert report['test_size'] == 2
            assert set(report['metrics']) == set(logs)
            assert 0.0 <= report['score']['exact_match_fraction'] <= 1.0

            result = self._run('predict', '--cve', 'CVE-2020-9804', '--explain', 'AV')
            prediction = json.loads(result.output)
            assert prediction['cve_id'] == 'CVE-2020-9804'
            assert prediction['vector'].startswith('CVSS:3.1/')
            assert len(prediction['saliency']['AV']['top_k']) == 3

            self._run('predict', '--text', 'A USB device may lead to a kernel panic.', '--format', 'text')

            result = self._run('explain', '--text', 'Inserting a USB device leads to a kernel panic.',
                               '-m', 'AV', '--html', 'av.html', '--format', 'structured')
            explanation = json.loads(result.output)
            assert explanation['metric'] == 'AV'
            assert [entry['rank'] for entry in explanation['top_k']] == [1, 2, 3]
            assert '<b><u>' in Path('av.html').read_text()

            # an empty class logs a warning on stderr, so read the saved report
            self._run('aggregate', '-m', 'S', '--threshold', '0.0', '--format', 'structured')
            (saved,) = Path('work/reports').glob('associations-*.json')
            table = json.loads(saved.read_text())
            assert table['metric'] == 'S'
            assert sum(block['filtered_count'] for block in table['classes'].values()) == 2

            result = self._run('reports', '--kind', 'eval')
            assert 'eval' in result.output


class TestDocumentedCommandLines:
    """The pipeline driven with explicit file options instead of config paths."""

    def setup_method(self) -> None:
        self.runner = CliRunner()

    def _run(self, *args: str):
        result = self.runner.invoke(main, ['--config', 'config.yaml', *args])
        assert result.exit_code == 0, result.output
        return result

    def test_explicit_paths(self, tmp_path) -> None:
        with self.runner.isolated_filesystem(temp_dir=tmp_path):
            shutil.copy(FIXTURES / 'sample_config.yaml', 'config.yaml')
            shutil.copy(FIXTURES / 'nvd_fixture.json', 'feed.json')

            result = self._run('ingest', '--feeds', 'feed.json', '--out', 'ds.jsonl')
            assert 'Wrote 3 records' in result.output
            self._run('split', '--dataset', 'ds.jsonl', '--seed', '7', '--fraction', '0.5', '--out', 'm.json')
            assert set(json.loads(Path('m.json').read_text())) == {'seed', 'fraction', 'train_ids', 'test_ids'}
            self._run('build-vocab', '--dataset', 'ds.jsonl', '--manifest', 'm.json', '--out', 'v.txt')

            common = ['--dataset', 'ds.jsonl', '--manifest', 'm.json', '--vocab', 'v.txt', '--checkpoints-dir', 'ck']
            self._run('train', '--metric', 'AV', *common, '--preset', 'desk', '--seed', '7')
            header = json.loads(Path('ck/AV.log.jsonl').read_text().splitlines()[0])
            assert header['preset'] == 'desk'
            assert header['seed'] == 7
            self._run('train', '-m', 'AC', '-m', 'PR', '-m', 'UI', '-m', 'S', '-m', 'C', '-m', 'I', '-m', 'A', *common)

            result = self._run('evaluate', '--checkpoints-dir', 'ck', '--manifest', 'm.json',
                               '--dataset', 'ds.jsonl', '--vocab', 'v.txt', '--format', 'structured')
            assert json.loads(result.output)['test_size'] == 2

            result = self._run('predict', '--text', 'A crafted request', '--checkpoints', 'ck', '--vocab', 'v.txt')
            assert json.loads(result.output)['vector'].startswith('CVSS:3.1/')

    def test_feeds_and_arguments_combine(self, tmp_path) -> None:
        with self.runner.isolated_filesystem(temp_dir=tmp_path):
            shutil.copy(FIXTURES / 'nvd_fixture.json', 'a.json')
            shutil.copy(FIXTURES / 'nvd_fixture.json', 'b.json')
            result = self.runner.invoke(main, ['ingest', '--feeds', 'a.json', 'b.json', '--out', 'ds.jsonl'])
            assert result.exit_code == 0, result.output
            # the second copy only repeats ids, which are dropped
            assert 'Wrote 3 records' in result.output

    def test_ingest_needs_a_feed(self) -> None:
        result = self.runner.invoke(main, ['ingest', '--out', 'ds.jsonl'])
        assert result.exit_code == 2
        assert '--feeds' in result.output

    def test_vocab_size_below_minimum(self, tmp_path) -> None:
        with self.runner.isolated_filesystem(temp_dir=tmp_path):
            shutil.copy(FIXTURES / 'sample_config.yaml', 'config.yaml')
            shutil.copy(FIXTURES / 'nvd_fixture.json', 'feed.json')
            self._run('ingest', '--feeds', 'feed.json')
            self._run('split')
            result = self.runner.invoke(main, ['--config', 'config.yaml', 'build-vocab', '--size', '10'])
            assert result.exit_code == 3
            assert 'at least 300' in result.output


ARTIFACTS = [
    'work/dataset.jsonl',
    'work/manifest.json',
    'work/vocab.txt',
    *(f'work/checkpoints/{m}.{ext}' for m in ['AV', 'AC', 'PR', 'UI', 'S', 'C', 'I', 'A'] for ext in ('ckpt', 'log.jsonl')),
]


def _run_pipeline(runner: CliRunner, workdir: Path, monkeypatch) -> dict:
    """Run ingest through evaluate in workdir and return every artifact's bytes."""
    workdir.mkdir()
    shutil.copy(FIXTURES / 'sample_config.yaml', workdir / 'config.yaml')
    shutil.copy(FIXTURES / 'nvd_fixture.json', workdir / 'feed.json')
    monkeypatch.chdir(workdir)
    for args in (
        ['ingest', '--feeds', 'feed.json'],
        ['split', '--seed', '11'],
        ['build-vocab'],
        ['train', '--metric', 'all'],
        ['evaluate', '--format', 'structured'],
    ):
        result = runner.invoke(main, ['--config', 'config.yaml', *args])
        assert result.exit_code == 0, result.output
    artifacts = {name: (workdir / name).read_bytes() for name in ARTIFACTS}
    (report,) = (workdir / 'work' / 'reports').glob('eval-*.json')
    artifacts['report'] = report.read_bytes()
    artifacts['report_name'] = report.name.encode()
    return artifacts


def test_pipeline_reruns_are_byte_identical(tmp_path, monkeypatch):
    """Same inputs and seeds give the same files, byte for byte."""
    runner = CliRunner()
    first = _run_pipeline(runner, tmp_path / 'first', monkeypatch)
    second = _run_pipeline(runner, tmp_path / 'second', monkeypatch)

    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], name
