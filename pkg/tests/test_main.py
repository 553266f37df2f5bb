"""
Tests for the main entry point.
"""
import json
from unittest.mock import patch

from main import main


class TestMain:
    """Tests for main()."""

    def test_runs_subcommand(self, capsys):
        """Test that main returns the subcommand's exit code and prints its report."""
        assert main(["lemma", "--seed", "1"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["expected_gap"] == -7

    def test_usage_error(self):
        """Test that usage errors come back as exit code 2."""
        assert main(["no-such-command"]) == 2

    @patch('main.run', side_effect=RuntimeError("boom"))
    def test_unhandled_exception(self, mock_run, capsys):
        """Test that unexpected exceptions are reported and give exit code 1."""
        assert main(["lemma"]) == 1
        assert "boom" in capsys.readouterr().err
