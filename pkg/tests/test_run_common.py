"""Tests for progress reporting, input digests and output validation."""

import hashlib
import json
import os
import shutil
import sys
import tempfile
import unittest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import run_common  # noqa: E402


class ProgressReporterTests(unittest.TestCase):
    """Finished units are counted and forwarded to the callback."""

    def test_reports_running_count_and_total(self) -> None:
        updates = []
        progress = run_common.ProgressReporter(3, lambda done, total: updates.append((done, total)))
        progress.advance()
        progress.advance(2)
        self.assertEqual(updates, [(1, 3), (3, 3)])

    def test_no_callback_still_counts(self) -> None:
        progress = run_common.ProgressReporter()
        progress.advance()
        self.assertEqual(progress.done, 1)

    def test_failing_callback_is_dropped(self) -> None:
        calls = []

        def broken(done, total):
            calls.append(done)
            raise RuntimeError("display closed")

        progress = run_common.ProgressReporter(5, broken)
        for _ in range(5):
            progress.advance()
        self.assertEqual(calls, [1])
        self.assertEqual(progress.done, 5)


class DigestTests(unittest.TestCase):

    def setUp(self) -> None:
        self.dir = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, self.dir, ignore_errors=True)

    def test_matches_hashlib(self) -> None:
        path = os.path.join(self.dir, "data.csv")
        content = b"t,y\n" + b"1,2.5\n" * 300_000
        with open(path, "wb") as handle:
            handle.write(content)
        self.assertEqual(run_common.file_digest(path), hashlib.sha256(content).hexdigest())

    def test_missing_file_is_none(self) -> None:
        self.assertIsNone(run_common.file_digest(os.path.join(self.dir, "absent.csv")))


class SchemaTests(unittest.TestCase):

    def setUp(self) -> None:
        self.dir = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, self.dir, ignore_errors=True)

    def _manifest(self, **overrides):
        document = {"command": "lfo", "config": {}, "seed": 1, "tool_version": "1.0.0",
                    "inputs": {"/tmp/data.csv": "0" * 64}, "started": "s", "finished": "f"}
        document.update(overrides)
        return document

    def test_valid_manifest(self) -> None:
        run_common.validate_document(self._manifest(), "run_manifest")

    def test_invalid_document_raises(self) -> None:
        with self.assertRaises(run_common.OutputSchemaError):
            run_common.validate_document(self._manifest(command="forecast"), "run_manifest")

    def test_write_json_validates_before_writing(self) -> None:
        path = os.path.join(self.dir, "nested", "manifest.json")
        with self.assertRaises(run_common.OutputSchemaError):
            run_common.write_json(path, self._manifest(seed="one"), "run_manifest")
        self.assertFalse(os.path.exists(path))

        run_common.write_json(path, self._manifest(), "run_manifest")
        with open(path, encoding="utf-8") as handle:
            self.assertEqual(json.load(handle)["command"], "lfo")


if __name__ == "__main__":
    unittest.main()
