"""Tests for the lfocv command line: exit codes, outputs and manifests."""

import json
import os
import shutil
import sys
import tempfile
import unittest
from contextlib import redirect_stdout
from io import StringIO

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import cli  # noqa: E402
import run_common  # noqa: E402
import simlab  # noqa: E402
from simlab import GenSpec  # noqa: E402

SMALL_SAMPLER = {"chains": 2, "warmup": 200, "draws": 100}


class CliTestCase(unittest.TestCase):

    def setUp(self) -> None:
        self.dir = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, self.dir, ignore_errors=True)
        self.data = os.path.join(self.dir, "series.csv")
        simlab.generate_series(GenSpec.for_kind("constant", N=16), 4).to_csv(self.data)
        self.model = self._json("model.json", {"p": 0, "trend_degree": 0,
                                               "sampler": SMALL_SAMPLER})

    def _json(self, name, values):
        path = os.path.join(self.dir, name)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(values, handle)
        return path

    def _run(self, *argv):
        with redirect_stdout(StringIO()):
            return cli.main(["-q", *argv])

    def _read(self, path):
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)


class LfoCommandTests(CliTestCase):

    def _lfo(self, name, *extra):
        out = os.path.join(self.dir, name)
        code = self._run("lfo", self.data, "--model", self.model, "--L", "12",
                         "--workers", "1", "--out", out, *extra)
        return code, out

    def test_forced_refit_forward_equals_exact(self) -> None:
        code, forward = self._lfo("forward.json", "--tau", "0")
        self.assertEqual(code, run_common.EXIT_OK)
        code, exact = self._lfo("exact.json", "--mode", "exact")
        self.assertEqual(code, run_common.EXIT_OK)
        self.assertEqual(self._read(forward)["total"], self._read(exact)["total"])
        self.assertEqual(self._read(exact)["refit_indices"], [12, 13, 14, 15])

    def test_manifest_is_written(self) -> None:
        _, out = self._lfo("result.json")
        manifest = self._read(cli.manifest_path(out))
        run_common.validate_document(manifest, "run_manifest")
        self.assertEqual(manifest["command"], "lfo")
        self.assertEqual(manifest["inputs"][os.path.abspath(self.data)],
                         run_common.file_digest(self.data))
        self.assertEqual(manifest["config"]["lfo"]["L"], 12)

    def test_rmse_measure(self) -> None:
        code, out = self._lfo("rmse.json", "--measure", "rmse", "--M", "2")
        self.assertEqual(code, run_common.EXIT_OK)
        result = self._read(out)
        self.assertEqual((result["measure"], result["M"]), ("rmse", 2))
        self.assertGreater(result["total"], 0.0)

    def test_empty_evaluation_set_is_usage_error(self) -> None:
        code, out = self._lfo("none.json", "--M", "5")
        self.assertEqual(code, run_common.EXIT_USAGE)
        self.assertFalse(os.path.exists(out))

    def test_fit_failure_keeps_partial_result(self) -> None:
        self.model = self._json("strict.json", {
            "p": 0, "trend_degree": 0,
            "sampler": dict(SMALL_SAMPLER, acceptance_low=0.95, acceptance_high=1.0)})
        code, out = self._lfo("failed.json", "--mode", "exact")
        self.assertEqual(code, run_common.EXIT_FIT_FAILURE)
        result = self._read(out)
        self.assertTrue(result["partial"])
        self.assertEqual(result["pointwise"], [])


class InputErrorTests(CliTestCase):

    def test_missing_header(self) -> None:
        with open(self.data, "w", encoding="utf-8") as handle:
            handle.write("1,0.5\n2,0.7\n")
        self.assertEqual(self._run("lfo", self.data, "--L", "0"), run_common.EXIT_USAGE)

    def test_empty_file(self) -> None:
        open(self.data, "w", encoding="utf-8").close()
        self.assertEqual(self._run("loo", self.data), run_common.EXIT_USAGE)

    def test_unknown_model_key(self) -> None:
        model = self._json("bad.json", {"p": 0, "seasonal": True})
        self.assertEqual(self._run("loo", self.data, "--model", model), run_common.EXIT_USAGE)

    def test_missing_config_file(self) -> None:
        code = self._run("loo", self.data, "--config", os.path.join(self.dir, "absent.json"))
        self.assertEqual(code, run_common.EXIT_USAGE)


class LooAndMarginalTests(CliTestCase):

    def test_loo_reports_lpd(self) -> None:
        out = os.path.join(self.dir, "loo.json")
        self.assertEqual(self._run("loo", self.data, "--model", self.model, "--out", out),
                         run_common.EXIT_OK)
        result = self._read(out)
        self.assertEqual(len(result["pointwise"]), 16)
        self.assertLessEqual(result["total"], result["lpd"])

    def test_loo_restricted_to_predicted_observations(self) -> None:
        out = os.path.join(self.dir, "loo.json")
        code = self._run("loo", self.data, "--model", self.model, "--L", "10", "--out", out)
        self.assertEqual(code, run_common.EXIT_OK)
        result = self._read(out)
        expected = sum(row["value"] for row in result["pointwise"] if row["j"] > 10)
        self.assertAlmostEqual(result["total_after_L"], expected, places=10)
        self.assertEqual(result["L"], 10)

    def test_loo_history_beyond_series(self) -> None:
        code = self._run("loo", self.data, "--model", self.model, "--L", "16")
        self.assertEqual(code, run_common.EXIT_USAGE)

    def test_marginal(self) -> None:
        model = self._json("fixed.json", {"p": 0, "trend_degree": 0, "fixed_sigma": 1.0,
                                          "sampler": SMALL_SAMPLER})
        out = os.path.join(self.dir, "marginal.json")
        code = self._run("marginal", self.data, "--model", model, "--workers", "1",
                         "--out", out)
        self.assertEqual(code, run_common.EXIT_OK)
        result = self._read(out)
        self.assertFalse(result["approximate"])
        self.assertEqual(len(result["lfo"]["pointwise"]), 16)


class SimulationCommandTests(CliTestCase):

    def setUp(self) -> None:
        super().setUp()
        self.matrix = self._json("matrix.json", {
            "kinds": ["constant"], "taus": [0.7], "Ms": [1], "trials": 2, "N": 14, "L": 10,
            "backward": False, "loo": False, "sampler": SMALL_SAMPLER})
        self.out_dir = os.path.join(self.dir, "runs")

    def test_simulate_then_report(self) -> None:
        code = self._run("simulate", "--matrix", self.matrix, "--out-dir", self.out_dir,
                         "--workers", "1")
        self.assertEqual(code, run_common.EXIT_OK)
        for name in ("refits.csv", "histogram.csv", "aggregates.csv",
                     "simulate.manifest.json"):
            self.assertTrue(os.path.exists(os.path.join(self.out_dir, name)))

        os.remove(os.path.join(self.out_dir, "refits.csv"))
        self.assertEqual(self._run("report", "--matrix", self.matrix, "--out-dir", self.out_dir),
                         run_common.EXIT_OK)
        self.assertTrue(os.path.exists(os.path.join(self.out_dir, "refits.csv")))

    def test_report_without_trials(self) -> None:
        code = self._run("report", "--matrix", self.matrix, "--out-dir", self.out_dir)
        self.assertEqual(code, run_common.EXIT_USAGE)

    def test_invalid_matrix(self) -> None:
        matrix = self._json("bad_matrix.json", {"kinds": ["cubic"]})
        code = self._run("simulate", "--matrix", matrix, "--out-dir", self.out_dir)
        self.assertEqual(code, run_common.EXIT_USAGE)


class ConfigCommandTests(CliTestCase):

    def setUp(self) -> None:
        super().setUp()
        self.config = self._json("config.json", {"threads": 2})

    def test_set_value(self) -> None:
        code = self._run("config", "--config", self.config, "threads", "3")
        self.assertEqual(code, run_common.EXIT_OK)
        self.assertEqual(self._read(self.config), {"threads": 3})

    def test_plain_text_is_a_string(self) -> None:
        self._run("config", "--config", self.config, "output_dir", "runs")
        self.assertEqual(self._read(self.config)["output_dir"], "runs")

    def test_invalid_value_leaves_file(self) -> None:
        code = self._run("config", "--config", self.config, "threads", "many")
        self.assertEqual(code, run_common.EXIT_USAGE)
        self.assertEqual(self._read(self.config), {"threads": 2})

    def test_show_value(self) -> None:
        out = StringIO()
        with redirect_stdout(out):
            code = cli.main(["-q", "config", "--config", self.config, "threads"])
        self.assertEqual(code, run_common.EXIT_OK)
        self.assertEqual(out.getvalue().strip(), "2")


if __name__ == "__main__":
    unittest.main()
