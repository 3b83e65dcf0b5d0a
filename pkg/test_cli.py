import sys
import os
import io
import tempfile
import textwrap
import unittest
from contextlib import redirect_stdout, redirect_stderr

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from cli.runconfig import load_run_config
from main import main
from utils.cache import cache_manager
from utils.data_io import load_libsvm, read_csv
from utils.errors import ConfigError, DataIOError


class CliTestCase(unittest.TestCase):
    def setUp(self):
        cache_manager.clear()
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.dir, name)

    def write_config(self, text, name="run.ini"):
        path = self.path(name)
        with open(path, "w") as fh:
            fh.write(textwrap.dedent(text))
        return path

    def run_main(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with redirect_stdout(out), redirect_stderr(err):
            code = main(list(argv))
        return code, out.getvalue(), err.getvalue()


class TestRunConfig(CliTestCase):
    def test_layers_and_lists(self):
        print("\n--- Testing Run Config Layering ---")
        path = self.write_config("""
            [problem]
            kind = lasso
            lam = 0.1, 0.01
            [solver]
            variant = pccm
            L = 5
        """)
        config = load_run_config(path, {"solver": {"L": 7.0, "L0": None}})
        self.assertEqual(config.problem.lam, [0.1, 0.01])
        self.assertEqual(config.solver.variant, "pccm")
        self.assertEqual(config.solver.L, 7.0)
        self.assertIsNone(config.solver.L0)

    def test_unknown_keys_and_sections(self):
        print("\n--- Testing Run Config Rejections ---")
        bad_key = self.write_config("[solver]\nvariant = coder\nstepsize = 3\n", "a.ini")
        with self.assertRaises(ConfigError):
            load_run_config(bad_key)
        bad_section = self.write_config("[plots]\ncolor = red\n", "b.ini")
        with self.assertRaises(ConfigError):
            load_run_config(bad_section)
        bad_value = self.write_config("[problem]\nkind = lasso\nlam = -1\n", "c.ini")
        with self.assertRaises(ConfigError):
            load_run_config(bad_value)
        with self.assertRaises(DataIOError):
            load_run_config(self.path("missing.ini"))


class TestSolveCommand(CliTestCase):
    TOY = """
        [problem]
        kind = bilinear-toy
        d = 1
        [solver]
        variant = {variant}
        L = 1
        max_iterations = 2000
        divergence_threshold = 1e3
        [run]
        x0 = ones
        wall_time = false
        [reference]
        policy = none
    """

    def test_coder_succeeds_on_bilinear_toy(self):
        print("\n--- Testing solve: CODER on the Bilinear Toy ---")
        path = self.write_config(self.TOY.format(variant="coder"))
        out = self.path("coder.csv")
        code, stdout, _ = self.run_main("solve", "--config", path, "--out", out)
        self.assertEqual(code, 0)
        self.assertIn("status=ok", stdout)
        comments, header, rows = read_csv(out)
        self.assertEqual(header[0], "k")
        self.assertEqual(comments["problem"], "bilinear-toy")
        self.assertEqual(len(rows), 2 * 2001)

    def test_pccm_diverges_with_exit_code(self):
        print("\n--- Testing solve: PCCM Divergence Exit Code ---")
        path = self.write_config(self.TOY.format(variant="pccm"))
        out = self.path("pccm.csv")
        code, stdout, _ = self.run_main("solve", "--config", path, "--out", out)
        self.assertEqual(code, 3)
        self.assertIn("status=diverged", stdout)
        self.assertTrue(os.path.exists(out))

    def test_missing_dataset(self):
        path = self.write_config("""
            [problem]
            kind = lasso
            data = /nonexistent/dataset.libsvm
            [solver]
            L = 1
        """)
        code, _, stderr = self.run_main("solve", "--config", path, "--out", self.path("x.csv"))
        self.assertEqual(code, 4)
        self.assertIn("error:", stderr)

    def test_undecodable_dataset_is_a_data_error(self):
        data = self.path("bad.libsvm")
        with open(data, "wb") as fh:
            fh.write(b"1 1:0.5\n-1 2:\xff\xfe\n")
        path = self.write_config(f"""
            [problem]
            kind = l1-svm
            data = {data}
            [solver]
            L = 1
        """)
        code, _, stderr = self.run_main("solve", "--config", path, "--out", self.path("x.csv"))
        self.assertEqual(code, 2)
        self.assertIn("line 2", stderr)

    def test_config_error_exit_code(self):
        path = self.write_config("[solver]\nvariant = newton\n")
        code, _, _ = self.run_main("solve", "--config", path)
        self.assertEqual(code, 2)

    def test_lasso_with_reference_writes_bounds(self):
        path = self.write_config("""
            [problem]
            kind = lasso
            n = 30
            d = 8
            lam = 0.1
            [solver]
            max_iterations = 40
            [run]
            wall_time = false
        """)
        out = self.path("lasso.csv")
        code, _, _ = self.run_main("solve", "--config", path, "--out", out)
        self.assertEqual(code, 0)
        _, header, rows = read_csv(self.path("lasso.bounds.csv"))
        self.assertIn("gap_bound", header)
        self.assertEqual(len(rows), 41)
        violated = header.index("violated")
        self.assertTrue(all(row[violated] == "False" for row in rows))

    def test_l_grid(self):
        path = self.write_config("""
            [problem]
            kind = lasso
            n = 20
            d = 5
            lam = 0.1
            [solver]
            max_iterations = 5
            [run]
            l_grid = 1, 2, 4
            [reference]
            policy = none
        """)
        out = self.path("grid.csv")
        code, _, _ = self.run_main("solve", "--config", path, "--out", out)
        self.assertEqual(code, 0)
        _, header, rows = read_csv(out)
        self.assertEqual(header[0], "L")
        self.assertEqual(sorted({float(r[0]) for r in rows}), [0.5, 1.0, 2.0])


class TestBenchCommand(CliTestCase):
    CONFIG = """
        [problem]
        kind = lasso
        n = 40
        d = 10
        lam = 0.1, 0.01
        [solver]
        max_iterations = 20
        [run]
        variants = coder, pccm, prcm
        wall_time = false
    """

    def test_bench_is_reproducible(self):
        print("\n--- Testing bench: Byte-Identical Reruns ---")
        path = self.write_config(self.CONFIG)
        first, second = self.path("one.csv"), self.path("two.csv")
        self.assertEqual(self.run_main("bench", "--config", path, "--out", first)[0], 0)
        cache_manager.clear()
        self.assertEqual(self.run_main("bench", "--config", path, "--out", second, "--jobs", "3")[0], 0)
        with open(first, "rb") as a, open(second, "rb") as b:
            self.assertEqual(a.read(), b.read())

        _, header, rows = read_csv(first)
        self.assertEqual(header[:3], ["lambda", "variant", "status"])
        self.assertEqual({r[1] for r in rows}, {"coder", "pccm", "prcm"})
        self.assertEqual(len({r[0] for r in rows}), 2)

    def test_lambda_flag_overrides_file(self):
        path = self.write_config(self.CONFIG)
        out = self.path("flag.csv")
        code, stdout, _ = self.run_main("bench", "--config", path, "--out", out, "--lambda", "0.5")
        self.assertEqual(code, 0)
        _, _, rows = read_csv(out)
        self.assertEqual({float(r[0]) for r in rows}, {0.5})
        self.assertEqual(stdout.count("lam=0.5"), 3)


class TestDeskBenchmark(CliTestCase):
    def test_tuned_svm_bench_reaches_target_gap(self):
        print("\n--- Testing bench: Desk-Scale l1-SVM with Tuned L ---")
        data = self.path("a9a_like.libsvm")
        code, _, _ = self.run_main("gen-data", "--n", "300", "--d", "123", "--density", "0.11", "--seed", "9",
                                   "--out", data)
        self.assertEqual(code, 0)
        path = self.write_config(f"""
            [problem]
            kind = l1-svm
            data = {data}
            max_samples = 2000
            lam = 1e-6, 1e-4, 1e-2
            block_size = 4
            [solver]
            budget_passes = 500
            [run]
            variants = coder, pccm, prcm
            l_grid = 16, 24, 32, 64
            wall_time = false
            [reference]
            budget = 20000
        """)
        out = self.path("bench.csv")
        code, stdout, _ = self.run_main("bench", "--config", path, "--out", out)
        self.assertEqual(code, 0)
        self.assertEqual(stdout.count("ref_residual="), 9)

        comments, header, rows = read_csv(out)
        self.assertEqual(len(comments["reference_residual"].split()), 3)
        self.assertEqual(header[:4], ["lambda", "variant", "status", "L"])
        col = {name: i for i, name in enumerate(header)}
        traces = {}
        for row in rows:
            traces.setdefault((float(row[0]), row[1]), []).append(row)
        self.assertEqual(len(traces), 9)

        for lam in (1e-6, 1e-4, 1e-2):
            avg = [r for r in traces[(lam, "coder")] if r[col["iterate"]] == "avg"]
            initial = float(avg[0][col["primal_gap"]])
            final = [float(r[col["primal_gap"]]) for r in avg if float(r[col["passes"]]) <= 500.0][-1]
            self.assertGreater(initial, 0.0)
            self.assertLessEqual(final, 1e-3 * initial, f"lam={lam}: gap {final} from {initial}")

    def test_tuning_keeps_the_smallest_gap(self):
        path = self.write_config("""
            [problem]
            kind = lasso
            n = 30
            d = 6
            lam = 0.1
            [solver]
            max_iterations = 30
            [run]
            variants = coder
            l_grid = 100, 1
            wall_time = false
        """)
        out = self.path("tuned.csv")
        self.assertEqual(self.run_main("bench", "--config", path, "--out", out)[0], 0)
        _, _, rows = read_csv(out)
        # L = 10/30 sits far below the Lipschitz constant and blows up
        self.assertEqual({float(r[3]) for r in rows}, {10.0 / 30.0 * 100})


class TestLipschitzAndData(CliTestCase):
    def test_worked_example_csv(self):
        print("\n--- Testing lipschitz: Worked Example Table ---")
        path = self.write_config("[lipschitz]\nmode = worked-example\nt = 1, 2\n")
        out = self.path("worked.csv")
        code, _, _ = self.run_main("lipschitz", "--config", path, "--out", out)
        self.assertEqual(code, 0)
        _, header, rows = read_csv(out)
        self.assertEqual(header, ["t", "L", "M", "L_sq", "M_sq", "sqrt_m_M"])
        self.assertAlmostEqual(float(rows[0][4]), 2.0, places=9)
        self.assertAlmostEqual(float(rows[1][4]), 4.25, places=9)
        for row in rows:
            self.assertLessEqual(float(row[1]), float(row[5]))

    def test_small_sweep(self):
        path = self.write_config("[lipschitz]\nmode = sweep-n\nfixed = 20\nstep = 10\nrepeats = 2\n")
        out = self.path("sweep.csv")
        code, stdout, _ = self.run_main("lipschitz", "--config", path, "--out", out, "--seed", "5")
        self.assertEqual(code, 0)
        comments, _, rows = read_csv(out)
        self.assertEqual(comments["seed"], "5")
        self.assertEqual(len(rows), 2 * 2 + 2)
        self.assertIn("sweep-n", stdout)

    def test_gen_data_round_trip(self):
        print("\n--- Testing gen-data Round Trip ---")
        out = self.path("synthetic.libsvm")
        code, _, _ = self.run_main("gen-data", "--n", "25", "--d", "6", "--density", "0.5", "--seed", "3",
                                   "--out", out)
        self.assertEqual(code, 0)
        dataset = load_libsvm(out, n_features=6)
        self.assertEqual(dataset.n_samples, 25)

        path = self.write_config(f"""
            [problem]
            kind = l1-svm
            data = {out}
            lam = 0.01
            [solver]
            max_iterations = 10
            [reference]
            policy = none
        """)
        code, stdout, _ = self.run_main("solve", "--config", path, "--out", self.path("svm.csv"))
        self.assertEqual(code, 0)
        self.assertIn("l1-svm", stdout)


if __name__ == "__main__":
    unittest.main()
