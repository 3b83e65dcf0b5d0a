import sys
import os
import unittest
import json
import logging
from io import StringIO
from unittest.mock import patch

import numpy as np

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from utils.logger import JsonFormatter, log_event, setup_logger


class TestLogging(unittest.TestCase):
    def setUp(self):
        self.log_output = StringIO()
        self.logger = setup_logger("test_logger")
        # Clear existing handlers
        self.logger.handlers = []
        handler = logging.StreamHandler(self.log_output)
        handler.setFormatter(JsonFormatter())
        self.logger.addHandler(handler)
        self.logger.setLevel(logging.DEBUG)

    def records(self):
        return [json.loads(line) for line in self.log_output.getvalue().splitlines() if line.strip()]

    def test_json_format_and_fields(self):
        print("\n--- Testing JSON Log Format ---")
        extra_data = {"run_id": "run-123", "variant": "coder", "iteration": 40, "duration_ms": 150,
                      "status": "ok"}

        with patch('utils.logger.logger', self.logger):
            log_event(logging.INFO, "solve_completed", "40 iterations", **extra_data)

        output = self.log_output.getvalue().strip()
        print(f"Log output: {output}")

        log_json = json.loads(output)
        self.assertEqual(log_json["level"], "INFO")
        self.assertEqual(log_json["event"], "solve_completed")
        self.assertEqual(log_json["run_id"], "run-123")
        self.assertEqual(log_json["iteration"], 40)
        self.assertEqual(log_json["duration_ms"], 150)
        self.assertIn("timestamp", log_json)

    def test_arrays_never_reach_the_stream(self):
        print("\n--- Testing Logging Hygiene (No vectors) ---")
        noisy = {
            "run_id": "run-123",
            "x": np.ones(5),
            "operator": [[1.0, 0.0], [0.0, 1.0]],
        }

        with patch('utils.logger.logger', self.logger):
            log_event(logging.INFO, "hygiene_test", "Checking filters", **noisy)

        log_json = json.loads(self.log_output.getvalue().strip())
        print(f"Sanitized Log: {log_json}")

        self.assertNotIn("x", log_json)
        self.assertNotIn("operator", log_json)
        self.assertEqual(log_json["run_id"], "run-123")
        self.assertEqual(log_json["event"], "hygiene_test")

    def test_solver_emits_lifecycle_events(self):
        print("\n--- Testing Solver Lifecycle Events ---")
        from models.schemas import SolverConfig
        from utils.problems import make_bilinear_toy
        from utils.solvers import solve

        with patch('utils.logger.logger', self.logger):
            solve(make_bilinear_toy(1), SolverConfig(variant="coder", L=1.0, max_iterations=3),
                  np.ones(2), run_id="run-7")

        events = {r["event"]: r for r in self.records()}
        self.assertIn("solve_started", events)
        self.assertEqual(events["solve_completed"]["iteration"], 3)
        self.assertEqual(events["solve_completed"]["run_id"], "run-7")
        self.assertEqual(events["solve_completed"]["status"], "ok")


if __name__ == "__main__":
    unittest.main()
