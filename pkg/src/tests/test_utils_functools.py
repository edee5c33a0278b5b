import io
import unittest
from contextlib import redirect_stderr

from src.utils.functools import elapsed_str, timed


class FunctoolsTestCase(unittest.TestCase):
    def test_elapsed_str(self):
        self.assertEqual('1.1028 s = 0:00:01.102849', elapsed_str(1_102_849_000), "seconds and H:MM:SS")
        self.assertEqual('0.0000 s = 0:00:00', elapsed_str(0), "zero duration")

    def test_timed(self):
        @timed
        def answer(x):
            return 2 * x

        err = io.StringIO()
        with redirect_stderr(err):
            result = answer(21)
        self.assertEqual(42, result, "return value is passed through")
        lines = err.getvalue().splitlines()
        self.assertEqual(2, len(lines), "start and end lines")
        self.assertTrue(lines[0].startswith("Start time: "), "start line")
        self.assertIn("answer() took ", lines[1], "end line names the function")

    def test_timed_exception(self):
        @timed
        def failing():
            raise ValueError("bad")

        err = io.StringIO()
        with redirect_stderr(err), self.assertRaises(ValueError):
            failing()
        self.assertIn("failing() took ", err.getvalue(), "duration printed even on error")


if __name__ == '__main__':
    unittest.main()
