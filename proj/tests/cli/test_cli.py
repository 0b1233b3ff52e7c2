import json
import os
import subprocess
import sys
import tempfile
import unittest

EXE = os.environ.get("DDRNET_EXE", "ddrnet")


def run(*args, check=None):
    p = subprocess.run([EXE, *args], capture_output=True, text=True)
    if check is not None and p.returncode != check:
        raise AssertionError(f"{args}: exit {p.returncode}, stderr {p.stderr!r}")
    return p


def write_ppm(path, w, h):
    raster = bytes((x * 7 + y * 3 + c * 50) % 256 for y in range(h) for x in range(w) for c in range(3))
    with open(path, "wb") as f:
        f.write(f"P6\n# test\n{w} {h}\n255\n".encode() + raster)


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    magic, w, h, maxval, raster = data.split(maxsplit=4)
    return magic, int(w), int(h), int(maxval), raster


class Cli(unittest.TestCase):
    def test_list(self):
        out = run("list", check=0).stdout
        for name in ("ddrnet-23-slim", "ddrnet-23", "ddrnet-39", "ddrnet-39-1.5x"):
            self.assertIn(name, out)

    def test_analyze_slim_segmenter(self):
        out = run("analyze", "ddrnet-23-slim", "--task", "seg", "--classes", "19", "--input", "1024x2048", check=0).stdout
        self.assertIn("5.696", out)
        self.assertIn("36.28", out)

    def test_analyze_json(self):
        doc = json.loads(run("--json", "analyze", "ddrnet-23-slim", "--task", "seg", check=0).stdout)
        self.assertAlmostEqual(doc["total_params"] / 1e6, 5.696, delta=0.0005)
        self.assertAlmostEqual(doc["gflops"], 36.281, delta=0.0005)
        self.assertEqual(sum(n["params"] for n in doc["nodes"]), doc["total_params"])

    def test_analyze_deterministic(self):
        a = run("analyze", "ddrnet-39", check=0).stdout
        b = run("analyze", "ddrnet-39", check=0).stdout
        self.assertEqual(a, b)

    def test_describe_deep_variant(self):
        out = run("describe", "ddrnet-39", check=0).stdout
        self.assertIn("conv4.1", out)

    def test_unknown_variant(self):
        p = run("analyze", "ddrnet-99", check=3)
        self.assertTrue(p.stderr.startswith("ddrnet: "))
        self.assertEqual(p.stderr.count("\n"), 1)

    def test_bad_input_size(self):
        run("analyze", "ddrnet-23-slim", "--input", "100x100", check=6)

    def test_usage(self):
        run("analyze", check=2)

    def test_missing_file(self):
        with tempfile.TemporaryDirectory() as d:
            run("infer", "--variant", "ddrnet-23-slim", "--weights", os.path.join(d, "none.ddrw"),
                "--image", os.path.join(d, "none.ppm"), "--out", os.path.join(d, "o.pgm"), check=4)

    def test_init_and_infer(self):
        with tempfile.TemporaryDirectory() as d:
            w = os.path.join(d, "w.ddrw")
            img = os.path.join(d, "in.ppm")
            out = os.path.join(d, "out.pgm")
            run("init", "ddrnet-23-slim", "--task", "seg", "--seed", "7", "-o", w, check=0)
            with open(w, "rb") as f:
                self.assertEqual(f.read(4), b"DDRW")
            write_ppm(img, 64, 64)
            run("infer", "--variant", "ddrnet-23-slim", "--weights", w, "--image", img, "--out", out, check=0)
            magic, width, height, _, raster = read_pgm(out)
            self.assertEqual((magic, width, height), (b"P5", 64, 64))
            self.assertEqual(len(raster), 64 * 64)
            self.assertLess(max(raster), 19)

            run("infer", "--variant", "ddrnet-23-slim", "--weights", w, "--image", img, "--out", out,
                "--std", "0,1,1", check=7)

            bad = os.path.join(d, "bad.ddrw")
            with open(bad, "wb") as f:
                f.write(b"NOTACHECKPOINT")
            run("infer", "--variant", "ddrnet-23-slim", "--weights", bad, "--image", img, "--out", out, check=5)

            # wrong-variant weights are a slot mismatch
            run("infer", "--variant", "ddrnet-23", "--weights", w, "--image", img, "--out", out, check=6)


if __name__ == "__main__":
    unittest.main(argv=sys.argv[:1], verbosity=2)
