"""Builds the extension module and exercises it end to end.

Run from anywhere: python3 python/smoke.py
"""

import json
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build(dest):
    subprocess.run(
        ["cargo", "build", "--offline", "--release", "-p", "deltacomp-py"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libdeltacomp.so"
    shutil.copy(lib, dest / "deltacomp.so")
    sys.path.insert(0, str(dest))


def main():
    work = pathlib.Path(tempfile.mkdtemp(prefix="deltacomp-smoke-"))
    try:
        build(work)
        import deltacomp as dc

        delta = dc.DenseMatrix([[0.5 * (i - j) for j in range(16)] for i in range(4)])
        assert delta.shape == (4, 16)

        sparse = dc.apply_dropout(delta, alpha=4.0, seed=7, group_size=8, layer="q")
        assert sparse.nnz == 4 * 4
        again = dc.apply_dropout(delta, alpha=4.0, seed=7, group_size=8, layer="q")
        assert sparse.values == again.values and sparse.col_indices == again.col_indices

        q = dc.quantize(sparse, k=4, m=2)
        assert (q.bits, q.parts, q.part_bits) == (4, 2, 3)
        back = q.dequantize()
        step = q.scale
        assert all(abs(a - b) <= step / 2 + 1e-6 for a, b in zip(back.values, sparse.values))

        x = dc.DenseMatrix([[1.0] * 16, [0.0] * 15 + [2.0]])
        dense_out = dc.matmul_dense(x, sparse.densify()).tolist()
        sparse_out = dc.matmul_sparse(x, sparse).tolist()
        assert all(math.isclose(a, b, abs_tol=1e-5) for r, s in zip(dense_out, sparse_out) for a, b in zip(r, s))

        assert dc.nominal_ratio(8.0, 4) == 32.0
        assert dc.candidate_group_sizes(4.0, 16) == [4, 8, 16]
        assert dc.layer_loss(x, delta, delta.to_csr()) == 0.0
        assert dc.magnitude_prune(delta, 4.0).nnz == 16
        assert dc.global_dropout(delta, 4.0, seed=1).nnz == 16
        var, rng = dc.intermediate_stats(x, delta)
        assert var.shape == rng.shape == (2, 4)

        try:
            dc.apply_dropout(delta, alpha=0.5)
        except ValueError:
            pass
        else:
            raise AssertionError("alpha < 1 accepted")
        try:
            dc.read_checkpoint(str(work / "missing.dtc"))
        except dc.DeltaError:
            pass
        else:
            raise AssertionError("missing file accepted")

        fixtures = work / "fixtures"
        subprocess.run(
            ["cargo", "run", "--offline", "--release", "-q", "-p", "deltacomp-cli", "--", "gen-fixtures", str(fixtures)],
            cwd=ROOT,
            check=True,
            stdout=subprocess.DEVNULL,
        )
        base, tuned = fixtures / "base.dtc", fixtures / "finetuned.dtc"
        dc.split_files(str(base), str(tuned), str(work / "delta.dtc"))
        dc.merge_files(str(base), str(work / "delta.dtc"), str(work / "merged.dtc"))
        merged = dc.read_checkpoint(str(work / "merged.dtc"))
        original = dc.read_checkpoint(str(tuned))
        assert merged.keys() == original.keys()
        assert all(merged[k].tolist() == original[k].tolist() for k in original)

        report = json.loads(dc.compress_file(str(work / "delta.dtc"), str(work / "delta.ddq"), alpha=8.0))
        assert report["config"]["alpha"] == 8.0
        dc.decompress_file(str(work / "delta.ddq"), str(work / "restored.dtc"))
        restored = dc.read_checkpoint(str(work / "restored.dtc"))
        assert restored.keys() == original.keys()
        print("python smoke test passed")
    finally:
        shutil.rmtree(work, ignore_errors=True)


if __name__ == "__main__":
    main()
