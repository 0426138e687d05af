"""Tests for matrix bundles and ledger documents."""

import math
import os
import tempfile

import numpy as np
import orjson
import pytest
import zstandard as zstd
from numpy.testing import assert_array_equal

from dilatin.Modules.BundleWriter import BundleWriter, dump_bundle, ledger_document, load_bundle, write_ledger
from dilatin.Modules.ManualException import ParseError
from dilatin.Modules.Verification import ResidualLedger


class TestBundle:
    """Tests for the zstd matrix bundle."""

    def test_dump_and_load(self):
        """Test names, shapes and complex entries survive the bundle."""
        matrices = {
            "Pi": np.arange(6).reshape(3, 2) * (1 + 1j),
            "V1": np.eye(2, dtype=complex),
        }
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "nested", "bundle.zst")
            dump_bundle(matrices, path)
            loaded = load_bundle(path)

        assert list(loaded) == ["Pi", "V1"]
        assert loaded["Pi"].shape == (3, 2)
        assert_array_equal(loaded["Pi"], matrices["Pi"])

    def test_writer_counts_records(self):
        """Test the writer counts what it wrote and stores vectors as one-row matrices."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "bundle.zst")
            with BundleWriter(path) as writer:
                writer.write("x", np.array([1.0, 2.0]))
            assert writer.count == 1
            assert load_bundle(path)["x"].shape == (1, 2)

    def test_garbage_file(self):
        """Test a file that is not zstd raises ParseError."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "bundle.zst")
            with open(path, "wb") as f:
                f.write(b"not a bundle")
            with pytest.raises(ParseError):
                load_bundle(path)

    def test_malformed_record(self):
        """Test a record without its shape raises ParseError."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "bundle.zst")
            with open(path, "wb") as f:
                f.write(zstd.ZstdCompressor().compress(b'{"name": "x", "re": [1], "im": [0]}\n'))
            with pytest.raises(ParseError):
                load_bundle(path)

    def test_missing_file(self):
        """Test a missing path raises ParseError."""
        with pytest.raises(ParseError):
            load_bundle("/nonexistent/bundle.zst")


class TestLedgerDocument:
    """Tests for the ledger JSON document."""

    def test_document_keys(self):
        """Test the document carries command, config, pass, extras and entries."""
        ledger = ResidualLedger()
        ledger.add("check", "anchor", 0.1, 1.0)
        document = ledger_document("dilate", {"degree": 12}, ledger, order=[1, 2, 3])
        assert list(document) == ["command", "config", "pass", "order", "entries"]
        assert document["pass"] is True
        assert document["entries"][0]["name"] == "check"

    def test_write_ledger(self):
        """Test the file is valid JSON with null for informational tolerances."""
        ledger = ResidualLedger()
        ledger.add("info", "anchor", 3.0, math.inf)
        ledger.add("bad", "anchor", 1.0, 1e-8)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "out", "ledger.json")
            write_ledger(path, "vn", {}, ledger, margins=np.array([0.5, -1.0]))
            with open(path, "rb") as f:
                document = orjson.loads(f.read())

        assert document["pass"] is False
        assert document["margins"] == [0.5, -1.0]
        assert document["entries"][0]["tol"] is None
        assert document["entries"][1]["pass"] is False
