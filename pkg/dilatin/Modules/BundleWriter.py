"""Ledger JSON and zstd matrix bundles."""

import os

import numpy as np
import orjson
import zstandard as zstd
from loguru import logger

from dilatin.Modules.ManualException import ParseError
from dilatin.Modules.Verification import ResidualLedger


class BundleWriter:
    """Streams named matrices into a zstd-compressed file of orjson lines."""

    def __init__(self, path: str):
        self.path = path
        self.count = 0

        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        self.compressor = zstd.ZstdCompressor(level=3)
        self.handle = open(path, "wb")
        self.compressed_writer = self.compressor.stream_writer(self.handle)

    def write(self, name: str, matrix: np.ndarray):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=np.complex128))
        record = {
            "name": name,
            "shape": list(matrix.shape),
            "re": matrix.real.ravel().tolist(),
            "im": matrix.imag.ravel().tolist(),
        }
        self.compressed_writer.write(orjson.dumps(record) + b"\n")
        self.count += 1

    def close(self):
        self.compressed_writer.close()
        if not self.handle.closed:
            self.handle.close()
        logger.info(f"Wrote {self.count} matrices to {self.path}")

    def __enter__(self):
        return self

    def __exit__(self, *_):
        self.close()


def dump_bundle(matrices: dict[str, np.ndarray], path: str):
    with BundleWriter(path) as writer:
        for name, matrix in matrices.items():
            writer.write(name, matrix)


def load_bundle(path: str) -> dict[str, np.ndarray]:
    try:
        decompressor = zstd.ZstdDecompressor()
        with open(path, "rb") as f:
            with decompressor.stream_reader(f) as reader:
                decompressed_data = reader.read()
    except (OSError, zstd.ZstdError) as e:
        raise ParseError(f"Cannot read matrix bundle: {e}", path=path) from e

    matrices = {}
    for line in decompressed_data.decode("utf-8").strip().split("\n"):
        if not line:
            continue
        try:
            record = orjson.loads(line)
            shape = tuple(record["shape"])
            re = np.asarray(record["re"], dtype=float)
            im = np.asarray(record["im"], dtype=float)
            matrices[record["name"]] = (re + 1j * im).reshape(shape)
        except (orjson.JSONDecodeError, KeyError, ValueError) as e:
            raise ParseError(f"Malformed bundle record: {e}", path=path) from e

    logger.debug(f"Loaded {len(matrices)} matrices from {path}")

    return matrices


def ledger_document(command: str, config: dict, ledger: ResidualLedger, **extra) -> dict:
    return {"command": command, "config": config, "pass": ledger.passed, **extra, "entries": ledger.to_list()}


def write_ledger(path: str, command: str, config: dict, ledger: ResidualLedger, **extra):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    document = ledger_document(command, config, ledger, **extra)
    with open(path, "wb") as f:
        f.write(orjson.dumps(document, option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY))

    logger.info(f"Wrote {len(ledger.entries)} ledger entries to {path}")
