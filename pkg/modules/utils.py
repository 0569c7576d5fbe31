# utils.py

import hashlib
import logging
import struct
from fractions import Fraction

import numpy as np


class SimulationError(Exception):
    """Base class for every error raised by the simulator."""


class ScenarioParseError(SimulationError):
    """The scenario file could not be read or is not valid JSON."""


class ScenarioValidationError(SimulationError):
    """
    A scenario failed structural or cross-field validation.

    Parameters:
    -----------
    path : str
        Dotted path of the offending field (e.g. ``universe.2.params``)
    reason : str
        Human-readable reason
    """

    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}" if path else reason)


class HeightOutOfRange(SimulationError):
    pass


class HeightExceedsSettled(SimulationError):
    pass


class EventLogFormatError(SimulationError):
    pass


class SnapshotFormatError(SimulationError):
    pass


class RngStreams:
    """
    Named random substreams for one run.

    Every stream is a Philox counter-based generator keyed by the run seed and
    a tuple of tags, e.g. ``("election", "main")`` or ``("churn",)``. Streams
    are created lazily and never share state, so drawing from one stream
    cannot shift another.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._streams = {}

    def get(self, *tags):
        key = tuple(str(t) for t in tags)
        if key not in self._streams:
            spawn_key = tuple(Utils.tag_word(t) for t in key)
            seq = np.random.SeedSequence(entropy=self.seed, spawn_key=spawn_key)
            self._streams[key] = np.random.Generator(np.random.Philox(seq))
        return self._streams[key]


class Utils:
    """
    A class with small helpers shared by every simulator module.
    """

    DIGEST_SIZE = 32

    @staticmethod
    def configure_logging(verbose=False):
        """
        Configure root logging on standard error.
        """
        logging.basicConfig(
            level=logging.DEBUG if verbose else logging.INFO,
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        )

    @staticmethod
    def as_weight(value):
        """
        Convert a JSON weight (int, float or "p/q" string) into an exact Fraction.

        Floats go through their decimal repr so that 0.1 stays 1/10.
        """
        if isinstance(value, Fraction):
            return value
        if isinstance(value, bool):
            raise ValueError("weight must be numeric")
        if isinstance(value, int):
            return Fraction(value)
        if isinstance(value, float):
            return Fraction(repr(value))
        return Fraction(str(value).strip())

    @staticmethod
    def weight_str(weight):
        return str(Fraction(weight))

    @staticmethod
    def sha256(data):
        return hashlib.sha256(data).digest()

    @staticmethod
    def tag_word(tag):
        return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:4], "little")

    # canonical little-endian length-prefixed encoding

    @staticmethod
    def lp_bytes(data):
        return struct.pack("<I", len(data)) + bytes(data)

    @staticmethod
    def lp_str(text):
        return Utils.lp_bytes(text.encode("utf-8"))

    @staticmethod
    def lp_int(value):
        return Utils.lp_bytes(struct.pack("<Q", int(value)))

    @staticmethod
    def read_lp(buffer, offset):
        """
        Read one length-prefixed field.

        Returns:
        --------
        tuple
            (payload bytes, new offset)
        """
        if offset + 4 > len(buffer):
            raise ValueError("truncated length prefix")
        (length,) = struct.unpack_from("<I", buffer, offset)
        start = offset + 4
        end = start + length
        if end > len(buffer):
            raise ValueError("truncated field")
        return bytes(buffer[start:end]), end

    @staticmethod
    def read_lp_int(buffer, offset):
        payload, offset = Utils.read_lp(buffer, offset)
        if len(payload) != 8:
            raise ValueError("integer field must be 8 bytes")
        return struct.unpack("<Q", payload)[0], offset

    @staticmethod
    def read_lp_str(buffer, offset):
        payload, offset = Utils.read_lp(buffer, offset)
        return payload.decode("utf-8"), offset
