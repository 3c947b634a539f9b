"""
Counter-based random streams.

Every random draw in the laboratory comes from a numpy Philox generator keyed
by (master seed, replica, stream). Streams are independent of each other and of
the order in which they are created, so replicas can be simulated in any batch
layout or worker count and still see the same numbers.
"""
import numpy as np


class Stream:
    """Stream ids within one replica"""
    INITIAL_WEIGHTS = 0
    DATA = 1
    AUXILIARY = 2


def stream_generator(seed: int, replica: int = 0, stream: int = Stream.DATA) -> np.random.Generator:
    """Philox generator for one (seed, replica, stream) triple"""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replica), int(stream)))
    return np.random.Generator(np.random.Philox(seq))
